#include "dpgrid/powerflow.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "dpgrid/loadmodel.hpp"

namespace dpgrid {

void PowerFlowConfig::validate() const {
  if (!(tol > 0.0)) throw InputError("tolerance must be positive");
  if (max_iter < 1) throw InputError("max_iter must be >= 1");
  if (!(damping > 0.0) || damping > 1.0) throw InputError("damping must lie in (0, 1]");
}

std::vector<int> InjectionSpec::effective_load_buses() const {
  if (!load_buses.empty()) return load_buses;
  std::vector<int> out;
  for (int k = 0; k < n(); ++k)
    if (pv_capacity(k) <= 0.0) out.push_back(k);
  return out;
}

bool InjectionSpec::has_voltvar() const {
  for (int k = 0; k < n(); ++k)
    if (pv_capacity(k) > 0.0 && k < static_cast<int>(voltvar.size()) && voltvar[k]) return true;
  return false;
}

VecC InjectionSpec::generation(const VecC& v) const {
  VecC gen = VecC::Zero(n());
  for (int k = 0; k < n(); ++k) {
    if (pv_capacity(k) <= 0.0) continue;
    double angle = 0.0;
    if (k < static_cast<int>(voltvar.size()) && voltvar[k]) angle = voltvar[k]->angle(std::abs(v(k)));
    gen(k) = pv_injection(pv_capacity(k), irradiance, angle);
  }
  return gen;
}

VecC InjectionSpec::load() const {
  VecC out(n());
  for (int k = 0; k < n(); ++k) out(k) = Complex(active_load(k), power_factor_tan(k) * active_load(k));
  return out;
}

InjectionSpec InjectionModel::at(const VecD& load_per_load_bus, double irradiance) const {
  if (load_per_load_bus.size() != n_load()) throw InputError("load vector does not match load buses");
  InjectionSpec spec;
  spec.active_load = VecD::Zero(n());
  for (int i = 0; i < n_load(); ++i) spec.active_load(load_buses[i]) = load_per_load_bus(i);
  spec.power_factor_tan = power_factor_tan;
  spec.pv_capacity = pv_capacity;
  spec.irradiance = irradiance;
  spec.voltvar = voltvar;
  spec.load_buses = load_buses;
  return spec;
}

InjectionModel injection_model(const NetworkModel& network, const KronReduction& red) {
  InjectionModel model;
  const int n = red.n();
  model.power_factor_tan = VecD::Zero(n);
  model.pv_capacity = VecD::Zero(n);
  model.voltvar.resize(n);
  for (int i = 0; i < n; ++i) {
    const Bus* bus = network.find_bus(red.retained_ids[i]);
    if (!bus) throw InputError("retained bus missing from network: " + red.retained_ids[i]);
    if (bus->kind == BusKind::Load) {
      model.power_factor_tan(i) = std::tan(bus->power_factor_deg * kPi / 180.0);
      model.load_buses.push_back(i);
    } else if (bus->kind == BusKind::Pv) {
      model.pv_capacity(i) = bus->gamma;
      model.voltvar[i] = bus->voltvar;
      model.pv_buses.push_back(i);
    }
  }
  return model;
}

VecC evaluate_injection(const KronReduction& red, const VecC& v) {
  return v.cwiseProduct((red.y_reduced * v + red.b).conjugate());
}

VecD implied_active_load(const KronReduction& red, const VecC& v, const InjectionSpec& spec) {
  return spec.generation(v).real() - evaluate_injection(red, v).real();
}

MatD real_representation(const MatC& a, const MatC& b) {
  const int n = static_cast<int>(a.rows());
  MatD out(2 * n, 2 * n);
  out.topLeftCorner(n, n) = (a + b).real();
  out.topRightCorner(n, n) = (b - a).imag();
  out.bottomLeftCorner(n, n) = (a + b).imag();
  out.bottomRightCorner(n, n) = (a - b).real();
  return out;
}

namespace {

/// Wirtinger blocks of the pv generation map: dg_dv(k) = ds^g_k/dv_k,
/// dg_dvbar(k) = ds^g_k/dvbar_k. Diagonal because each inverter couples only
/// to its own bus voltage.
void generation_derivatives(const InjectionSpec& spec, const VecC& v, VecC& dg_dv, VecC& dg_dvbar) {
  const int n = spec.n();
  dg_dv = VecC::Zero(n);
  dg_dvbar = VecC::Zero(n);
  for (int k = 0; k < n; ++k) {
    if (spec.pv_capacity(k) <= 0.0) continue;
    if (k >= static_cast<int>(spec.voltvar.size()) || !spec.voltvar[k]) continue;
    const double vmag = std::abs(v(k));
    if (vmag <= 0.0) continue;
    const double slope = spec.voltvar[k]->slope(vmag);
    if (slope == 0.0) continue;
    const Complex value = pv_injection(spec.pv_capacity(k), spec.irradiance,
                                       spec.voltvar[k]->angle(vmag));
    const Complex j_phi(0.0, slope);
    dg_dv(k) = value * j_phi * std::conj(v(k)) / (2.0 * vmag);
    dg_dvbar(k) = value * j_phi * v(k) / (2.0 * vmag);
  }
}

}  // namespace

WirtingerJacobian wirtinger_jacobian(const KronReduction& red, const VecC& v) {
  const int n = red.n();
  const VecC s = evaluate_injection(red, v);
  WirtingerJacobian jac;
  jac.m_tilde = MatC::Zero(2 * n, 2 * n);
  jac.m_tilde.topLeftCorner(n, n) = (s.array() / v.array().square()).matrix().asDiagonal();
  jac.m_tilde.topRightCorner(n, n) = red.y_reduced.conjugate();
  jac.m_tilde.bottomLeftCorner(n, n) = red.y_reduced;
  jac.m_tilde.bottomRightCorner(n, n) =
      (s.conjugate().array() / v.conjugate().array().square()).matrix().asDiagonal();
  jac.d_diag.resize(2 * n);
  jac.d_diag.head(n) = v;
  jac.d_diag.tail(n) = v.conjugate();
  jac.effective = false;
  return jac;
}

WirtingerJacobian wirtinger_jacobian(const KronReduction& red, const VecC& v,
                                     const InjectionSpec& spec) {
  WirtingerJacobian jac = wirtinger_jacobian(red, v);
  if (!spec.has_voltvar()) return jac;
  const int n = red.n();
  VecC dg_dv, dg_dvbar;
  generation_derivatives(spec, v, dg_dv, dg_dvbar);
  // M~_eff = M~ - D(v)^{-1} J_{Gamma h}.
  for (int k = 0; k < n; ++k) {
    jac.m_tilde(k, k) -= dg_dv(k) / v(k);
    jac.m_tilde(k, n + k) -= dg_dvbar(k) / v(k);
    jac.m_tilde(n + k, k) -= std::conj(dg_dvbar(k)) / std::conj(v(k));
    jac.m_tilde(n + k, n + k) -= std::conj(dg_dv(k)) / std::conj(v(k));
  }
  jac.effective = true;
  return jac;
}

MatD real_jacobian(const KronReduction& red, const VecC& v, const InjectionSpec& spec) {
  const int n = red.n();
  const VecC s = evaluate_injection(red, v);
  MatC a = MatC::Zero(n, n);
  a.diagonal() = (s.array() / v.array()).matrix();
  MatC b = v.asDiagonal() * red.y_reduced.conjugate();
  if (spec.has_voltvar()) {
    VecC dg_dv, dg_dvbar;
    generation_derivatives(spec, v, dg_dv, dg_dvbar);
    a.diagonal() -= dg_dv;
    b.diagonal() -= dg_dvbar;
  }
  return real_representation(a, b);
}

double m_tilde_inverse_norm(const WirtingerJacobian& jac) {
  Eigen::JacobiSVD<MatC> svd(jac.m_tilde);
  const double sigma_min = svd.singularValues().tail(1)(0);
  if (sigma_min <= 0.0) throw NumericalError("normalized Jacobian is singular");
  return 1.0 / sigma_min;
}

namespace {

VecC no_load_voltage(const KronReduction& red) {
  Eigen::FullPivLU<MatC> lu(red.y_reduced);
  if (!lu.isInvertible()) throw NumericalError("reduced admittance is singular at the no-load point");
  return lu.solve(-red.b.eval());
}

double residual_norm(const VecC& residual) { return residual.cwiseAbs().maxCoeff(); }

VecC residual_at(const KronReduction& red, const InjectionSpec& spec, const VecC& v) {
  return evaluate_injection(red, v) - (spec.generation(v) - spec.load());
}

}  // namespace

VoltageSolution solve_powerflow(const KronReduction& red, const InjectionSpec& spec,
                                const PowerFlowConfig& cfg, double v_min, double v_max) {
  cfg.validate();
  const int n = red.n();
  if (spec.n() != n) throw InputError("injection spec does not match network size");

  VoltageSolution sol;
  sol.v = cfg.init == PowerFlowConfig::Init::Flat ? VecC::Ones(n).eval() : no_load_voltage(red);
  VecC residual = residual_at(red, spec, sol.v);
  sol.residual = residual_norm(residual);

  for (int iter = 0; iter < cfg.max_iter && sol.residual > cfg.tol; ++iter) {
    sol.iterations = iter + 1;
    const MatD jac = real_jacobian(red, sol.v, spec);
    Eigen::FullPivLU<MatD> lu(jac);
    if (!lu.isInvertible()) {
      sol.jacobian_singular = true;  // at or beyond the voltage stability limit
      break;
    }
    VecD rhs(2 * n);
    rhs.head(n) = residual.real();
    rhs.tail(n) = residual.imag();
    const VecD step = lu.solve(-rhs);

    double scale = cfg.damping;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      VecC candidate = sol.v;
      candidate.real() += scale * step.head(n);
      candidate.imag() += scale * step.tail(n);
      if ((candidate.cwiseAbs().array() > 1e-9).all()) {
        const VecC candidate_residual = residual_at(red, spec, candidate);
        const double norm = residual_norm(candidate_residual);
        if (std::isfinite(norm) && norm < sol.residual) {
          sol.v = candidate;
          residual = candidate_residual;
          sol.residual = norm;
          accepted = true;
          break;
        }
      }
      scale *= 0.5;
    }
    if (!accepted) break;  // line search stalled
  }

  sol.converged = sol.residual <= cfg.tol;
  sol.in_good_set = (sol.v.cwiseAbs().array() >= v_min).all() &&
                    (sol.v.cwiseAbs().array() <= v_max).all();
  return sol;
}

double log_volume_factor(const KronReduction& red, const VecC& v, const InjectionSpec& spec) {
  const int n = red.n();
  const std::vector<int> load_buses = spec.effective_load_buses();
  const int n_load = static_cast<int>(load_buses.size());
  if (n_load == 0) return 0.0;

  const MatD jac = real_jacobian(red, v, spec);
  Eigen::FullPivLU<MatD> lu(jac);
  if (!lu.isInvertible()) throw NumericalError("effective Jacobian singular in volume factor");
  MatD rhs = MatD::Zero(2 * n, n_load);
  for (int c = 0; c < n_load; ++c) {
    rhs(load_buses[c], c) = 1.0;
    rhs(n + load_buses[c], c) = spec.power_factor_tan(load_buses[c]);
  }
  const MatD dg = -lu.solve(rhs);
  Eigen::HouseholderQR<MatD> qr(dg);
  double log_det = 0.0;
  for (int c = 0; c < n_load; ++c) {
    const double r_cc = std::abs(qr.matrixQR()(c, c));
    if (!(r_cc > 0.0) || !std::isfinite(r_cc))
      throw NumericalError("surface Jacobian rank-deficient in volume factor");
    log_det += std::log(r_cc);
  }
  return log_det;
}

double volume_factor(const KronReduction& red, const VecC& v, const InjectionSpec& spec) {
  return std::exp(log_volume_factor(red, v, spec));
}

FeasibilityAudit feasibility_audit(const KronReduction& red, const InjectionModel& inj,
                                   const FeederLoadModel& loads, double h_max,
                                   const FeasibilityAuditConfig& cfg) {
  const int n = red.n();
  FeasibilityAudit audit;
  audit.samples = cfg.n_samples;
  audit.envelope_fraction.assign(loads.classes.size(), 0.0);

  // (iii) IEEE 1547-style slope condition per pv bus.
  for (int k : inj.pv_buses) {
    if (!(inj.pv_capacity(k) > 0.0) || h_max <= 0.0) continue;
    if (k >= static_cast<int>(inj.voltvar.size()) || !inj.voltvar[k]) continue;
    const double slope = inj.voltvar[k]->max_abs_slope(cfg.v_min, cfg.v_max);
    if (slope >= 1.0 / (inj.pv_capacity(k) * h_max)) {
      audit.voltvar_compliant = false;
      audit.voltvar_violations.push_back(red.retained_ids[k]);
    }
  }

  // Class membership of each load bus, via the model's member lists.
  std::vector<int> class_of_bus(n, -1);
  for (int k : inj.load_buses) class_of_bus[k] = loads.class_of(red.retained_ids[k]);

  Rng rng(cfg.seed);
  double min_sigma = std::numeric_limits<double>::infinity();
  std::vector<int> inside(loads.classes.size(), 0);
  std::vector<int> counted(loads.classes.size(), 0);
  for (int sample = 0; sample < cfg.n_samples; ++sample) {
    Rng draw = rng.substream(sample);
    VecC v(n);
    for (int k = 0; k < n; ++k) {
      const double magnitude = draw.uniform(cfg.v_min, cfg.v_max);
      const double angle = draw.uniform(-cfg.max_angle_rad, cfg.max_angle_rad);
      v(k) = std::polar(magnitude, angle);
    }
    const double irradiance = h_max > 0.0 ? draw.uniform(0.0, h_max) : 0.0;
    const InjectionSpec spec = inj.at(VecD::Zero(inj.n_load()), irradiance);

    Eigen::JacobiSVD<MatD> svd(real_jacobian(red, v, spec));
    min_sigma = std::min(min_sigma, svd.singularValues().tail(1)(0));

    const VecD implied = implied_active_load(red, v, spec);
    std::vector<bool> class_ok(loads.classes.size(), true);
    for (int k : inj.load_buses) {
      const int cls = class_of_bus[k];
      if (cls < 0) continue;
      const auto& model = loads.classes[cls];
      // p_min <= 0 with an infinite p_max marks an unconstrained envelope.
      if (model.p_min <= 0.0 && std::isinf(model.p_max)) continue;
      if (implied(k) < model.p_min || implied(k) > model.p_max) class_ok[cls] = false;
    }
    for (std::size_t cls = 0; cls < loads.classes.size(); ++cls) {
      ++counted[cls];
      if (class_ok[cls]) ++inside[cls];
    }
  }
  audit.min_sigma_min_jacobian = cfg.n_samples > 0 ? min_sigma : 0.0;
  for (std::size_t cls = 0; cls < loads.classes.size(); ++cls)
    audit.envelope_fraction[cls] =
        counted[cls] > 0 ? static_cast<double>(inside[cls]) / counted[cls] : 0.0;
  return audit;
}

}  // namespace dpgrid
