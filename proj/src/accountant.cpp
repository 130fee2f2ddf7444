#include "dpgrid/accountant.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

namespace dpgrid {

void AdjacencyParams::validate() const {
  if (r < 0.0) throw InputError("adjacency radius must be >= 0");
  if (!(delta > 0.0) || !(delta < 1.0)) throw InputError("delta must lie in (0, 1)");
}

double sensitivity_d(double v_max, int d_max, double p_min_ell) {
  if (!(p_min_ell > 0.0))
    throw InputError("p_min must be positive: the entrywise sensitivity is unbounded otherwise");
  if (d_max < 0) throw InputError("negative degree");
  return v_max * v_max * std::sqrt(static_cast<double>(d_max)) / p_min_ell;
}

double precision_sum(const MatD& sigma_t) {
  Eigen::SelfAdjointEigenSolver<MatD> eigen(sigma_t);
  const double lambda_min = eigen.eigenvalues().minCoeff();
  const double lambda_max = eigen.eigenvalues().maxCoeff();
  if (!(lambda_min > 0.0) || lambda_max / lambda_min > 1e12)
    throw NumericalError("covariance is near-singular; precision sum unreliable");
  const MatD inverse = eigen.eigenvectors() *
                       eigen.eigenvalues().cwiseInverse().asDiagonal() *
                       eigen.eigenvectors().transpose();
  return inverse.cwiseAbs().sum();
}

double psi_bar(double kappa, double r, const std::vector<std::pair<double, double>>& classes) {
  double sum = 0.0;
  for (const auto& [d_ell, gamma_ell] : classes) {
    if (d_ell < 0.0 || gamma_ell < 0.0) throw InputError("negative class constant");
    sum += d_ell * d_ell * gamma_ell;
  }
  return kappa * r * std::sqrt(sum);
}

double chi2_tail_tau(int n, int horizon, double delta) {
  if (n < 1 || horizon < 1) throw InputError("tau requires n, T >= 1");
  if (!(delta > 0.0) || !(delta < 1.0)) throw InputError("delta must lie in (0, 1)");
  const double dim = static_cast<double>(n) * horizon;
  const double log_term = std::log(1.0 / delta);
  return std::sqrt(dim + 2.0 * std::sqrt(dim * log_term) + 2.0 * log_term);
}

double term1_bound(double psi, double tau, double kappa, double r,
                   const std::vector<ClassBound>& classes) {
  double beta_bias = 0.0;
  for (const auto& cls : classes)
    beta_bias += cls.d_ell * std::sqrt(cls.gamma_ell * cls.members) * std::sqrt(cls.one_sigma_one);
  return psi * tau + 0.5 * psi * psi + kappa * r * beta_bias;
}

double c_star(int n, double v_min, double v_max) {
  if (!(v_min > 0.0) || !(v_min <= v_max)) throw InputError("requires 0 < v_min <= v_max");
  return std::sqrt(2.0) * (1.0 + std::sqrt(static_cast<double>(n)) * v_max / v_min);
}

double alpha_param(double m_tilde_star, int n, double v_min, double v_max, double kappa,
                   double r) {
  if (!(m_tilde_star >= 0.0)) throw InputError("negative Jacobian norm bound");
  return m_tilde_star * c_star(n, v_min, v_max) * kappa * r;
}

double term2_bound(double alpha, int n, int horizon) {
  if (alpha < 0.0) throw InputError("negative alpha");
  if (alpha >= 0.25)
    throw InadmissibleError("admissibility condition alpha < 1/4 violated: alpha = " +
                            format_double(alpha));
  return horizon * std::sqrt(static_cast<double>(n)) * alpha * (2.0 + alpha) /
         (2.0 * (1.0 - 4.0 * alpha));
}

std::vector<ClassBound> class_bounds(const FeederLoadModel& model, int d_max, double v_max) {
  std::vector<ClassBound> bounds;
  for (const auto& cls : model.classes) {
    ClassBound bound;
    bound.class_id = cls.class_id;
    bound.members = static_cast<int>(cls.member_bus_ids.size());
    bound.p_min = cls.p_min;
    bound.d_ell = sensitivity_d(v_max, d_max, cls.p_min);
    bound.gamma_ell = precision_sum(cls.sigma_t);
    bound.one_sigma_one = cls.sigma_t.sum();
    bounds.push_back(bound);
  }
  return bounds;
}

PrivacyReport epsilon_total(const AdjacencyParams& params, const NetworkStats& stats,
                            double v_min, double v_max, double kappa,
                            const FeederLoadModel& model, double m_tilde_star,
                            MStarProvenance provenance, int n, int horizon, double delta_m) {
  params.validate();
  PrivacyReport report;
  report.delta = params.delta;
  report.delta_m = delta_m;
  report.delta_total = params.delta + delta_m;
  report.kappa = kappa;
  report.r = params.r;
  report.v_min = v_min;
  report.v_max = v_max;
  report.n = n;
  report.horizon = horizon;
  report.d_max = stats.d_max;
  report.m_tilde_star = m_tilde_star;
  report.provenance = provenance;
  report.c_star = c_star(n, v_min, v_max);

  report.classes = class_bounds(model, stats.d_max, v_max);
  std::vector<std::pair<double, double>> dg;
  for (const auto& cls : report.classes) dg.emplace_back(cls.d_ell, cls.gamma_ell);
  report.psi_bar = psi_bar(kappa, params.r, dg);
  report.tau = chi2_tail_tau(n, horizon, params.delta);
  report.alpha = alpha_param(m_tilde_star, n, v_min, v_max, kappa, params.r);
  report.admissible = report.alpha < 0.25;
  if (!report.admissible)
    throw InadmissibleError("alpha = " + format_double(report.alpha) + " >= 1/4");
  report.lambda_bar_ii = term2_bound(report.alpha, n, horizon);

  double beta_bias = 0.0;
  for (auto& cls : report.classes) {
    cls.bias_contribution = kappa * params.r * cls.d_ell *
                            std::sqrt(cls.gamma_ell * cls.members) * std::sqrt(cls.one_sigma_one);
    beta_bias += cls.bias_contribution;
  }
  report.total_bias = report.lambda_bar_ii + 0.5 * report.psi_bar * report.psi_bar + beta_bias;
  report.epsilon = report.total_bias + report.psi_bar * report.tau;
  return report;
}

double voltvar_constant(const InjectionModel& inj, double h_max, double v_min, double v_max) {
  if (h_max < 0.0) throw InputError("negative peak irradiance");
  double worst = 0.0;
  for (int k : inj.pv_buses) {
    if (k >= static_cast<int>(inj.voltvar.size()) || !inj.voltvar[k]) continue;
    worst = std::max(worst, inj.pv_capacity(k) * inj.voltvar[k]->max_abs_slope(v_min, v_max));
  }
  return h_max * worst / v_min;
}

double m_tilde_closed_form(const NetworkStats& stats, double v_min, double v_max, int n,
                           double kappa, double r, double c_vv) {
  const double sigma_m = stats.sigma_min_y - stats.flat_mismatch;
  const double c3 = (stats.row_sum_norm + stats.flat_mismatch) / v_min;
  const double delta_inf = std::max(v_max - 1.0, 1.0 - v_min);
  const double denominator = sigma_m - c3 * delta_inf - c_vv - c_star(n, v_min, v_max) * kappa * r;
  if (!(denominator > 0.0))
    throw NumericalError(
        "closed-form normalized-Jacobian bound has nonpositive denominator (" +
        format_double(denominator) + "); use Monte Carlo calibration instead");
  return 1.0 / denominator;
}

double binomial_cdf(int k, int n, double p) {
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  if (p <= 0.0) return 1.0;
  if (p >= 1.0) return 0.0;
  // Accumulate pmf values in log space to dodge underflow at large n.
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  double max_log = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(k + 1);
  for (int i = 0; i <= k; ++i) {
    logs[i] = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
              i * log_p + (n - i) * log_q;
    max_log = std::max(max_log, logs[i]);
  }
  double sum = 0.0;
  for (int i = 0; i <= k; ++i) sum += std::exp(logs[i] - max_log);
  return std::min(1.0, std::exp(max_log) * sum);
}

double clopper_pearson_upper(int successes, int trials, double confidence) {
  if (trials < 1) throw InputError("need at least one trial");
  if (successes < 0 || successes > trials) throw InputError("successes outside [0, trials]");
  if (!(confidence > 0.0) || !(confidence < 1.0)) throw InputError("confidence must lie in (0,1)");
  if (successes == trials) return 1.0;
  const double target = 1.0 - confidence;
  // P(X <= k | p) is decreasing in p; find p with tail probability = 1 - c.
  double lo = static_cast<double>(successes) / trials;
  double hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_cdf(successes, trials, mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

struct TrajectoryCounters {
  int exceeding_trajectories = 0;
  int exceeding_steps = 0;
  int solver_failures = 0;
};

/// Samples one full-horizon load trajectory for all load buses, indexed in
/// reduced order. Row layout matches inj.load_buses.
MatD sample_load_trajectory(const std::vector<TruncatedSampler>& samplers,
                            const std::vector<int>& class_of_load_bus, int n_load, int horizon,
                            const Rng& rng) {
  MatD loads(n_load, horizon);
  for (int i = 0; i < n_load; ++i) {
    Rng bus_rng = rng.substream(i);
    loads.row(i) = samplers[class_of_load_bus[i]].draw_log(bus_rng).array().exp();
  }
  return loads;
}

std::vector<int> map_load_buses_to_classes(const KronReduction& red, const InjectionModel& inj,
                                           const FeederLoadModel& model) {
  std::vector<int> mapping;
  for (int k : inj.load_buses) {
    const int cls = model.class_of(red.retained_ids[k]);
    if (cls < 0)
      throw InputError("load bus " + red.retained_ids[k] + " is missing from the load model");
    mapping.push_back(cls);
  }
  return mapping;
}

}  // namespace

CalibrationResult mc_calibrate(const KronReduction& red, const InjectionModel& inj,
                               const FeederLoadModel& model, const VecD& irradiance,
                               const AdjacencyParams& params, double kappa, double v_min,
                               double v_max, const McCalibrateConfig& cfg, const Rng& rng) {
  params.validate();
  if (!(cfg.mu0 > 0.0)) throw InputError("mu0 must be positive");
  if (cfg.trajectories < 1) throw InputError("need at least one calibration trajectory");
  const int horizon = model.horizon();
  if (irradiance.size() != horizon) throw InputError("irradiance length must match the horizon");

  CalibrationResult result;
  result.mu0 = cfg.mu0;
  result.confidence = cfg.confidence;
  result.trials = cfg.trajectories;
  const double shift = cfg.mu0 * c_star(red.n(), v_min, v_max) * kappa * params.r;
  result.mu0_prime = cfg.mu0 / (1.0 + shift);

  const std::vector<int> class_of_load_bus = map_load_buses_to_classes(red, inj, model);
  std::vector<TruncatedSampler> samplers;
  samplers.reserve(model.classes.size());
  for (std::size_t c = 0; c < model.classes.size(); ++c)
    samplers.emplace_back(model.classes[c], rng.substream(0xBEEF00 + c));

  const int n_load = inj.n_load();
  auto run_trajectory = [&](int traj) {
    TrajectoryCounters counters;
    const MatD loads = sample_load_trajectory(samplers, class_of_load_bus, n_load, horizon,
                                              rng.substream(traj));
    bool exceeded = false;
    for (int t = 0; t < horizon; ++t) {
      const InjectionSpec spec = inj.at(loads.col(t), irradiance(t));
      const VoltageSolution sol = solve_powerflow(red, spec, cfg.powerflow, v_min, v_max);
      if (!sol.converged) {
        // Conservative: a failed solve counts as an exceedance.
        ++counters.solver_failures;
        exceeded = true;
        continue;
      }
      const double norm = m_tilde_inverse_norm(wirtinger_jacobian(red, sol.v, spec));
      if (norm > result.mu0_prime) {
        ++counters.exceeding_steps;
        exceeded = true;
      }
    }
    if (exceeded) counters.exceeding_trajectories = 1;
    return counters;
  };

  // Trajectories are independent; fan out in chunks and reduce counts.
  const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::future<TrajectoryCounters>> futures;
  std::atomic<int> next{0};
  auto worker = [&]() {
    TrajectoryCounters local;
    for (int traj = next.fetch_add(1); traj < cfg.trajectories; traj = next.fetch_add(1)) {
      const TrajectoryCounters counters = run_trajectory(traj);
      local.exceeding_trajectories += counters.exceeding_trajectories;
      local.exceeding_steps += counters.exceeding_steps;
      local.solver_failures += counters.solver_failures;
    }
    return local;
  };
  for (unsigned t = 0; t < n_threads; ++t)
    futures.push_back(std::async(std::launch::async, worker));
  for (auto& future : futures) {
    const TrajectoryCounters counters = future.get();
    result.exceedances += counters.exceeding_trajectories;
    result.step_exceedances += counters.exceeding_steps;
    result.solver_failures += counters.solver_failures;
  }

  result.delta_m_upper = clopper_pearson_upper(result.exceedances, result.trials, cfg.confidence);
  return result;
}

KronReduction with_admittance(const KronReduction& red, const MatC& y_new) {
  if (y_new.rows() != red.y_reduced.rows() || y_new.cols() != red.y_reduced.cols())
    throw InputError("perturbed admittance has wrong dimensions");
  KronReduction out = red;
  out.y_reduced = y_new;
  return out;
}

std::pair<double, double> empirical_llr(const KronReduction& red_y,
                                        const KronReduction& red_yprime,
                                        const std::vector<VecC>& trajectory,
                                        const InjectionModel& inj, const FeederLoadModel& model,
                                        const VecD& irradiance) {
  const int horizon = static_cast<int>(trajectory.size());
  if (horizon == 0) throw InputError("empty trajectory");
  if (irradiance.size() < horizon) throw InputError("irradiance shorter than the trajectory");
  if (model.horizon() != horizon)
    throw InputError("load model horizon does not match the trajectory");
  const std::vector<int> class_of_load_bus = map_load_buses_to_classes(red_y, inj, model);
  const int n_load = inj.n_load();

  // Implied log-loads per load bus over the horizon, under both matrices.
  MatD xi(n_load, horizon), xi_prime(n_load, horizon);
  double term2 = 0.0;
  for (int t = 0; t < horizon; ++t) {
    const InjectionSpec spec = inj.at(VecD::Zero(n_load), irradiance(t));
    const VecD implied = implied_active_load(red_y, trajectory[t], spec);
    const VecD implied_prime = implied_active_load(red_yprime, trajectory[t], spec);
    for (int i = 0; i < n_load; ++i) {
      const int k = inj.load_buses[i];
      if (!(implied(k) > 0.0) || !(implied_prime(k) > 0.0))
        throw NumericalError(
            "implied load nonpositive at bus " + red_y.retained_ids[k] +
            "; the perturbed admittance violates the loading envelope");
      xi(i, t) = std::log(implied(k));
      xi_prime(i, t) = std::log(implied_prime(k));
    }
    term2 += log_volume_factor(red_y, trajectory[t], spec) -
             log_volume_factor(red_yprime, trajectory[t], spec);
  }

  // Midpoint formula per bus: Delta' Sigma^-1 (mu - Sigma 1 - xi_mid).
  double term1 = 0.0;
  std::vector<Eigen::LLT<MatD>> factorizations;
  for (const auto& cls : model.classes) factorizations.emplace_back(cls.sigma_t);
  for (int i = 0; i < n_load; ++i) {
    const auto& cls = model.classes[class_of_load_bus[i]];
    const auto& llt = factorizations[class_of_load_bus[i]];
    const VecD delta = (xi.row(i) - xi_prime.row(i)).transpose();
    const VecD midpoint = 0.5 * (xi.row(i) + xi_prime.row(i)).transpose();
    const VecD target = cls.mu - cls.sigma_t * VecD::Ones(horizon) - midpoint;
    term1 += delta.dot(llt.solve(target));
  }
  return {term1, term2};
}

MatC construct_adjacent_y(const KronReduction& red, const InjectionModel& inj,
                          const std::vector<VecC>& v_samples, double r, double kappa, Rng& rng) {
  if (!(r > 0.0)) throw InputError("adjacency radius must be positive");
  if (v_samples.empty()) throw InputError("need at least one voltage sample");
  const int n = red.n();
  // Unknowns: complex symmetric Delta Y, entries (p <= q), two reals each.
  std::vector<std::pair<int, int>> entries;
  for (int p = 0; p < n; ++p)
    for (int q = p; q < n; ++q) entries.emplace_back(p, q);
  const int dim = 2 * static_cast<int>(entries.size());

  std::vector<bool> is_load(n, false);
  for (int k : inj.load_buses) is_load[k] = true;
  int rows_per_sample = 0;
  for (int k = 0; k < n; ++k) rows_per_sample += is_load[k] ? 1 : 2;

  // The per-bus delta injection under Delta Y is c_k = v_k conj((Delta Y v)_k),
  // linear in the entries. Load buses constrain Im c_k = tan(theta_k) Re c_k;
  // other retained buses need c_k = 0 to keep their implied load at zero.
  MatD constraints = MatD::Zero(rows_per_sample * static_cast<int>(v_samples.size()), dim);
  int row = 0;
  for (const VecC& v : v_samples) {
    if (v.size() != n) throw InputError("voltage sample has wrong dimension");
    for (int k = 0; k < n; ++k) {
      const int re_row = row;
      const int im_row = is_load[k] ? row : row + 1;
      for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto& [p, q] = entries[e];
        Complex w(0.0, 0.0);
        if (k == p) w += v(k) * std::conj(v(q));
        if (k == q && p != q) w += v(k) * std::conj(v(p));
        if (w == Complex(0.0, 0.0)) continue;
        const double re_a = w.real(), im_a = w.imag();    // d Re c / d a, d Im c... see below
        // Re c += a Re w + b Im w ; Im c += a Im w - b Re w.
        if (is_load[k]) {
          const double tan_theta = inj.power_factor_tan(k);
          constraints(re_row, 2 * e) += im_a - tan_theta * re_a;
          constraints(re_row, 2 * e + 1) += -re_a - tan_theta * im_a;
        } else {
          constraints(re_row, 2 * e) += re_a;
          constraints(re_row, 2 * e + 1) += im_a;
          constraints(im_row, 2 * e) += im_a;
          constraints(im_row, 2 * e + 1) += -re_a;
        }
      }
      row += is_load[k] ? 1 : 2;
    }
  }

  Eigen::JacobiSVD<MatD> svd(constraints, Eigen::ComputeFullV);
  const double sigma_max = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  std::vector<int> null_columns;
  for (int c = 0; c < dim; ++c) {
    const double sigma = c < svd.singularValues().size() ? svd.singularValues()(c) : 0.0;
    if (sigma < 1e-8 * std::max(sigma_max, 1e-300)) null_columns.push_back(c);
  }
  if (null_columns.empty())
    throw NumericalError("empty numerical null space of the consistency constraints");

  VecD direction = VecD::Zero(dim);
  for (int attempt = 0; attempt < 16 && direction.norm() < 1e-12; ++attempt) {
    VecD gaussian(dim);
    for (int i = 0; i < dim; ++i) gaussian(i) = rng.normal();
    direction.setZero();
    for (int c : null_columns)
      direction += svd.matrixV().col(c) * svd.matrixV().col(c).dot(gaussian);
  }
  if (direction.norm() < 1e-12)
    throw NumericalError("could not draw a nonzero null-space direction");

  MatC delta_y = MatC::Zero(n, n);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& [p, q] = entries[e];
    const Complex value(direction(2 * e), direction(2 * e + 1));
    delta_y(p, q) = value;
    delta_y(q, p) = value;
  }
  delta_y *= kappa * r / delta_y.norm();
  return delta_y;
}

double gaussian_sigma(double delta2, double eps, double delta, int horizon) {
  if (std::isinf(eps)) return 0.0;
  if (!(eps > 0.0)) throw InputError("eps must be positive");
  if (!(delta > 0.0) || !(delta < 1.0)) throw InputError("delta must lie in (0,1)");
  return std::sqrt(static_cast<double>(horizon)) * delta2 *
         std::sqrt(2.0 * std::log(1.25 / delta)) / eps;
}

SensitivityTable baseline_sensitivities(double v_min, double v_max, int n, double kappa, double r,
                                        double m_tilde_star, double load_range, int n_loads,
                                        int horizon, const BaselineBudget& budget) {
  if (!(v_min > 0.0)) throw InputError("v_min must be positive");
  SensitivityTable table;
  table.delta2_y =
      v_max * v_max * std::sqrt(static_cast<double>(n)) * kappa * r * m_tilde_star / v_min;
  table.delta2_load_to_v = std::sqrt(2.0) * load_range * m_tilde_star / v_min;
  table.sigma_gauss_voltage = gaussian_sigma(table.delta2_y, budget.eps, budget.delta, horizon);
  table.sigma_gauss_on_y = gaussian_sigma(r, budget.eps, budget.delta, 1);
  const double joint = std::max(table.delta2_y, table.delta2_load_to_v);
  table.sigma_joint =
      gaussian_sigma(joint, std::min(budget.eps_load, budget.eps), budget.delta, horizon);
  table.sigma_dpgmm_voltage = gaussian_sigma(table.delta2_y, budget.eps_y, budget.delta_y, horizon);
  table.sigma_noisy_load =
      std::sqrt(static_cast<double>(n_loads) * horizon) * load_range *
      (std::isinf(budget.eps_load)
           ? 0.0
           : std::sqrt(2.0 * std::log(1.25 / budget.delta_load)) / budget.eps_load);
  table.sigma_noisy_voltage = gaussian_sigma(table.delta2_y, budget.eps_y, budget.delta_y, horizon);
  return table;
}

}  // namespace dpgrid
