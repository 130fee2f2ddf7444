#include "dpgrid/mechanisms.hpp"

#include <cmath>
#include <sstream>

namespace dpgrid {

std::string mechanism_name(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::DpPowerflow: return "dp_powerflow";
    case MechanismKind::NoiseFree: return "noise_free";
    case MechanismKind::JointVoltageNoise: return "joint_voltage_noise";
    case MechanismKind::DpgmmPlusGauss: return "dpgmm_plus_gauss";
    case MechanismKind::NoisyLoadsPlusGauss: return "noisy_loads_plus_gauss";
  }
  throw InputError("unknown mechanism kind");
}

MechanismKind mechanism_from_name(const std::string& name) {
  if (name == "dp_powerflow") return MechanismKind::DpPowerflow;
  if (name == "noise_free") return MechanismKind::NoiseFree;
  if (name == "joint_voltage_noise") return MechanismKind::JointVoltageNoise;
  if (name == "dpgmm_plus_gauss") return MechanismKind::DpgmmPlusGauss;
  if (name == "noisy_loads_plus_gauss") return MechanismKind::NoisyLoadsPlusGauss;
  throw InputError("unknown mechanism: " + name);
}

std::pair<double, double> compose_budget(double eps_day, double delta_day, int days) {
  if (days < 1) throw InputError("days must be >= 1");
  return {days * eps_day, days * delta_day};
}

namespace {

/// Solves one day of time steps and appends the voltage panel.
void solve_day(const KronReduction& red, const InjectionModel& inj, const MatD& loads,
               const VecD& irradiance, const PowerFlowConfig& cfg, double v_min, double v_max,
               MechanismRelease& release) {
  const int horizon = static_cast<int>(loads.cols());
  MatC panel(horizon, red.n());
  for (int t = 0; t < horizon; ++t) {
    const InjectionSpec spec = inj.at(loads.col(t), irradiance(t));
    const VoltageSolution sol = solve_powerflow(red, spec, cfg, v_min, v_max);
    if (!sol.converged) {
      ++release.solver_failures;
      std::ostringstream message;
      message << "power flow failed at day " << release.voltages.size() << " step " << t
              << " (residual " << format_double(sol.residual)
              << (sol.jacobian_singular ? ", singular Jacobian near the stability limit" : "")
              << "); day aborted";
      throw NumericalError(message.str());
    }
    if (!sol.in_good_set) ++release.good_set_violations;
    panel.row(t) = sol.v.transpose();
  }
  release.voltages.push_back(std::move(panel));
}

MatD sample_day_loads(const std::vector<TruncatedSampler>& samplers,
                      const std::vector<int>& class_of_load_bus, int horizon, const Rng& day_rng,
                      double& min_acceptance) {
  const int n_load = static_cast<int>(class_of_load_bus.size());
  MatD loads(n_load, horizon);
  for (int i = 0; i < n_load; ++i) {
    Rng bus_rng = day_rng.substream(i);
    loads.row(i) = samplers[class_of_load_bus[i]].draw_log(bus_rng).array().exp();
  }
  for (const auto& sampler : samplers)
    min_acceptance = std::min(min_acceptance, sampler.acceptance_estimate());
  return loads;
}

std::vector<int> load_bus_classes(const KronReduction& red, const InjectionModel& inj,
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

std::vector<std::string> load_bus_ids(const KronReduction& red) { return red.retained_ids; }

/// Historical panel columns for the requested day, aligned to the load buses.
MatD panel_day_loads(const LoadPanel& panel, const KronReduction& red, const InjectionModel& inj,
                     int day) {
  const int steps = panel.steps_per_day();
  if ((day + 1) * steps > panel.total_steps())
    throw InputError("historical panel does not cover day " + std::to_string(day));
  MatD loads(inj.n_load(), steps);
  for (int i = 0; i < inj.n_load(); ++i) {
    const std::string& bus = red.retained_ids[inj.load_buses[i]];
    int row = -1;
    for (int p = 0; p < panel.n_buses(); ++p)
      if (panel.bus_ids[p] == bus) {
        row = p;
        break;
      }
    if (row < 0) throw InputError("panel is missing load bus " + bus);
    loads.row(i) = panel.values.row(row).segment(day * steps, steps);
  }
  return loads;
}

}  // namespace

MechanismRelease release_dp_powerflow(const KronReduction& red, const InjectionModel& inj,
                                      const FeederLoadModel& model, const VecD& irradiance,
                                      int days, const PowerFlowConfig& cfg,
                                      const PrivacyReport& report, double v_min, double v_max,
                                      const Rng& rng) {
  if (days < 1) throw InputError("days must be >= 1");
  const int horizon = model.horizon();
  if (irradiance.size() != horizon) throw InputError("irradiance length must match the horizon");

  MechanismRelease release;
  release.kind = MechanismKind::DpPowerflow;
  release.bus_ids = load_bus_ids(red);
  release.horizon = horizon;
  release.seed = rng.seed();
  release.eps_day = report.epsilon;
  release.delta_day = report.delta_total;
  std::tie(release.eps_total, release.delta_total) =
      compose_budget(release.eps_day, release.delta_day, days);

  const std::vector<int> classes = load_bus_classes(red, inj, model);
  std::vector<TruncatedSampler> samplers;
  for (std::size_t c = 0; c < model.classes.size(); ++c)
    samplers.emplace_back(model.classes[c], rng.substream(0xFACADE00 + c));

  for (int day = 0; day < days; ++day) {
    const MatD loads = sample_day_loads(samplers, classes, horizon, rng.substream(day),
                                        release.min_truncation_acceptance);
    solve_day(red, inj, loads, irradiance, cfg, v_min, v_max, release);
  }
  return release;
}

MechanismRelease release_noise_free(const KronReduction& red, const InjectionModel& inj,
                                    const LoadPanel& panel, const VecD& irradiance, int days,
                                    const PowerFlowConfig& cfg, double v_min, double v_max,
                                    int start_day) {
  MechanismRelease release;
  release.kind = MechanismKind::NoiseFree;
  release.bus_ids = load_bus_ids(red);
  release.horizon = panel.steps_per_day();
  if (irradiance.size() != release.horizon)
    throw InputError("irradiance length must match the panel day length");
  for (int day = 0; day < days; ++day) {
    const MatD loads = panel_day_loads(panel, red, inj, start_day + day);
    solve_day(red, inj, loads, irradiance, cfg, v_min, v_max, release);
  }
  return release;
}

MechanismRelease release_gaussian_voltage(const MechanismRelease& base, MechanismKind kind,
                                          double delta2, double eps, double delta,
                                          const Rng& rng) {
  MechanismRelease release = base;
  release.kind = kind;
  release.seed = rng.seed();
  release.noise_sigma = gaussian_sigma(delta2, eps, delta, base.horizon);
  release.eps_day = eps;
  release.delta_day = delta;
  std::tie(release.eps_total, release.delta_total) =
      compose_budget(eps, delta, std::max(1, base.days()));
  if (release.noise_sigma == 0.0) return release;
  for (int day = 0; day < release.days(); ++day) {
    Rng day_rng = rng.substream(day);
    MatC& panel = release.voltages[day];
    for (int t = 0; t < panel.rows(); ++t)
      for (int k = 0; k < panel.cols(); ++k)
        panel(t, k) += Complex(release.noise_sigma * day_rng.normal(),
                               release.noise_sigma * day_rng.normal());
  }
  return release;
}

MechanismRelease release_joint_voltage(const MechanismRelease& noise_free_base, double delta2_y,
                                       double delta2_load_to_v, double eps_load, double eps,
                                       double delta, const Rng& rng) {
  const double delta2 = std::max(delta2_y, delta2_load_to_v);
  const double eps_joint = std::min(eps_load, eps);
  MechanismRelease release = release_gaussian_voltage(
      noise_free_base, MechanismKind::JointVoltageNoise, delta2, eps_joint, delta, rng);
  release.eps_load = eps_load;
  return release;
}

MechanismRelease release_dpgmm_plus_gauss(const KronReduction& red, const InjectionModel& inj,
                                          const FeederLoadModel& model, const VecD& irradiance,
                                          int days, const PowerFlowConfig& cfg,
                                          const PrivacyReport& report, double v_min, double v_max,
                                          double delta2_y, double eps_y, double delta_y,
                                          const Rng& rng) {
  const MechanismRelease base = release_dp_powerflow(red, inj, model, irradiance, days, cfg,
                                                     report, v_min, v_max, rng.substream(1));
  MechanismRelease release = release_gaussian_voltage(base, MechanismKind::DpgmmPlusGauss,
                                                      delta2_y, eps_y, delta_y, rng.substream(2));
  release.seed = rng.seed();
  return release;
}

MechanismRelease release_noisy_loads_plus_gauss(const KronReduction& red,
                                                const InjectionModel& inj, const LoadPanel& panel,
                                                const VecD& irradiance, int days,
                                                const PowerFlowConfig& cfg, double p_min,
                                                double p_max, double eps_load, double delta_load,
                                                double delta2_y, double eps_y, double delta_y,
                                                double v_min, double v_max, const Rng& rng,
                                                int start_day) {
  if (!(p_min < p_max)) throw InputError("load clip range out of order");
  const int horizon = panel.steps_per_day();
  if (irradiance.size() != horizon)
    throw InputError("irradiance length must match the panel day length");

  MechanismRelease release;
  release.kind = MechanismKind::NoisyLoadsPlusGauss;
  release.bus_ids = load_bus_ids(red);
  release.horizon = horizon;
  release.seed = rng.seed();
  release.eps_load = eps_load;

  const double load_range = p_max - p_min;
  const double sigma_load =
      std::isinf(eps_load)
          ? 0.0
          : std::sqrt(static_cast<double>(inj.n_load()) * horizon) * load_range *
                std::sqrt(2.0 * std::log(1.25 / delta_load)) / eps_load;

  for (int day = 0; day < days; ++day) {
    MatD loads = panel_day_loads(panel, red, inj, start_day + day);
    Rng day_rng = rng.substream(day);
    for (int i = 0; i < loads.rows(); ++i)
      for (int t = 0; t < loads.cols(); ++t)
        loads(i, t) = std::clamp(loads(i, t) + sigma_load * day_rng.normal(), p_min, p_max);
    solve_day(red, inj, loads, irradiance, cfg, v_min, v_max, release);
  }
  return release_gaussian_voltage(release, MechanismKind::NoisyLoadsPlusGauss, delta2_y, eps_y,
                                  delta_y, rng.substream(0x5013E));
}

}  // namespace dpgrid
