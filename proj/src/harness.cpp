#include "dpgrid/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

namespace dpgrid {

double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InputError("wasserstein1 requires nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t na = a.size(), nb = b.size();
  if (na == nb) {
    double total = 0.0;
    for (std::size_t i = 0; i < na; ++i) total += std::abs(a[i] - b[i]);
    return total / static_cast<double>(na);
  }
  // Integrate |F_a^-1(u) - F_b^-1(u)| over the merged quantile breakpoints.
  double total = 0.0;
  double u_prev = 0.0;
  std::size_t ia = 0, ib = 0;
  while (ia < na && ib < nb) {
    const double ua = static_cast<double>(ia + 1) / na;
    const double ub = static_cast<double>(ib + 1) / nb;
    const double u_next = std::min(ua, ub);
    total += (u_next - u_prev) * std::abs(a[ia] - b[ib]);
    if (ua <= u_next) ++ia;
    if (ub <= u_next) ++ib;
    u_prev = u_next;
  }
  return total;
}

std::vector<double> magnitude_samples(const MechanismRelease& release) {
  std::vector<double> samples;
  for (const MatC& panel : release.voltages)
    for (int t = 0; t < panel.rows(); ++t)
      for (int k = 0; k < panel.cols(); ++k) samples.push_back(std::abs(panel(t, k)));
  return samples;
}

double release_w1(const MechanismRelease& a, const MechanismRelease& b, W1Mode mode) {
  if (mode == W1Mode::Pooled) return wasserstein1(magnitude_samples(a), magnitude_samples(b));
  if (a.bus_ids != b.bus_ids) throw InputError("per-bus W1 requires matching bus sets");
  const int n = static_cast<int>(a.bus_ids.size());
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    std::vector<double> sa, sb;
    for (const MatC& panel : a.voltages)
      for (int t = 0; t < panel.rows(); ++t) sa.push_back(std::abs(panel(t, k)));
    for (const MatC& panel : b.voltages)
      for (int t = 0; t < panel.rows(); ++t) sb.push_back(std::abs(panel(t, k)));
    total += wasserstein1(std::move(sa), std::move(sb));
  }
  return total / n;
}

void ExperimentConfig::validate() const {
  if (eps_grid.empty()) throw InputError("epsilon grid must be nonempty");
  if (repetitions < 1) throw InputError("repetitions must be >= 1");
  if (days < 1) throw InputError("days must be >= 1");
  if (!(delta > 0.0) || !(delta < 1.0)) throw InputError("delta must lie in (0,1)");
  if (r < 0.0) throw InputError("negative adjacency radius");
  if (n_classes < 1) throw InputError("need at least one load class");
  if (eps_load_grid_points < 1) throw InputError("eps_load grid needs at least one point");
  fit.validate();
  powerflow.validate();
}

const SweepCell* EvaluationReport::find(MechanismKind kind, double eps) const {
  for (const auto& cell : cells)
    if (cell.mechanism == kind && cell.eps_target == eps) return &cell;
  return nullptr;
}

namespace {

struct SweepContext {
  const ExperimentConfig* cfg;
  KronReduction red;
  NetworkStats stats;
  InjectionModel inj;
  double v_min, v_max, kappa, h_max;
  VecD irradiance;
  MechanismRelease baseline;
  std::vector<double> baseline_samples;
  std::vector<FeederLoadModel> models;         // per grid point (selected eps_load)
  std::vector<PrivacyReport> reports;          // per grid point
  std::vector<double> selected_eps_load;       // per grid point
  std::vector<bool> point_feasible;
  double mu0 = 0.0;
  double delta_m = 0.0;
  double delta_common = 0.0;
  double load_range = 0.0;  // global p_max - p_min of the selected models
};

std::vector<double> theta_by_panel_bus(const LoadPanel& panel, const NetworkModel& network) {
  std::vector<double> thetas;
  for (const auto& id : panel.bus_ids) {
    const Bus* bus = network.find_bus(id);
    if (!bus || bus->kind != BusKind::Load)
      throw InputError("panel column " + id + " is not a load bus of the feeder");
    thetas.push_back(bus->power_factor_deg);
  }
  return thetas;
}

double cell_w1(const SweepContext& ctx, const MechanismRelease& release) {
  return ctx.cfg->w1_mode == W1Mode::Pooled
             ? wasserstein1(magnitude_samples(release), ctx.baseline_samples)
             : release_w1(release, ctx.baseline, W1Mode::PerBus);
}

MechanismRelease run_mechanism(const SweepContext& ctx, const LoadPanel& panel,
                               MechanismKind kind, int eps_idx, const Rng& rng) {
  const double eps = ctx.cfg->eps_grid[eps_idx];
  const FeederLoadModel& model = ctx.models[eps_idx];
  const PrivacyReport& report = ctx.reports[eps_idx];
  const BaselineBudget budget{eps,     ctx.delta_common, ctx.selected_eps_load[eps_idx],
                              ctx.delta_common, eps,     ctx.delta_common};
  const SensitivityTable table = baseline_sensitivities(
      ctx.v_min, ctx.v_max, ctx.red.n(), ctx.kappa, ctx.cfg->r, ctx.mu0, ctx.load_range,
      ctx.inj.n_load(), ctx.baseline.horizon, budget);

  switch (kind) {
    case MechanismKind::DpPowerflow:
      // substream(1) mirrors the first stage of dpgmm_plus_gauss, so within a
      // (eps, repetition) cell both mechanisms draw identical loads and the
      // comparison isolates the added voltage noise (common random numbers).
      return release_dp_powerflow(ctx.red, ctx.inj, model, ctx.irradiance, ctx.cfg->days,
                                  ctx.cfg->powerflow, report, ctx.v_min, ctx.v_max,
                                  rng.substream(1));
    case MechanismKind::DpgmmPlusGauss:
      return release_dpgmm_plus_gauss(ctx.red, ctx.inj, model, ctx.irradiance, ctx.cfg->days,
                                      ctx.cfg->powerflow, report, ctx.v_min, ctx.v_max,
                                      table.delta2_y, eps, ctx.delta_common, rng);
    case MechanismKind::JointVoltageNoise:
      return release_joint_voltage(ctx.baseline, table.delta2_y, table.delta2_load_to_v, eps, eps,
                                   ctx.delta_common, rng);
    case MechanismKind::NoisyLoadsPlusGauss: {
      double p_min = std::numeric_limits<double>::infinity(), p_max = 0.0;
      for (const auto& cls : model.classes) {
        p_min = std::min(p_min, cls.p_min);
        p_max = std::max(p_max, cls.p_max);
      }
      return release_noisy_loads_plus_gauss(ctx.red, ctx.inj, panel, ctx.irradiance,
                                            ctx.cfg->days, ctx.cfg->powerflow, p_min, p_max,
                                            0.5 * eps, 0.5 * ctx.delta_common, table.delta2_y,
                                            0.5 * eps, 0.5 * ctx.delta_common, ctx.v_min,
                                            ctx.v_max, rng, 0);
    }
    case MechanismKind::NoiseFree:
      return ctx.baseline;
  }
  throw InputError("unsupported mechanism in sweep");
}

}  // namespace

EvaluationReport run_sweep(const SweepInputs& inputs, const ExperimentConfig& cfg) {
  cfg.validate();
  inputs.network.validate();
  inputs.panel.validate();
  if (inputs.panel.days() < 2 * cfg.days)
    throw InputError("panel must cover at least twice the release days (baseline + resample)");

  SweepContext ctx;
  ctx.cfg = &cfg;
  const FullAdmittance y_full = build_admittance(inputs.network);
  ctx.red = kron_reduce(y_full, inputs.network);
  if (!ctx.red.slack_id) throw InputError("sweep requires a slack bus");
  ctx.stats = network_stats(ctx.red);
  ctx.inj = injection_model(inputs.network, ctx.red);
  ctx.v_min = inputs.network.v_min;
  ctx.v_max = inputs.network.v_max;
  ctx.kappa = ctx.red.kappa_kron;
  ctx.irradiance = inputs.irradiance;
  ctx.h_max = inputs.irradiance.size() ? inputs.irradiance.maxCoeff() : 0.0;
  if (ctx.irradiance.size() != inputs.panel.steps_per_day())
    throw InputError("irradiance length must match the panel day length");

  EvaluationReport out;

  // Ground truth and the sampling floor: replayed days vs the next block.
  ctx.baseline = release_noise_free(ctx.red, ctx.inj, inputs.panel, ctx.irradiance, cfg.days,
                                    cfg.powerflow, ctx.v_min, ctx.v_max, 0);
  ctx.baseline_samples = magnitude_samples(ctx.baseline);
  const MechanismRelease resample =
      release_noise_free(ctx.red, ctx.inj, inputs.panel, ctx.irradiance, cfg.days, cfg.powerflow,
                         ctx.v_min, ctx.v_max, cfg.days);
  out.floor_w1 = cell_w1(ctx, resample);

  const std::vector<double> thetas = theta_by_panel_bus(inputs.panel, inputs.network);
  Rng root(cfg.seed);

  // Pilot fit (non-private moments) drives the feasibility audit and the
  // Jacobian-norm calibration shared by every grid point.
  DpFitConfig pilot_cfg = cfg.fit;
  pilot_cfg.eps_load = std::numeric_limits<double>::infinity();
  Rng pilot_rng = root.substream(0xF17);
  const FeederLoadModel pilot_model =
      fit_load_model(inputs.panel, thetas, cfg.n_classes, pilot_cfg, pilot_rng);

  FeasibilityAuditConfig audit_cfg;
  audit_cfg.v_min = ctx.v_min;
  audit_cfg.v_max = ctx.v_max;
  audit_cfg.seed = mix_seed(cfg.seed, 0xA0D17);
  out.audit = feasibility_audit(ctx.red, ctx.inj, pilot_model, ctx.h_max, audit_cfg);

  AdjacencyParams params{cfg.r, cfg.delta};
  McCalibrateConfig cal_cfg;
  cal_cfg.trajectories = cfg.calibration_trajectories;
  cal_cfg.confidence = cfg.confidence;
  cal_cfg.powerflow = cfg.powerflow;
  if (cfg.mu0 > 0.0) {
    cal_cfg.mu0 = cfg.mu0;
  } else {
    // Automatic threshold: 1.5x the largest norm over a short pilot run.
    double max_norm = 0.0;
    std::vector<TruncatedSampler> samplers;
    for (std::size_t c = 0; c < pilot_model.classes.size(); ++c)
      samplers.emplace_back(pilot_model.classes[c], root.substream(0x5A5A00 + c));
    std::vector<int> bus_class;
    for (int k : ctx.inj.load_buses) bus_class.push_back(pilot_model.class_of(ctx.red.retained_ids[k]));
    for (int traj = 0; traj < 8; ++traj) {
      Rng traj_rng = root.substream(0x717000 + traj);
      MatD loads(ctx.inj.n_load(), pilot_model.horizon());
      for (int i = 0; i < ctx.inj.n_load(); ++i) {
        Rng bus_rng = traj_rng.substream(i);
        loads.row(i) = samplers[bus_class[i]].draw_log(bus_rng).array().exp();
      }
      for (int t = 0; t < pilot_model.horizon(); ++t) {
        const InjectionSpec spec = ctx.inj.at(loads.col(t), ctx.irradiance(t));
        const VoltageSolution sol = solve_powerflow(ctx.red, spec, cfg.powerflow, ctx.v_min, ctx.v_max);
        if (!sol.converged) continue;
        max_norm = std::max(max_norm, m_tilde_inverse_norm(wirtinger_jacobian(ctx.red, sol.v, spec)));
      }
    }
    if (!(max_norm > 0.0)) throw NumericalError("calibration pilot produced no usable norms");
    cal_cfg.mu0 = 1.5 * max_norm;
  }
  out.calibration = mc_calibrate(ctx.red, ctx.inj, pilot_model, ctx.irradiance, params, ctx.kappa,
                                 ctx.v_min, ctx.v_max, cal_cfg, root.substream(0xCA1));
  ctx.mu0 = cal_cfg.mu0;
  ctx.delta_m = out.calibration.delta_m_upper;
  ctx.delta_common = cfg.delta + ctx.delta_m;

  // Per grid point: search eps_load on a log grid, keep the candidate with
  // the smallest probe W1 among those meeting the epsilon target.
  const int n_points = static_cast<int>(cfg.eps_grid.size());
  ctx.models.resize(n_points);
  ctx.reports.resize(n_points);
  ctx.selected_eps_load.assign(n_points, 0.0);
  ctx.point_feasible.assign(n_points, false);
  for (int g = 0; g < n_points; ++g) {
    const double eps_target = cfg.eps_grid[g];
    const double lo = std::log(eps_target / 10.0), hi = std::log(10.0 * eps_target);
    double best_w1 = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.eps_load_grid_points; ++c) {
      const double frac = cfg.eps_load_grid_points == 1
                              ? 1.0
                              : static_cast<double>(c) / (cfg.eps_load_grid_points - 1);
      const double eps_load = std::exp(lo + frac * (hi - lo));
      DpFitConfig fit_cfg = cfg.fit;
      fit_cfg.eps_load = eps_load;
      try {
        Rng fit_rng = root.substream(mix_seed(0xF00D, g * 1000 + c));
        const FeederLoadModel candidate =
            fit_load_model(inputs.panel, thetas, cfg.n_classes, fit_cfg, fit_rng);
        const PrivacyReport report =
            epsilon_total(params, ctx.stats, ctx.v_min, ctx.v_max, ctx.kappa, candidate, ctx.mu0,
                          MStarProvenance::MonteCarlo, ctx.red.n(), candidate.horizon(),
                          ctx.delta_m);
        if (report.epsilon > eps_target) continue;
        const MechanismRelease probe =
            release_dp_powerflow(ctx.red, ctx.inj, candidate, ctx.irradiance, 1, cfg.powerflow,
                                 report, ctx.v_min, ctx.v_max,
                                 root.substream(mix_seed(0x9B0BE, g * 1000 + c)));
        const double w1 = wasserstein1(magnitude_samples(probe), ctx.baseline_samples);
        if (w1 < best_w1) {
          best_w1 = w1;
          ctx.models[g] = candidate;
          ctx.reports[g] = report;
          ctx.selected_eps_load[g] = eps_load;
          ctx.point_feasible[g] = true;
        }
      } catch (const InadmissibleError&) {
        continue;
      } catch (const NumericalError&) {
        continue;
      }
    }
    if (!ctx.point_feasible[g])
      throw NumericalError("no eps_load candidate met the epsilon target " +
                           format_double(eps_target) +
                           "; reduce the adjacency radius r or relax the target");
  }
  out.selected_eps_load = ctx.selected_eps_load;
  out.privacy_reports = ctx.reports;
  for (const auto& model : ctx.models) {
    for (const auto& cls : model.classes) {
      ctx.load_range = std::max(ctx.load_range, cls.p_max);
    }
  }
  double global_p_min = std::numeric_limits<double>::infinity();
  for (const auto& model : ctx.models)
    for (const auto& cls : model.classes) global_p_min = std::min(global_p_min, cls.p_min);
  ctx.load_range -= global_p_min;

  // Fan the (mechanism, eps, repetition) cells out to a worker pool; results
  // are aggregated by cell index so the report is thread-count independent.
  const std::vector<MechanismKind> mechanisms{
      MechanismKind::DpPowerflow, MechanismKind::DpgmmPlusGauss, MechanismKind::JointVoltageNoise,
      MechanismKind::NoisyLoadsPlusGauss};
  struct CellTask {
    MechanismKind kind;
    int eps_idx;
    int rep;
  };
  std::vector<CellTask> tasks;
  for (int g = 0; g < n_points; ++g)
    for (const auto kind : mechanisms)
      for (int rep = 0; rep < cfg.repetitions; ++rep) tasks.push_back({kind, g, rep});

  std::vector<double> results(tasks.size(), std::numeric_limits<double>::quiet_NaN());
  std::atomic<std::size_t> cursor{0};
  const unsigned n_threads = cfg.threads > 0
                                 ? static_cast<unsigned>(cfg.threads)
                                 : std::max(1u, std::thread::hardware_concurrency());
  auto worker = [&]() {
    for (std::size_t i = cursor.fetch_add(1); i < tasks.size(); i = cursor.fetch_add(1)) {
      const CellTask& task = tasks[i];
      try {
        // Seed by (grid point, repetition) only: mechanisms inside a cell
        // share their random draws (paired comparison).
        const Rng cell_rng = Rng(cfg.seed).substream(
            mix_seed(0xCE11, (static_cast<std::uint64_t>(task.eps_idx) << 32) |
                                 static_cast<std::uint64_t>(task.rep)));
        const MechanismRelease release =
            run_mechanism(ctx, inputs.panel, task.kind, task.eps_idx, cell_rng);
        results[i] = cell_w1(ctx, release);
      } catch (const std::exception&) {
        results[i] = std::numeric_limits<double>::quiet_NaN();  // excluded run
      }
    }
  };
  std::vector<std::future<void>> futures;
  for (unsigned t = 0; t < n_threads; ++t) futures.push_back(std::async(std::launch::async, worker));
  for (auto& future : futures) future.get();

  // Aggregate cells.
  for (int g = 0; g < n_points; ++g) {
    for (const auto kind : mechanisms) {
      SweepCell cell;
      cell.mechanism = kind;
      cell.eps_target = cfg.eps_grid[g];
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].eps_idx != g || tasks[i].kind != kind) continue;
        if (std::isnan(results[i])) {
          ++cell.repetitions_excluded;
        } else {
          cell.w1_values.push_back(results[i]);
        }
      }
      cell.repetitions_used = static_cast<int>(cell.w1_values.size());
      if (cell.repetitions_used > 0) {
        cell.mean_w1 = std::accumulate(cell.w1_values.begin(), cell.w1_values.end(), 0.0) /
                       cell.repetitions_used;
        double ss = 0.0;
        for (double w : cell.w1_values) ss += (w - cell.mean_w1) * (w - cell.mean_w1);
        cell.std_w1 = cell.repetitions_used > 1 ? std::sqrt(ss / (cell.repetitions_used - 1)) : 0.0;
      }
      out.cells.push_back(std::move(cell));
    }
  }

  // Ordering verdicts per grid point. Repetitions are paired across
  // mechanisms (common random numbers), so an ordering counts as violated
  // only when the reversal exceeds twice the paired standard error; ties at
  // the Monte Carlo resolution satisfy "<=".
  auto ordered_up_to_noise = [](const SweepCell* lo, const SweepCell* hi) {
    if (!lo || !hi) return false;
    if (lo->mean_w1 <= hi->mean_w1) return true;
    if (lo->repetitions_used != hi->repetitions_used || lo->repetitions_used < 2)
      return false;
    const int n = lo->repetitions_used;
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += lo->w1_values[i] - hi->w1_values[i];
    mean /= n;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double centered = lo->w1_values[i] - hi->w1_values[i] - mean;
      ss += centered * centered;
    }
    const double se = std::sqrt(ss / (n - 1) / n);
    return mean <= 2.0 * se;
  };
  int dp_le_dpgmm = 0, dpgmm_le_joint = 0, dpgmm_le_noisy = 0, all_three = 0;
  for (int g = 0; g < n_points; ++g) {
    const double eps = cfg.eps_grid[g];
    const SweepCell* dp = out.find(MechanismKind::DpPowerflow, eps);
    const SweepCell* dpgmm = out.find(MechanismKind::DpgmmPlusGauss, eps);
    const SweepCell* joint = out.find(MechanismKind::JointVoltageNoise, eps);
    const SweepCell* noisy = out.find(MechanismKind::NoisyLoadsPlusGauss, eps);
    const bool a = ordered_up_to_noise(dp, dpgmm);
    const bool b = ordered_up_to_noise(dpgmm, joint);
    const bool c = ordered_up_to_noise(dpgmm, noisy);
    dp_le_dpgmm += a;
    dpgmm_le_joint += b;
    dpgmm_le_noisy += c;
    all_three += (a && b && c);
  }
  out.ordering_dp_le_dpgmm = dp_le_dpgmm >= n_points - 1;
  out.ordering_dpgmm_le_joint = dpgmm_le_joint >= n_points - 1;
  out.ordering_dpgmm_le_noisy = dpgmm_le_noisy >= n_points - 1;
  out.ordering_points_satisfied = all_three;
  return out;
}

}  // namespace dpgrid
