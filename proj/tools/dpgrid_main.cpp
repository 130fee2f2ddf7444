#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include <CLI11.hpp>

#include "dpgrid/accountant.hpp"
#include "dpgrid/harness.hpp"
#include "dpgrid/io.hpp"
#include "dpgrid/mechanisms.hpp"
#include "dpgrid/reference.hpp"

namespace {

using namespace dpgrid;

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw InputError("cannot open " + out_path + " for writing");
  out << text;
}

struct LoadedFeeder {
  NetworkModel network;
  FullAdmittance y_full;
  KronReduction red;
  NetworkStats stats;
  InjectionModel inj;
};

LoadedFeeder load_and_reduce(const std::string& path, bool need_slack) {
  LoadedFeeder feeder;
  feeder.network = load_feeder(path);
  if (need_slack && feeder.network.slack_count() != 1)
    throw InputError("this operation requires exactly one slack bus");
  feeder.y_full = build_admittance(feeder.network);
  feeder.red = kron_reduce(feeder.y_full, feeder.network);
  feeder.stats = network_stats(feeder.red);
  feeder.inj = injection_model(feeder.network, feeder.red);
  return feeder;
}

double resolve_m_star(const LoadedFeeder& feeder, const std::string& source,
                      const FeederLoadModel* model, const VecD* irradiance,
                      const AdjacencyParams& params, double mu0, int trajectories,
                      double confidence, std::uint64_t seed, double& delta_m,
                      MStarProvenance& provenance) {
  const double h_max = irradiance && irradiance->size() ? irradiance->maxCoeff() : 0.0;
  if (source == "closed-form") {
    provenance = MStarProvenance::ClosedForm;
    delta_m = 0.0;
    const double c_vv =
        voltvar_constant(feeder.inj, h_max, feeder.network.v_min, feeder.network.v_max);
    return m_tilde_closed_form(feeder.stats, feeder.network.v_min, feeder.network.v_max,
                               feeder.red.n(), feeder.red.kappa_kron, params.r, c_vv);
  }
  if (source != "monte-carlo") throw InputError("unknown m-star source: " + source);
  if (!model || !irradiance)
    throw InputError("monte-carlo calibration needs a model and irradiance");
  provenance = MStarProvenance::MonteCarlo;
  McCalibrateConfig cfg;
  cfg.mu0 = mu0;
  cfg.trajectories = trajectories;
  cfg.confidence = confidence;
  const CalibrationResult result =
      mc_calibrate(feeder.red, feeder.inj, *model, *irradiance, params, feeder.red.kappa_kron,
                   feeder.network.v_min, feeder.network.v_max, cfg, Rng(seed));
  delta_m = result.delta_m_upper;
  return mu0;
}

double global_load_range(const FeederLoadModel& model) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& cls : model.classes) {
    lo = std::min(lo, cls.p_min);
    hi = std::max(hi, cls.p_max);
  }
  return hi - lo;
}

int run(int argc, char** argv) {
  CLI::App app{
      "dpgrid: differentially private synthetic voltage releases for distribution feeders"};
  app.require_subcommand(1);
  app.fallthrough();  // global --seed/--out may appear after the subcommand

  std::uint64_t seed = 1;
  std::string out_path, config_path;
  app.add_option("--seed", seed, "global random seed")->capture_default_str();
  app.add_option("--out", out_path, "output file or directory");
  app.add_option("--config", config_path, "configuration file (sweep)");

  // kron ----------------------------------------------------------------
  auto* kron_cmd = app.add_subcommand("kron", "reduce a feeder and report network constants");
  std::string feeder_path;
  kron_cmd->add_option("--feeder", feeder_path, "feeder description (JSON)")->required();

  // audit-feasibility -----------------------------------------------------
  auto* audit_cmd =
      app.add_subcommand("audit-feasibility", "sample-based normal-operating-conditions audit");
  std::string audit_feeder, audit_model, audit_irradiance;
  int audit_samples = 256;
  double audit_angle = 0.1;
  audit_cmd->add_option("--feeder", audit_feeder)->required();
  audit_cmd->add_option("--model", audit_model, "fitted load model (JSON)")->required();
  audit_cmd->add_option("--irradiance", audit_irradiance, "irradiance CSV (for pv coupling)");
  audit_cmd->add_option("--samples", audit_samples)->capture_default_str();
  audit_cmd->add_option("--max-angle", audit_angle, "sampled phase span [rad]")
      ->capture_default_str();

  // fit --------------------------------------------------------------------
  auto* fit_cmd = app.add_subcommand("fit", "partition load buses and fit the DP class models");
  std::string fit_panel, fit_feeder;
  int fit_classes = 3, fit_resolution = 15;
  DpFitConfig fit_cfg;
  fit_cmd->add_option("--panel", fit_panel, "historical load panel CSV")->required();
  fit_cmd->add_option("--feeder", fit_feeder)->required();
  fit_cmd->add_option("--classes", fit_classes)->capture_default_str();
  fit_cmd->add_option("--resolution", fit_resolution, "panel resolution in minutes")
      ->capture_default_str();
  fit_cmd->add_option("--eps-load", fit_cfg.eps_load, "privacy budget (omit for non-private)");
  fit_cmd->add_option("--delta-load", fit_cfg.delta_load)->capture_default_str();
  fit_cmd->add_option("--mean-fraction", fit_cfg.mean_budget_fraction)->capture_default_str();
  fit_cmd->add_option("--eigen-floor", fit_cfg.eigenvalue_floor)->capture_default_str();
  fit_cmd->add_option("--widen", fit_cfg.margin_widen_fraction)->capture_default_str();

  // privacy-audit ------------------------------------------------------------
  auto* privacy_cmd =
      app.add_subcommand("privacy-audit", "evaluate the trajectory-level (eps, delta) guarantee");
  std::string pa_feeder, pa_model, pa_irradiance, pa_mstar = "closed-form";
  double pa_r = 0.0, pa_delta = 0.05, pa_mu0 = 1.0, pa_confidence = 0.95;
  int pa_trajectories = 59;
  privacy_cmd->add_option("--feeder", pa_feeder)->required();
  privacy_cmd->add_option("--model", pa_model)->required();
  privacy_cmd->add_option("--irradiance", pa_irradiance);
  privacy_cmd->add_option("--r", pa_r, "Frobenius adjacency radius")->required();
  privacy_cmd->add_option("--delta", pa_delta)->capture_default_str();
  privacy_cmd->add_option("--mstar", pa_mstar, "closed-form | monte-carlo")
      ->capture_default_str();
  privacy_cmd->add_option("--mu0", pa_mu0, "norm threshold for monte-carlo calibration");
  privacy_cmd->add_option("--trajectories", pa_trajectories)->capture_default_str();
  privacy_cmd->add_option("--confidence", pa_confidence)->capture_default_str();

  // calibrate -----------------------------------------------------------------
  auto* cal_cmd = app.add_subcommand("calibrate", "Monte Carlo calibration of the Jacobian norm");
  std::string cal_feeder, cal_model, cal_irradiance;
  double cal_mu0 = 1.0, cal_r = 0.0, cal_delta = 0.05, cal_confidence = 0.95;
  int cal_trajectories = 59;
  cal_cmd->add_option("--feeder", cal_feeder)->required();
  cal_cmd->add_option("--model", cal_model)->required();
  cal_cmd->add_option("--irradiance", cal_irradiance)->required();
  cal_cmd->add_option("--mu0", cal_mu0)->required();
  cal_cmd->add_option("--trajectories", cal_trajectories)->capture_default_str();
  cal_cmd->add_option("--confidence", cal_confidence)->capture_default_str();
  cal_cmd->add_option("--r", cal_r)->capture_default_str();
  cal_cmd->add_option("--delta", cal_delta)->capture_default_str();

  // release ---------------------------------------------------------------------
  auto* release_cmd = app.add_subcommand("release", "produce a voltage release");
  std::string rel_feeder, rel_model, rel_irradiance, rel_panel, rel_mechanism = "dp_powerflow";
  std::string rel_mstar = "closed-form";
  double rel_eps = 25.0, rel_delta = 0.05, rel_eps_load = 25.0, rel_delta_load = 0.05;
  double rel_r = 1e-4, rel_mu0 = 0.0;
  int rel_days = 1, rel_trajectories = 59;
  release_cmd->add_option("--feeder", rel_feeder)->required();
  release_cmd->add_option("--model", rel_model, "fitted model (all mechanisms except noise_free)");
  release_cmd->add_option("--irradiance", rel_irradiance)->required();
  release_cmd->add_option("--panel", rel_panel, "historical panel (noise_free, noisy_loads)");
  release_cmd->add_option("--mechanism", rel_mechanism,
                          "dp_powerflow | noise_free | joint_voltage_noise | dpgmm_plus_gauss | "
                          "noisy_loads_plus_gauss")
      ->capture_default_str();
  release_cmd->add_option("--days", rel_days)->capture_default_str();
  release_cmd->add_option("--eps", rel_eps, "voltage-noise budget (baselines)")
      ->capture_default_str();
  release_cmd->add_option("--delta", rel_delta)->capture_default_str();
  release_cmd->add_option("--eps-load", rel_eps_load)->capture_default_str();
  release_cmd->add_option("--delta-load", rel_delta_load)->capture_default_str();
  release_cmd->add_option("--r", rel_r)->capture_default_str();
  release_cmd->add_option("--mstar", rel_mstar)->capture_default_str();
  release_cmd->add_option("--mu0", rel_mu0, "norm threshold (monte-carlo m-star)");
  release_cmd->add_option("--trajectories", rel_trajectories)->capture_default_str();

  // evaluate ---------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "Wasserstein-1 distance between two releases");
  std::string eval_a, eval_b, eval_mode = "pooled";
  eval_cmd->add_option("--release-a", eval_a)->required();
  eval_cmd->add_option("--release-b", eval_b)->required();
  eval_cmd->add_option("--mode", eval_mode, "pooled | per_bus")->capture_default_str();

  // sweep -----------------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "full Wasserstein experiment over an eps grid");
  std::string sweep_config;
  sweep_cmd->add_option("--config", sweep_config, "experiment configuration (JSON)");

  // gen-data --------------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("gen-data", "write the reference feeder and synthetic data");
  int gen_days = 120;
  gen_cmd->add_option("--days", gen_days)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (kron_cmd->parsed()) {
    const LoadedFeeder feeder = load_and_reduce(feeder_path, false);
    emit(kron_report_json(feeder.red, feeder.stats), out_path);
    return 0;
  }

  if (audit_cmd->parsed()) {
    const LoadedFeeder feeder = load_and_reduce(audit_feeder, true);
    const FeederLoadModel model = load_model_json(audit_model);
    double h_max = 0.0;
    if (!audit_irradiance.empty()) h_max = load_irradiance_csv(audit_irradiance).maxCoeff();
    FeasibilityAuditConfig cfg;
    cfg.n_samples = audit_samples;
    cfg.v_min = feeder.network.v_min;
    cfg.v_max = feeder.network.v_max;
    cfg.max_angle_rad = audit_angle;
    cfg.seed = seed;
    const FeasibilityAudit audit = feasibility_audit(feeder.red, feeder.inj, model, h_max, cfg);
    emit(audit_to_json(audit, model), out_path);
    return 0;
  }

  if (fit_cmd->parsed()) {
    const NetworkModel network = load_feeder(fit_feeder);
    const LoadPanel panel = load_panel_csv(fit_panel, fit_resolution);
    std::vector<double> thetas;
    for (const auto& id : panel.bus_ids) {
      const Bus* bus = network.find_bus(id);
      if (!bus || bus->kind != BusKind::Load)
        throw InputError("panel column " + id + " is not a load bus of the feeder");
      thetas.push_back(bus->power_factor_deg);
    }
    Rng rng(seed);
    const FeederLoadModel model = fit_load_model(panel, thetas, fit_classes, fit_cfg, rng);
    emit(model_to_json(model), out_path);
    return 0;
  }

  if (privacy_cmd->parsed()) {
    const LoadedFeeder feeder = load_and_reduce(pa_feeder, true);
    const FeederLoadModel model = load_model_json(pa_model);
    VecD irradiance;
    if (!pa_irradiance.empty()) irradiance = load_irradiance_csv(pa_irradiance);
    const AdjacencyParams params{pa_r, pa_delta};
    double delta_m = 0.0;
    MStarProvenance provenance = MStarProvenance::ClosedForm;
    const double m_star =
        resolve_m_star(feeder, pa_mstar, &model, &irradiance, params, pa_mu0, pa_trajectories,
                       pa_confidence, seed, delta_m, provenance);
    const PrivacyReport report =
        epsilon_total(params, feeder.stats, feeder.network.v_min, feeder.network.v_max,
                      feeder.red.kappa_kron, model, m_star, provenance, feeder.red.n(),
                      model.horizon(), delta_m);
    emit(privacy_report_to_json(report), out_path);
    return 0;
  }

  if (cal_cmd->parsed()) {
    const LoadedFeeder feeder = load_and_reduce(cal_feeder, true);
    const FeederLoadModel model = load_model_json(cal_model);
    const VecD irradiance = load_irradiance_csv(cal_irradiance);
    McCalibrateConfig cfg;
    cfg.mu0 = cal_mu0;
    cfg.trajectories = cal_trajectories;
    cfg.confidence = cal_confidence;
    const CalibrationResult result =
        mc_calibrate(feeder.red, feeder.inj, model, irradiance, {cal_r, cal_delta},
                     feeder.red.kappa_kron, feeder.network.v_min, feeder.network.v_max, cfg,
                     Rng(seed));
    emit(calibration_to_json(result), out_path);
    return 0;
  }

  if (release_cmd->parsed()) {
    if (out_path.empty()) throw InputError("release requires --out <directory>");
    const LoadedFeeder feeder = load_and_reduce(rel_feeder, true);
    const VecD irradiance = load_irradiance_csv(rel_irradiance);
    const MechanismKind kind = mechanism_from_name(rel_mechanism);
    const PowerFlowConfig pf_cfg;
    const double v_min = feeder.network.v_min, v_max = feeder.network.v_max;
    const Rng rng(seed);

    FeederLoadModel model;
    if (!rel_model.empty()) model = load_model_json(rel_model);
    LoadPanel panel;
    if (!rel_panel.empty())
      panel = load_panel_csv(rel_panel,
                             model.classes.empty() ? 15 : model.resolution_minutes);

    MechanismRelease release;
    if (kind == MechanismKind::NoiseFree) {
      if (rel_panel.empty()) throw InputError("noise_free replay needs --panel");
      release = release_noise_free(feeder.red, feeder.inj, panel, irradiance, rel_days, pf_cfg,
                                   v_min, v_max);
    } else {
      if (rel_model.empty()) throw InputError("this mechanism needs --model");
      const AdjacencyParams params{rel_r, rel_delta};
      double delta_m = 0.0;
      MStarProvenance provenance = MStarProvenance::ClosedForm;
      const double m_star =
          resolve_m_star(feeder, rel_mstar, &model, &irradiance, params, rel_mu0,
                         rel_trajectories, 0.95, mix_seed(seed, 0xCA1), delta_m, provenance);
      const SensitivityTable table = baseline_sensitivities(
          v_min, v_max, feeder.red.n(), feeder.red.kappa_kron, rel_r, m_star,
          global_load_range(model), feeder.inj.n_load(), model.horizon(),
          BaselineBudget{rel_eps, rel_delta, rel_eps_load, rel_delta_load, rel_eps, rel_delta});

      switch (kind) {
        case MechanismKind::DpPowerflow: {
          const PrivacyReport report =
              epsilon_total(params, feeder.stats, v_min, v_max, feeder.red.kappa_kron, model,
                            m_star, provenance, feeder.red.n(), model.horizon(), delta_m);
          release = release_dp_powerflow(feeder.red, feeder.inj, model, irradiance, rel_days,
                                         pf_cfg, report, v_min, v_max, rng);
          break;
        }
        case MechanismKind::DpgmmPlusGauss: {
          const PrivacyReport report =
              epsilon_total(params, feeder.stats, v_min, v_max, feeder.red.kappa_kron, model,
                            m_star, provenance, feeder.red.n(), model.horizon(), delta_m);
          release = release_dpgmm_plus_gauss(feeder.red, feeder.inj, model, irradiance, rel_days,
                                             pf_cfg, report, v_min, v_max, table.delta2_y,
                                             rel_eps, rel_delta, rng);
          break;
        }
        case MechanismKind::JointVoltageNoise: {
          if (rel_panel.empty()) throw InputError("joint_voltage_noise needs --panel");
          const MechanismRelease base = release_noise_free(
              feeder.red, feeder.inj, panel, irradiance, rel_days, pf_cfg, v_min, v_max);
          release = release_joint_voltage(base, table.delta2_y, table.delta2_load_to_v,
                                          rel_eps_load, rel_eps, rel_delta, rng);
          break;
        }
        case MechanismKind::NoisyLoadsPlusGauss: {
          if (rel_panel.empty()) throw InputError("noisy_loads_plus_gauss needs --panel");
          double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
          for (const auto& cls : model.classes) {
            lo = std::min(lo, cls.p_min);
            hi = std::max(hi, cls.p_max);
          }
          release = release_noisy_loads_plus_gauss(
              feeder.red, feeder.inj, panel, irradiance, rel_days, pf_cfg, lo, hi, rel_eps_load,
              rel_delta_load, table.delta2_y, rel_eps, rel_delta, v_min, v_max, rng, 0);
          break;
        }
        default:
          throw InputError("unsupported mechanism");
      }
    }
    save_release(release, out_path);
    return 0;
  }

  if (eval_cmd->parsed()) {
    const MechanismRelease a = load_release(eval_a);
    const MechanismRelease b = load_release(eval_b);
    const W1Mode mode = eval_mode == "per_bus" ? W1Mode::PerBus : W1Mode::Pooled;
    const double w1 = release_w1(a, b, mode);
    std::cout << "w1," << format_double(w1) << "\n";
    return 0;
  }

  if (sweep_cmd->parsed()) {
    if (sweep_config.empty()) sweep_config = config_path;
    if (sweep_config.empty()) throw InputError("sweep needs --config <experiment.json>");
    ExperimentConfig cfg = load_experiment_config(sweep_config);
    if (!out_path.empty()) cfg.out_dir = out_path;
    if (cfg.out_dir.empty())
      throw InputError("sweep needs an output directory (out_dir or --out)");
    SweepInputs inputs;
    inputs.network = load_feeder(cfg.feeder_path);
    inputs.panel = load_panel_csv(cfg.load_panel_path, cfg.resolution_minutes);
    inputs.irradiance = load_irradiance_csv(cfg.irradiance_path);
    const EvaluationReport report = run_sweep(inputs, cfg);
    save_evaluation_report(report, cfg, cfg.out_dir);
    std::cout << "sweep complete: " << cfg.out_dir << "/sweep_results.csv\n";
    return 0;
  }

  if (gen_cmd->parsed()) {
    if (out_path.empty()) throw InputError("gen-data requires --out <directory>");
    std::filesystem::create_directories(out_path);
    const std::filesystem::path dir(out_path);
    save_feeder(reference_feeder(), (dir / "reference_feeder.json").string());
    save_feeder(three_bus_example(), (dir / "feeder_3bus.json").string());
    save_panel_csv(generate_reference_panel(gen_days, seed), (dir / "load_panel.csv").string());
    save_irradiance_csv(reference_irradiance(), (dir / "irradiance.csv").string());
    std::cout << "reference data written to " << out_path << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dpgrid::InadmissibleError& e) {
    std::cerr << "privacy inadmissibility: " << e.what() << "\n";
    return 3;
  } catch (const dpgrid::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const dpgrid::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
