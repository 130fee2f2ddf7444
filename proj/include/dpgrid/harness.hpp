#pragma once

#include <string>
#include <vector>

#include "dpgrid/accountant.hpp"
#include "dpgrid/loadmodel.hpp"
#include "dpgrid/mechanisms.hpp"
#include "dpgrid/network.hpp"

namespace dpgrid {

/// One-dimensional Wasserstein-1 distance between empirical distributions.
/// Equal sizes reduce to the mean absolute difference of sorted samples;
/// unequal sizes integrate |F_a^-1 - F_b^-1| over merged quantile breakpoints.
double wasserstein1(std::vector<double> a, std::vector<double> b);

enum class W1Mode { Pooled, PerBus };

/// |v| samples of a release: pooled across buses, days and steps, or one list
/// per bus (for the per-bus-averaged W1 mode).
std::vector<double> magnitude_samples(const MechanismRelease& release);
double release_w1(const MechanismRelease& a, const MechanismRelease& b, W1Mode mode);

struct ExperimentConfig {
  std::string feeder_path;
  std::string load_panel_path;
  std::string irradiance_path;
  std::vector<double> eps_grid{25, 30, 50, 100, 200};
  double delta = 0.05;
  double r = 2e-5;
  int days = 2;
  int repetitions = 20;
  std::uint64_t seed = 1;
  std::string out_dir;
  W1Mode w1_mode = W1Mode::Pooled;
  int n_classes = 3;
  int resolution_minutes = 15;  // panel time resolution (sidecar declaration)
  DpFitConfig fit;
  PowerFlowConfig powerflow;
  // Monte Carlo calibration of the Jacobian norm threshold.
  double mu0 = 0.0;  // <= 0 selects the automatic pilot-based threshold
  int calibration_trajectories = 59;
  double confidence = 0.95;
  int eps_load_grid_points = 8;
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
};

struct SweepCell {
  MechanismKind mechanism;
  double eps_target = 0.0;
  double mean_w1 = 0.0;
  double std_w1 = 0.0;
  int repetitions_used = 0;
  int repetitions_excluded = 0;
  std::vector<double> w1_values;
};

struct EvaluationReport {
  std::vector<SweepCell> cells;
  double floor_w1 = 0.0;  // noise-free resample of equal size vs the baseline
  std::vector<double> selected_eps_load;  // per grid point, proposed mechanism
  std::vector<PrivacyReport> privacy_reports;  // per grid point
  CalibrationResult calibration;
  FeasibilityAudit audit;
  bool ordering_dp_le_dpgmm = false;
  bool ordering_dpgmm_le_joint = false;
  bool ordering_dpgmm_le_noisy = false;
  int ordering_points_satisfied = 0;  // grid points where all three orderings hold

  const SweepCell* find(MechanismKind kind, double eps) const;
};

/// Materialized sweep inputs (the file-level CLI wrapper loads these).
struct SweepInputs {
  NetworkModel network;
  LoadPanel panel;
  VecD irradiance;
};

/// Full Wasserstein experiment: fits the DP load model per epsilon target
/// (grid-searched eps_load under the accountant constraint), runs every
/// mechanism at every grid point over the configured repetitions, and compares
/// voltage magnitude distributions against the noise-free baseline.
EvaluationReport run_sweep(const SweepInputs& inputs, const ExperimentConfig& cfg);

}  // namespace dpgrid
