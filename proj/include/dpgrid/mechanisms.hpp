#pragma once

#include <limits>
#include <string>
#include <vector>

#include "dpgrid/accountant.hpp"
#include "dpgrid/loadmodel.hpp"
#include "dpgrid/network.hpp"
#include "dpgrid/powerflow.hpp"
#include "dpgrid/rng.hpp"

namespace dpgrid {

enum class MechanismKind {
  DpPowerflow,
  NoiseFree,
  JointVoltageNoise,
  DpgmmPlusGauss,
  NoisyLoadsPlusGauss,
};

std::string mechanism_name(MechanismKind kind);
MechanismKind mechanism_from_name(const std::string& name);

/// A released voltage panel: one T x n complex matrix per day, tagged with the
/// mechanism and the spent budget. eps_total = days * eps_day under basic
/// composition; the noise-free baseline carries an infinite budget marker.
struct MechanismRelease {
  MechanismKind kind = MechanismKind::NoiseFree;
  std::vector<MatC> voltages;  // per day, horizon x n
  std::vector<std::string> bus_ids;
  int horizon = 0;
  double eps_day = std::numeric_limits<double>::infinity();
  double delta_day = 0.0;
  double eps_total = std::numeric_limits<double>::infinity();
  double delta_total = 0.0;
  std::uint64_t seed = 0;
  // Metadata.
  int good_set_violations = 0;
  int solver_failures = 0;
  double min_truncation_acceptance = 1.0;
  double eps_load = std::numeric_limits<double>::infinity();
  double noise_sigma = 0.0;

  int days() const { return static_cast<int>(voltages.size()); }
  bool noise_free() const { return std::isinf(eps_day); }
};

/// eps_total = days * eps_day, delta_total = days * delta_day.
std::pair<double, double> compose_budget(double eps_day, double delta_day, int days);

/// The proposed mechanism: per day, draw truncated synthetic loads from the
/// fitted model, solve power flow on the true admittance, release the voltages
/// with no added noise. The privacy tag comes from the accountant report.
/// Any unrecoverable solver failure aborts the day (no partial release).
MechanismRelease release_dp_powerflow(const KronReduction& red, const InjectionModel& inj,
                                      const FeederLoadModel& model, const VecD& irradiance,
                                      int days, const PowerFlowConfig& cfg,
                                      const PrivacyReport& report, double v_min, double v_max,
                                      const Rng& rng);

/// Replays historical loads through the true admittance (infinite budget).
MechanismRelease release_noise_free(const KronReduction& red, const InjectionModel& inj,
                                    const LoadPanel& panel, const VecD& irradiance, int days,
                                    const PowerFlowConfig& cfg, double v_min, double v_max,
                                    int start_day = 0);

/// Adds i.i.d. Gaussian noise (per the Table-II voltage row) to the real and
/// imaginary parts of every voltage sample of `base`.
MechanismRelease release_gaussian_voltage(const MechanismRelease& base, MechanismKind kind,
                                          double delta2, double eps, double delta,
                                          const Rng& rng);

/// One Gaussian mechanism on the noise-free voltages protecting both the
/// admittance and the loads: sensitivity max(delta2_y, delta2_load_to_v),
/// budget min(eps_load, eps).
MechanismRelease release_joint_voltage(const MechanismRelease& noise_free_base, double delta2_y,
                                       double delta2_load_to_v, double eps_load, double eps,
                                       double delta, const Rng& rng);

/// DP-fitted loads through the true admittance plus Gaussian voltage noise at
/// the admittance sensitivity.
MechanismRelease release_dpgmm_plus_gauss(const KronReduction& red, const InjectionModel& inj,
                                          const FeederLoadModel& model, const VecD& irradiance,
                                          int days, const PowerFlowConfig& cfg,
                                          const PrivacyReport& report, double v_min, double v_max,
                                          double delta2_y, double eps_y, double delta_y,
                                          const Rng& rng);

/// i.i.d. Gaussian noise on the historical load panel (clipped to the global
/// margins), solved on the true admittance, plus Gaussian voltage noise.
MechanismRelease release_noisy_loads_plus_gauss(const KronReduction& red,
                                                const InjectionModel& inj, const LoadPanel& panel,
                                                const VecD& irradiance, int days,
                                                const PowerFlowConfig& cfg, double p_min,
                                                double p_max, double eps_load, double delta_load,
                                                double delta2_y, double eps_y, double delta_y,
                                                double v_min, double v_max, const Rng& rng,
                                                int start_day = 0);

}  // namespace dpgrid
