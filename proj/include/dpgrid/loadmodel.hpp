#pragma once

#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "dpgrid/rng.hpp"
#include "dpgrid/types.hpp"

namespace dpgrid {

/// Historical active-load panel: rows are load buses, columns time steps.
/// Entries are strictly positive (logs are taken during fitting).
struct LoadPanel {
  MatD values;                     // n_L x T_total, p.u.
  std::vector<std::string> bus_ids;
  int resolution_minutes = 15;

  void validate() const;
  int n_buses() const { return static_cast<int>(values.rows()); }
  int total_steps() const { return static_cast<int>(values.cols()); }
  int steps_per_day() const;
  int days() const { return total_steps() / steps_per_day(); }
};

/// One load class: log-loads of member buses are i.i.d. N(mu, sigma_t),
/// truncated so that exp(xi) stays inside [p_min, p_max]^T, with a fixed
/// power factor angle.
struct LoadClassModel {
  int class_id = 0;
  VecD mu;          // T, log-space mean profile
  MatD sigma_t;     // T x T, positive definite
  double theta_deg = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  std::vector<std::string> member_bus_ids;

  void validate() const;
  int horizon() const { return static_cast<int>(mu.size()); }
};

struct DpFitConfig {
  double eps_load = std::numeric_limits<double>::infinity();
  double delta_load = 1e-5;
  /// Budget fraction spent on the mean; the covariance takes the rest. The
  /// T x T covariance is by far the harder release, so the mean gets a small
  /// slice by default.
  double mean_budget_fraction = 0.2;
  /// PSD projection floor. Under a private fit the effective floor is raised
  /// to the noise bulk edge 2 sigma_cov sqrt(T): eigenvalues below it are
  /// indistinguishable from the mechanism noise, and letting them through
  /// would make the sampled model spuriously near-singular (and the precision
  /// sum of the accountant explode).
  double eigenvalue_floor = 1e-6;
  double margin_widen_fraction = 0.1;  // widening of observed per-class min/max
  /// L2 clip radius as a fraction of the half clip-box diagonal; records are
  /// clipped to the box and then projected onto this ball, which tightens the
  /// covariance sensitivity without touching typical records.
  double clip_ball_fraction = 0.3;
  /// Optional global clip bounds in log space; per-class data-driven margins
  /// are used when unset (NaN).
  double log_clip_min = std::numeric_limits<double>::quiet_NaN();
  double log_clip_max = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
  bool is_private() const { return std::isfinite(eps_load); }
};

/// All load classes of a feeder plus the sampling resolution.
struct FeederLoadModel {
  std::vector<LoadClassModel> classes;
  int resolution_minutes = 15;

  void validate() const;
  int horizon() const { return classes.empty() ? 0 : classes.front().horizon(); }
  /// Index into classes, or -1 when the bus is not a member anywhere.
  int class_of(const std::string& bus_id) const;
};

/// k-means (fixed-seed, multi-restart) on per-bus mean log day-profiles.
/// Returns one class index in [0, L) per panel row.
std::vector<int> partition_classes(const LoadPanel& panel, int n_classes, std::uint64_t seed);

/// Gaussian-mechanism fit of (mu, sigma) to log-load records clipped to
/// [log_lo, log_hi]: noise on the mean and on the vectorized covariance with
/// the configured budget split, then projection to the PSD cone with the
/// eigenvalue floor. With eps_load = inf the clipped empirical moments are
/// returned (floored). Requires at least two records.
std::pair<VecD, MatD> fit_dp_gaussian(const std::vector<VecD>& log_records,
                                      const DpFitConfig& cfg, double log_lo, double log_hi,
                                      Rng& rng);

/// Full Phase-1 pipeline: partition panel rows into classes, set per-class
/// margins (observed min/max widened, unless overridden), fit each class.
/// Power factor angles are taken from `theta_by_bus` (degrees, one per panel
/// row); members of a class share the average.
FeederLoadModel fit_load_model(const LoadPanel& panel, const std::vector<double>& theta_by_bus,
                               int n_classes, const DpFitConfig& cfg, Rng& rng);

/// Rejection sampler for the truncated class distribution; caches the
/// Cholesky factor and a pilot acceptance estimate.
class TruncatedSampler {
 public:
  /// Estimates acceptance from `pilot_draws` pilot samples; fails when the
  /// truncation box has estimated acceptance below `min_acceptance`.
  TruncatedSampler(const LoadClassModel& model, Rng pilot_rng, int pilot_draws = 1000,
                   double min_acceptance = 1e-4);

  /// One accepted log-load vector.
  VecD draw_log(Rng& rng) const;
  /// rows i.i.d. truncated draws, exponentiated; row i uses rng.substream(i).
  MatD sample(int rows, const Rng& rng) const;

  double acceptance_estimate() const { return acceptance_; }

 private:
  const LoadClassModel* model_;
  Eigen::LLT<MatD> chol_;
  double acceptance_ = 1.0;
  long max_attempts_ = 0;
};

/// rows i.i.d. draws from N(mu, sigma_t) conditioned on exp(xi) in
/// [p_min, p_max]^T, exponentiated. Every entry lies inside the margins.
MatD sample_truncated_loads(const LoadClassModel& model, int rows, const Rng& rng);

/// q = tan(theta) p.
double reactive_from_active(double active, double theta_deg);

/// gamma h e^{j phi}.
Complex pv_injection(double gamma, double irradiance, double phi_angle_rad);

}  // namespace dpgrid
