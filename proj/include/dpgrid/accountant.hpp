#pragma once

#include <utility>
#include <vector>

#include "dpgrid/loadmodel.hpp"
#include "dpgrid/network.hpp"
#include "dpgrid/powerflow.hpp"
#include "dpgrid/rng.hpp"
#include "dpgrid/types.hpp"

namespace dpgrid {

/// Physical r-adjacency: Frobenius radius on the full admittance matrix,
/// together with the failure probability budget of the guarantee.
struct AdjacencyParams {
  double r = 0.0;
  double delta = 0.05;

  void validate() const;
};

enum class MStarProvenance { ClosedForm, MonteCarlo };

struct ClassBound {
  int class_id = 0;
  int members = 0;
  double p_min = 0.0;
  double d_ell = 0.0;          // V_max^2 sqrt(d_max) / p_min
  double gamma_ell = 0.0;      // 1' |Sigma^-1| 1
  double one_sigma_one = 0.0;  // 1' Sigma 1
  double bias_contribution = 0.0;
};

/// Every quantity of the trajectory-level privacy guarantee, with the
/// intermediates needed to audit it.
struct PrivacyReport {
  double epsilon = 0.0;
  double delta = 0.0;        // tail budget of the chi^2 bound
  double delta_m = 0.0;      // Monte Carlo calibration exceedance (0 for closed form)
  double delta_total = 0.0;  // delta + delta_m
  double alpha = 0.0;
  double lambda_bar_ii = 0.0;
  double psi_bar = 0.0;
  double tau = 0.0;
  double total_bias = 0.0;  // B: Jacobian term + psi_bar^2/2 + beta bias
  double m_tilde_star = 0.0;
  MStarProvenance provenance = MStarProvenance::ClosedForm;
  bool admissible = false;
  double c_star = 0.0;
  double kappa = 1.0;
  double r = 0.0;
  double v_min = 0.0;
  double v_max = 0.0;
  int n = 0;
  int horizon = 0;
  int d_max = 0;
  std::vector<ClassBound> classes;
};

/// Monte Carlo calibration of the normalized-Jacobian norm threshold.
struct CalibrationResult {
  double mu0 = 0.0;
  double mu0_prime = 0.0;
  int exceedances = 0;  // trajectories with any step above mu0' (or solver failure)
  int trials = 0;
  int step_exceedances = 0;
  int solver_failures = 0;
  double confidence = 0.95;
  double delta_m_upper = 0.0;  // one-sided Clopper-Pearson upper bound
};

/// d_ell = V_max^2 sqrt(d_max) / p_min.
double sensitivity_d(double v_max, int d_max, double p_min_ell);

/// gamma = sum_{t,t'} |[Sigma^-1]_{tt'}|. Rejects near-singular covariances.
double precision_sum(const MatD& sigma_t);

/// psi_bar = kappa r sqrt(sum_l d_l^2 gamma_l) over (d_ell, gamma_ell) pairs.
double psi_bar(double kappa, double r, const std::vector<std::pair<double, double>>& classes);

/// tau(delta) = sqrt(nT + 2 sqrt(nT log(1/delta)) + 2 log(1/delta)).
double chi2_tail_tau(int n, int horizon, double delta);

/// Injection-likelihood bound: psi tau + psi^2/2 + kappa r sum_l d_l
/// sqrt(gamma_l |C_l|) sqrt(1' Sigma_l 1).
double term1_bound(double psi, double tau, double kappa, double r,
                   const std::vector<ClassBound>& classes);

/// C_star = sqrt(2) (1 + sqrt(n) V_max / V_min).
double c_star(int n, double v_min, double v_max);

/// alpha = ||M~^-1||_star C_star kappa r.
double alpha_param(double m_tilde_star, int n, double v_min, double v_max, double kappa, double r);

/// Jacobian-ratio bound T sqrt(n) alpha (2 + alpha) / (2 (1 - 4 alpha));
/// requires alpha < 1/4.
double term2_bound(double alpha, int n, int horizon);

/// Per-class accountant inputs derived from a fitted load model.
std::vector<ClassBound> class_bounds(const FeederLoadModel& model, int d_max, double v_max);

/// The full trajectory-level guarantee: epsilon = B + psi_bar tau(delta).
PrivacyReport epsilon_total(const AdjacencyParams& params, const NetworkStats& stats,
                            double v_min, double v_max, double kappa,
                            const FeederLoadModel& model, double m_tilde_star,
                            MStarProvenance provenance, int n, int horizon,
                            double delta_m = 0.0);

/// Closed-form upper bound on ||M~^-1||_star from network data alone:
/// 1 / (sigma_M - C3 Dinf - C_vv - C_star kappa r). Rejects a nonpositive
/// denominator, advising Monte Carlo calibration instead.
double m_tilde_closed_form(const NetworkStats& stats, double v_min, double v_max, int n,
                           double kappa, double r, double c_vv = 0.0);

/// C_vv = h_max max_k gamma_k ||phi_k'||_inf / V_min over the pv buses.
double voltvar_constant(const InjectionModel& inj, double h_max, double v_min, double v_max);

/// Exact one-sided Clopper-Pearson upper confidence bound for a binomial
/// proportion (bisection on the binomial tail to 1e-12).
double clopper_pearson_upper(int successes, int trials, double confidence);

/// P(Bin(n, p) <= k), computed in log space.
double binomial_cdf(int k, int n, double p);

struct McCalibrateConfig {
  double mu0 = 1.0;
  int trajectories = 59;
  double confidence = 0.95;
  PowerFlowConfig powerflow;
};

/// Remark-style calibration: draws trajectories from the load model, solves
/// power flow, and counts trajectories with any step where ||M~^-1||_op
/// exceeds mu0' = mu0 / (1 + mu0 C_star kappa r). Solver failures count as
/// exceedances. The resulting guarantee is (epsilon, delta + delta_m).
CalibrationResult mc_calibrate(const KronReduction& red, const InjectionModel& inj,
                               const FeederLoadModel& model, const VecD& irradiance,
                               const AdjacencyParams& params, double kappa, double v_min,
                               double v_max, const McCalibrateConfig& cfg, const Rng& rng);

/// Shallow copy of a reduction with a perturbed admittance (shared b, phi).
KronReduction with_admittance(const KronReduction& red, const MatC& y_new);

/// Empirical log-likelihood ratio of a released trajectory between Y and Y':
/// term1 via the per-bus midpoint formula on the implied log-loads, term2 as
/// the summed log volume-factor ratio. The validation oracle for the
/// trajectory-level guarantee.
std::pair<double, double> empirical_llr(const KronReduction& red_y,
                                        const KronReduction& red_yprime,
                                        const std::vector<VecC>& trajectory,
                                        const InjectionModel& inj, const FeederLoadModel& model,
                                        const VecD& irradiance);

/// Draws a random reduced perturbation Delta Y with ||Delta Y||_F = kappa r
/// inside the numerical null space of the power-factor-consistency constraints
/// linearized at the sampled voltages. Delta Y is complex symmetric.
MatC construct_adjacent_y(const KronReduction& red, const InjectionModel& inj,
                          const std::vector<VecC>& v_samples, double r, double kappa, Rng& rng);

/// Budgets used to evaluate the Gaussian baseline noise rows.
struct BaselineBudget {
  double eps = 1.0;
  double delta = 0.05;
  double eps_load = 1.0;
  double delta_load = 0.05;
  double eps_y = 1.0;
  double delta_y = 0.05;
};

/// Per-sample l2 sensitivities and per-mechanism noise standard deviations.
struct SensitivityTable {
  double delta2_y = 0.0;        // V_max^2 sqrt(n) kappa r ||M~^-1||_star / V_min
  double delta2_load_to_v = 0.0;  // sqrt(2) Delta_load ||M~^-1||_star / V_min
  double sigma_gauss_voltage = 0.0;
  double sigma_gauss_on_y = 0.0;
  double sigma_joint = 0.0;
  double sigma_dpgmm_voltage = 0.0;
  double sigma_noisy_load = 0.0;
  double sigma_noisy_voltage = 0.0;
};

/// sigma = sqrt(T) delta2 sqrt(2 ln(1.25/delta)) / eps; zero at eps = inf.
double gaussian_sigma(double delta2, double eps, double delta, int horizon);

SensitivityTable baseline_sensitivities(double v_min, double v_max, int n, double kappa, double r,
                                        double m_tilde_star, double load_range, int n_loads,
                                        int horizon, const BaselineBudget& budget);

}  // namespace dpgrid
