#pragma once

#include <optional>
#include <vector>

#include "dpgrid/network.hpp"
#include "dpgrid/rng.hpp"
#include "dpgrid/types.hpp"

namespace dpgrid {

struct PowerFlowConfig {
  double tol = 1e-10;       // max-norm residual in injections
  int max_iter = 50;
  enum class Init { NoLoad, Flat } init = Init::NoLoad;
  double damping = 1.0;     // initial step scale; halving line search below

  void validate() const;
};

/// Per-time-step injection data on the reduced network.
/// Loads and pv capacities are zero off their bus kinds.
struct InjectionSpec {
  VecD active_load;                            // p >= 0, n
  VecD power_factor_tan;                       // tan(theta_k), zero at non-load buses
  VecD pv_capacity;                            // gamma >= 0, n
  double irradiance = 0.0;                     // h >= 0
  std::vector<std::optional<VoltVarCurve>> voltvar;  // per bus, pv only
  /// Reduced indices of buses carrying the load density; when left empty,
  /// every bus without pv capacity counts as a load bus.
  std::vector<int> load_buses;

  int n() const { return static_cast<int>(active_load.size()); }
  std::vector<int> effective_load_buses() const;
  bool has_voltvar() const;
  /// s^g(v): pv injections gamma h e^{j phi(|v|)}.
  VecC generation(const VecC& v) const;
  /// Complex load s^p = p + j tan(theta) p.
  VecC load() const;
};

/// Static injection layout of a feeder: which retained buses carry loads and
/// pv, their power factors, capacities and curves. Built once per network.
struct InjectionModel {
  VecD power_factor_tan;   // n
  VecD pv_capacity;        // n
  std::vector<std::optional<VoltVarCurve>> voltvar;
  std::vector<int> load_buses;  // reduced indices of load buses
  std::vector<int> pv_buses;

  int n() const { return static_cast<int>(power_factor_tan.size()); }
  int n_load() const { return static_cast<int>(load_buses.size()); }
  /// Spec for one time step; loads indexed per load bus (size n_load).
  InjectionSpec at(const VecD& load_per_load_bus, double irradiance) const;
};

InjectionModel injection_model(const NetworkModel& network, const KronReduction& red);

struct VoltageSolution {
  VecC v;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  bool in_good_set = false;
  bool jacobian_singular = false;  // hit a singular iterate (stability limit)
};

/// Normalized Wirtinger Jacobian M~ of the power-flow map, with J = D(v) M~,
/// D(v) = diag(v, conj v). When `effective` is set, the volt-var correction
/// -D(v)^{-1} J_{Gamma h} has been folded in.
struct WirtingerJacobian {
  MatC m_tilde;   // 2n x 2n
  VecC d_diag;    // 2n entries of D(v)
  bool effective = false;

  int n() const { return static_cast<int>(d_diag.size()) / 2; }
};

/// s = diag(v) conj(Y v + b).
VecC evaluate_injection(const KronReduction& red, const VecC& v);

/// Closed-form inverse load map: [G^-1(v)]_k = Re s^g_k(v) - Re(v_k conj(Y v + b)_k).
VecD implied_active_load(const KronReduction& red, const VecC& v, const InjectionSpec& spec);

/// Newton solve of diag(v) conj(Y v + b) = s^g(v) - s^p on the real 2n
/// representation. The default no-load start (v0 = -Y^-1 b) selects the
/// high-voltage branch. Volt-var coupling is handled inside the Newton loop
/// through the effective Jacobian.
VoltageSolution solve_powerflow(const KronReduction& red, const InjectionSpec& spec,
                                const PowerFlowConfig& cfg, double v_min, double v_max);

WirtingerJacobian wirtinger_jacobian(const KronReduction& red, const VecC& v);
WirtingerJacobian wirtinger_jacobian(const KronReduction& red, const VecC& v,
                                     const InjectionSpec& spec);

/// Real 2n x 2n representation of the (effective) Jacobian at v.
MatD real_jacobian(const KronReduction& red, const VecC& v, const InjectionSpec& spec);

/// Real representation of a complex Wirtinger pair (A = df/dv, B = df/dvbar).
MatD real_representation(const MatC& a, const MatC& b);

/// ||M~^{-1}||_op via dense SVD.
double m_tilde_inverse_norm(const WirtingerJacobian& jac);

/// Surface volume factor |J_Y(v)| = sqrt(det(DG^T DG)), DG = -J_eff^{-1} R
/// with R the load-bus columns of [I; tan Theta]. Computed via QR of DG.
double volume_factor(const KronReduction& red, const VecC& v, const InjectionSpec& spec);
double log_volume_factor(const KronReduction& red, const VecC& v, const InjectionSpec& spec);

struct FeasibilityAuditConfig {
  int n_samples = 256;
  double v_min = 0.95;
  double v_max = 1.05;
  double max_angle_rad = 0.1;  // sampled phase span around the slack reference
  std::uint64_t seed = 0;
};

struct FeasibilityAudit {
  double min_sigma_min_jacobian = 0.0;       // (i) over sampled S_0 points
  std::vector<double> envelope_fraction;     // (ii) per class
  bool voltvar_compliant = true;             // (iii) |phi'| < 1/(gamma h_max)
  std::vector<std::string> voltvar_violations;
  int samples = 0;
};

class FeederLoadModel;  // loadmodel.hpp

/// Assumption-1 audit: (i) min sampled sigma_min(J_eff) over S_0, (ii) the
/// fraction of sampled voltages whose implied loads lie inside the per-class
/// margins, (iii) the volt-var slope condition per pv bus. Report only.
FeasibilityAudit feasibility_audit(const KronReduction& red, const InjectionModel& inj,
                                   const FeederLoadModel& loads, double h_max,
                                   const FeasibilityAuditConfig& cfg);

}  // namespace dpgrid
