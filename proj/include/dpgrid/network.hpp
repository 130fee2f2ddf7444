#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpgrid/types.hpp"

namespace dpgrid {

enum class BusKind { Slack, Load, Pv, ZeroInjection };

/// Piecewise-linear volt-var curve: injection angle [rad] as a function of
/// local voltage magnitude [p.u.]. Flat extrapolation outside the breakpoints;
/// the derivative at a breakpoint is taken from the right.
struct VoltVarCurve {
  std::vector<std::pair<double, double>> points;  // (magnitude, angle)

  void validate() const;
  double angle(double vmag) const;
  double slope(double vmag) const;
  /// sup |phi'| over [lo, hi].
  double max_abs_slope(double lo, double hi) const;
};

struct Bus {
  std::string id;
  BusKind kind = BusKind::Load;
  std::optional<int> class_id;          // load buses
  double gamma = 0.0;                   // pv capacity, p.u.
  double power_factor_deg = 0.0;        // load buses, in (-90, 90)
  std::optional<VoltVarCurve> voltvar;  // pv buses
};

struct Line {
  std::string from;
  std::string to;
  Complex series;  // series admittance, p.u.
  Complex shunt;   // shunt admittance attached at each end, p.u.
  bool closed = true;
};

/// Feeder description. A single-phase positive-sequence model: each bus is one
/// scalar node. At most one slack bus; all power-flow operations require
/// exactly one, network-analysis operations (admittance build, Kron reduction)
/// also accept slackless models.
struct NetworkModel {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  Complex slack_voltage{1.0, 0.0};
  double v_min = 0.95;
  double v_max = 1.05;

  void validate() const;
  const Bus* find_bus(const std::string& id) const;
  int slack_count() const;
};

/// Full nodal admittance matrix with its bus ordering.
struct FullAdmittance {
  MatC matrix;                                      // N x N
  std::vector<std::string> bus_ids;                 // index -> id
  std::unordered_map<std::string, int> bus_index;   // id -> index
};

/// Result of eliminating zero-injection buses and separating the slack.
///
/// y_reduced and b define the power-flow system over the retained non-slack
/// buses: s = diag(v) conj(y_reduced v + b). Zero-injection voltages are
/// recovered affinely: v_z = phi v_r + phi_slack v_slack (phi_slack is empty
/// when the model has no slack bus).
struct KronReduction {
  MatC y_reduced;                       // n x n over retained non-slack buses
  VecC b;                               // n, slack-induced constant-current offset
  MatC phi;                             // (N - n_ret) x n recovery map
  VecC phi_slack;                       // zero-bus coupling to the slack (may be empty)
  Complex slack_voltage{1.0, 0.0};
  std::vector<std::string> retained_ids;  // non-slack retained buses, in order
  std::vector<std::string> zero_ids;      // eliminated buses, in order
  std::optional<std::string> slack_id;
  double kappa_kron = 1.0;

  int n() const { return static_cast<int>(y_reduced.rows()); }
  int n_zero() const { return static_cast<int>(zero_ids.size()); }
};

/// Constants of the reduced network used by the privacy accountant.
struct NetworkStats {
  int d_max = 0;           // max off-diagonal structural degree of y_reduced
  double sigma_min_y = 0;  // smallest singular value of y_reduced
  double flat_mismatch = 0;  // ||Y 1 + b||_inf
  double row_sum_norm = 0;   // ||Y||_{inf->inf}
};

/// Assembles the full nodal admittance matrix. Open lines contribute nothing;
/// each closed line (i,j) adds its series admittance to both diagonals and
/// subtracts it off-diagonal, and adds the per-end shunt to each diagonal.
/// Rejects self-loop lines and graphs whose closed lines leave the network
/// disconnected (listing the components).
FullAdmittance build_admittance(const NetworkModel& network);

/// Kron reduction: eliminates zero-injection buses via the Schur complement
/// and forms the slack offset b from the zero-eliminated coupling column
/// scaled by the slack voltage.
KronReduction kron_reduce(const FullAdmittance& y_full, const NetworkModel& network);

/// Core Schur-complement elimination over explicit index sets (no slack).
/// retained/zero partition the row indices of y_full.matrix.
struct Elimination {
  MatC y_reduced;
  MatC phi;
};
Elimination eliminate_indices(const MatC& y_full, const std::vector<int>& retained,
                              const std::vector<int>& zero);

/// v_z = phi v_r + phi_slack v_slack.
VecC recover_zero_voltages(const KronReduction& red, const VecC& v_retained);

/// Kron amplification factor 1 + 2 a + a^2 with
/// a = ||Y_RZ||_op ||Y_ZZ^-1||_op, over the zero-injection partition (all
/// non-zero-injection buses retained). Equals 1 for an empty zero set.
double kappa_kron(const FullAdmittance& y_full, const NetworkModel& network);

NetworkStats network_stats(const KronReduction& red);

}  // namespace dpgrid
