#include "dpgrid/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <set>
#include <sstream>

#include <Eigen/SVD>

namespace dpgrid {

void VoltVarCurve::validate() const {
  if (points.empty()) throw InputError("volt-var curve has no breakpoints");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].second < -kPi / 2 || points[i].second > kPi / 2)
      throw InputError("volt-var angle outside [-pi/2, pi/2]");
    if (i > 0 && points[i].first <= points[i - 1].first)
      throw InputError("volt-var magnitudes must be strictly increasing");
    if (!std::isfinite(points[i].first) || !std::isfinite(points[i].second))
      throw InputError("volt-var breakpoint not finite");
  }
}

double VoltVarCurve::angle(double vmag) const {
  if (vmag <= points.front().first) return points.front().second;
  if (vmag >= points.back().first) return points.back().second;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (vmag < points[i].first) {
      const auto& [u0, a0] = points[i - 1];
      const auto& [u1, a1] = points[i];
      return a0 + (a1 - a0) * (vmag - u0) / (u1 - u0);
    }
  }
  return points.back().second;
}

double VoltVarCurve::slope(double vmag) const {
  // Derivative from the right; zero outside the breakpoint range.
  if (vmag < points.front().first || vmag >= points.back().first) return 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (vmag < points[i].first) {
      const auto& [u0, a0] = points[i - 1];
      const auto& [u1, a1] = points[i];
      return (a1 - a0) / (u1 - u0);
    }
  }
  return 0.0;
}

double VoltVarCurve::max_abs_slope(double lo, double hi) const {
  double worst = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& [u0, a0] = points[i - 1];
    const auto& [u1, a1] = points[i];
    if (u1 <= lo || u0 >= hi) continue;
    worst = std::max(worst, std::abs((a1 - a0) / (u1 - u0)));
  }
  return worst;
}

void NetworkModel::validate() const {
  if (buses.empty()) throw InputError("network has no buses");
  if (!(v_min > 0) || !(v_min < v_max)) throw InputError("requires 0 < v_min < v_max");
  std::set<std::string> seen;
  for (const auto& bus : buses) {
    if (!seen.insert(bus.id).second) throw InputError("duplicate bus id: " + bus.id);
    if (bus.kind == BusKind::Load &&
        (bus.power_factor_deg <= -90.0 || bus.power_factor_deg >= 90.0))
      throw InputError("power factor angle of bus " + bus.id + " outside (-90, 90)");
    if (bus.kind == BusKind::Pv && bus.gamma < 0)
      throw InputError("negative pv capacity at bus " + bus.id);
    if (bus.voltvar) bus.voltvar->validate();
  }
  if (slack_count() > 1) throw InputError("more than one slack bus");
  for (const auto& line : lines) {
    if (!find_bus(line.from)) throw InputError("line endpoint unknown: " + line.from);
    if (!find_bus(line.to)) throw InputError("line endpoint unknown: " + line.to);
    if (line.closed && line.series == Complex(0.0, 0.0))
      throw InputError("closed line " + line.from + "-" + line.to + " has zero series admittance");
  }
}

const Bus* NetworkModel::find_bus(const std::string& id) const {
  for (const auto& bus : buses)
    if (bus.id == id) return &bus;
  return nullptr;
}

int NetworkModel::slack_count() const {
  int count = 0;
  for (const auto& bus : buses)
    if (bus.kind == BusKind::Slack) ++count;
  return count;
}

namespace {

std::vector<std::vector<int>> connected_components(int n,
                                                   const std::vector<std::pair<int, int>>& edges) {
  std::vector<std::vector<int>> adjacency(n);
  for (const auto& [a, b] : edges) {
    adjacency[a].push_back(b);
    adjacency[b].push_back(a);
  }
  std::vector<int> component(n, -1);
  std::vector<std::vector<int>> components;
  for (int start = 0; start < n; ++start) {
    if (component[start] >= 0) continue;
    components.emplace_back();
    std::queue<int> frontier;
    frontier.push(start);
    component[start] = static_cast<int>(components.size()) - 1;
    while (!frontier.empty()) {
      const int node = frontier.front();
      frontier.pop();
      components.back().push_back(node);
      for (int next : adjacency[node]) {
        if (component[next] < 0) {
          component[next] = component[node];
          frontier.push(next);
        }
      }
    }
  }
  return components;
}

}  // namespace

FullAdmittance build_admittance(const NetworkModel& network) {
  network.validate();
  FullAdmittance result;
  const int n = static_cast<int>(network.buses.size());
  result.matrix = MatC::Zero(n, n);
  result.bus_ids.reserve(n);
  for (int i = 0; i < n; ++i) {
    result.bus_ids.push_back(network.buses[i].id);
    result.bus_index[network.buses[i].id] = i;
  }

  std::vector<std::pair<int, int>> closed_edges;
  for (const auto& line : network.lines) {
    const int i = result.bus_index.at(line.from);
    const int j = result.bus_index.at(line.to);
    if (i == j) throw InputError("line with duplicate endpoints at bus " + line.from);
    if (!line.closed) continue;
    closed_edges.emplace_back(i, j);
    result.matrix(i, i) += line.series + line.shunt;
    result.matrix(j, j) += line.series + line.shunt;
    result.matrix(i, j) -= line.series;
    result.matrix(j, i) -= line.series;
  }

  const auto components = connected_components(n, closed_edges);
  if (components.size() > 1) {
    std::ostringstream message;
    message << "closed-line graph is disconnected into " << components.size() << " components:";
    for (const auto& component : components) {
      message << " {";
      for (std::size_t k = 0; k < component.size(); ++k)
        message << (k ? "," : "") << result.bus_ids[component[k]];
      message << "}";
    }
    throw InputError(message.str());
  }
  return result;
}

Elimination eliminate_indices(const MatC& y_full, const std::vector<int>& retained,
                              const std::vector<int>& zero) {
  Elimination out;
  const int nr = static_cast<int>(retained.size());
  const int nz = static_cast<int>(zero.size());
  MatC y_rr(nr, nr), y_rz(nr, nz), y_zr(nz, nr), y_zz(nz, nz);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nr; ++j) y_rr(i, j) = y_full(retained[i], retained[j]);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nz; ++j) y_rz(i, j) = y_full(retained[i], zero[j]);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nr; ++j) y_zr(i, j) = y_full(zero[i], retained[j]);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j) y_zz(i, j) = y_full(zero[i], zero[j]);

  if (nz == 0) {
    out.y_reduced = y_rr;
    out.phi = MatC::Zero(0, nr);
    return out;
  }
  Eigen::FullPivLU<MatC> lu(y_zz);
  if (!lu.isInvertible()) throw NumericalError("zero-injection block is singular");
  out.phi = -lu.solve(y_zr);
  out.y_reduced = y_rr + y_rz * out.phi;
  return out;
}

namespace {

/// Partition of the full matrix indices by bus kind.
struct Partition {
  std::vector<int> retained_all;  // non-zero-injection, slack included
  std::vector<int> retained;      // non-slack retained
  std::vector<int> zero;
  int slack = -1;
};

Partition make_partition(const FullAdmittance& y_full, const NetworkModel& network) {
  Partition part;
  for (const auto& bus : network.buses) {
    const int index = y_full.bus_index.at(bus.id);
    switch (bus.kind) {
      case BusKind::ZeroInjection:
        part.zero.push_back(index);
        break;
      case BusKind::Slack:
        part.slack = index;
        part.retained_all.push_back(index);
        break;
      default:
        part.retained.push_back(index);
        part.retained_all.push_back(index);
    }
  }
  return part;
}

/// Diagnoses a singular Y_ZZ by naming the zero-injection island responsible.
[[noreturn]] void report_singular_zero_block(const FullAdmittance& y_full,
                                             const std::vector<int>& zero) {
  // Components of the zero-injection subgraph (structural adjacency in Y).
  std::vector<std::pair<int, int>> edges;
  std::unordered_map<int, int> local;
  for (std::size_t i = 0; i < zero.size(); ++i) local[zero[i]] = static_cast<int>(i);
  for (std::size_t i = 0; i < zero.size(); ++i)
    for (std::size_t j = i + 1; j < zero.size(); ++j)
      if (y_full.matrix(zero[i], zero[j]) != Complex(0, 0))
        edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  const auto components = connected_components(static_cast<int>(zero.size()), edges);

  std::ostringstream message;
  message << "Kron reduction rejected: zero-injection block singular; offending island(s):";
  bool found = false;
  for (const auto& component : components) {
    MatC block(component.size(), component.size());
    for (std::size_t a = 0; a < component.size(); ++a)
      for (std::size_t b = 0; b < component.size(); ++b)
        block(a, b) = y_full.matrix(zero[component[a]], zero[component[b]]);
    Eigen::JacobiSVD<MatC> svd(block);
    const double smallest = svd.singularValues().tail(1)(0);
    const double largest = svd.singularValues()(0);
    if (smallest <= 1e-12 * std::max(1.0, largest)) {
      found = true;
      message << " {";
      for (std::size_t k = 0; k < component.size(); ++k)
        message << (k ? "," : "") << y_full.bus_ids[zero[component[k]]];
      message << "}";
    }
  }
  if (!found) message << " (no single island isolated; the block is jointly singular)";
  throw NumericalError(message.str());
}

double operator_norm(const MatC& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<MatC> svd(m);
  return svd.singularValues()(0);
}

double kappa_from_partition(const FullAdmittance& y_full, const Partition& part) {
  if (part.zero.empty()) return 1.0;
  const int nr = static_cast<int>(part.retained_all.size());
  const int nz = static_cast<int>(part.zero.size());
  MatC y_rz(nr, nz), y_zz(nz, nz);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nz; ++j) y_rz(i, j) = y_full.matrix(part.retained_all[i], part.zero[j]);
  for (int i = 0; i < nz; ++i)
    for (int j = 0; j < nz; ++j) y_zz(i, j) = y_full.matrix(part.zero[i], part.zero[j]);
  Eigen::JacobiSVD<MatC> svd(y_zz);
  const double sigma_min = svd.singularValues().tail(1)(0);
  if (sigma_min <= 0) report_singular_zero_block(y_full, part.zero);
  const double amplification = operator_norm(y_rz) / sigma_min;
  return 1.0 + 2.0 * amplification + amplification * amplification;
}

}  // namespace

KronReduction kron_reduce(const FullAdmittance& y_full, const NetworkModel& network) {
  const Partition part = make_partition(y_full, network);
  if (part.retained.empty()) throw InputError("no retained non-slack buses");

  Elimination elim;
  try {
    elim = eliminate_indices(y_full.matrix, part.retained_all, part.zero);
  } catch (const NumericalError&) {
    report_singular_zero_block(y_full, part.zero);
  }

  KronReduction red;
  red.slack_voltage = network.slack_voltage;
  for (int index : part.retained) red.retained_ids.push_back(y_full.bus_ids[index]);
  for (int index : part.zero) red.zero_ids.push_back(y_full.bus_ids[index]);

  // Position of each non-slack retained bus inside retained_all.
  std::vector<int> keep;
  int slack_pos = -1;
  for (std::size_t k = 0; k < part.retained_all.size(); ++k) {
    if (part.retained_all[k] == part.slack)
      slack_pos = static_cast<int>(k);
    else
      keep.push_back(static_cast<int>(k));
  }
  const int n = static_cast<int>(keep.size());
  red.y_reduced.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) red.y_reduced(i, j) = elim.y_reduced(keep[i], keep[j]);
  red.phi.resize(part.zero.size(), n);
  for (int j = 0; j < n; ++j) red.phi.col(j) = elim.phi.col(keep[j]);

  if (slack_pos >= 0) {
    red.slack_id = y_full.bus_ids[part.slack];
    red.b.resize(n);
    for (int i = 0; i < n; ++i)
      red.b(i) = elim.y_reduced(keep[i], slack_pos) * network.slack_voltage;
    red.phi_slack = elim.phi.col(slack_pos);
  } else {
    red.b = VecC::Zero(n);
    red.phi_slack = VecC::Zero(part.zero.size());
  }

  red.kappa_kron = kappa_from_partition(y_full, part);
  return red;
}

VecC recover_zero_voltages(const KronReduction& red, const VecC& v_retained) {
  if (v_retained.size() != red.y_reduced.rows())
    throw InputError("retained voltage vector has wrong dimension");
  if (red.phi.rows() == 0) return VecC();
  VecC v_zero = red.phi * v_retained;
  if (red.phi_slack.size() == red.phi.rows() && red.slack_id)
    v_zero += red.phi_slack * red.slack_voltage;
  return v_zero;
}

double kappa_kron(const FullAdmittance& y_full, const NetworkModel& network) {
  return kappa_from_partition(y_full, make_partition(y_full, network));
}

NetworkStats network_stats(const KronReduction& red) {
  NetworkStats stats;
  const MatC& y = red.y_reduced;
  const int n = red.n();
  // Kron fill-in produces tiny numerical entries; treat |Y_kj| below
  // 1e-12 ||Y||_F as structural zeros.
  const double threshold = 1e-12 * y.norm();
  for (int i = 0; i < n; ++i) {
    int degree = 0;
    for (int j = 0; j < n; ++j)
      if (j != i && std::abs(y(i, j)) >= threshold) ++degree;
    stats.d_max = std::max(stats.d_max, degree);
  }
  Eigen::JacobiSVD<MatC> svd(y);
  stats.sigma_min_y = n > 0 ? svd.singularValues().tail(1)(0) : 0.0;
  stats.flat_mismatch = (y * VecC::Ones(n) + red.b).cwiseAbs().maxCoeff();
  stats.row_sum_norm = y.cwiseAbs().rowwise().sum().maxCoeff();
  return stats;
}

}  // namespace dpgrid
