#pragma once

#include "dpgrid/network.hpp"
#include "dpgrid/powerflow.hpp"
#include "dpgrid/rng.hpp"

namespace dpgrid::testing {

/// Single-bus system y = [10], b = [-10]: the quadratic 10 v^2 - 10 v + p = 0.
inline KronReduction one_bus_reduction() {
  KronReduction red;
  red.y_reduced = MatC::Constant(1, 1, Complex(10.0, 0.0));
  red.b = VecC::Constant(1, Complex(-10.0, 0.0));
  red.phi = MatC::Zero(0, 1);
  red.phi_slack = VecC::Zero(0);
  red.slack_voltage = Complex(1.0, 0.0);
  red.retained_ids = {"x"};
  red.slack_id = "s";
  red.kappa_kron = 1.0;
  return red;
}

inline InjectionSpec plain_load_spec(const VecD& p, const VecD& tan_theta) {
  InjectionSpec spec;
  spec.active_load = p;
  spec.power_factor_tan = tan_theta;
  spec.pv_capacity = VecD::Zero(p.size());
  spec.irradiance = 0.0;
  spec.voltvar.resize(p.size());
  return spec;
}

inline InjectionSpec one_bus_spec(double p) {
  return plain_load_spec(VecD::Constant(1, p), VecD::Zero(1));
}

/// Random connected slackless network of loads with a few zero-injection
/// buses; admittances have positive real part.
inline NetworkModel random_network(Rng& rng, int n_buses, int n_zero) {
  NetworkModel network;
  network.v_min = 0.95;
  network.v_max = 1.05;
  for (int i = 0; i < n_buses; ++i) {
    Bus bus;
    bus.id = std::to_string(i);
    bus.kind = i < n_zero ? BusKind::ZeroInjection : BusKind::Load;
    network.buses.push_back(std::move(bus));
  }
  auto random_admittance = [&rng]() {
    return Complex(0.5 + 2.0 * rng.uniform(), -1.5 * rng.uniform());
  };
  // Random spanning tree plus a few chords.
  for (int i = 1; i < n_buses; ++i) {
    const int j = static_cast<int>(rng.integer(i));
    network.lines.push_back({std::to_string(i), std::to_string(j), random_admittance(),
                             Complex(0, 0), true});
  }
  const int chords = n_buses / 3;
  for (int c = 0; c < chords; ++c) {
    const int i = static_cast<int>(rng.integer(n_buses));
    const int j = static_cast<int>(rng.integer(n_buses));
    if (i == j) continue;
    network.lines.push_back({std::to_string(i), std::to_string(j), random_admittance(),
                             Complex(0, 0), true});
  }
  return network;
}

/// Central finite differences of the effective residual map
/// v -> F(v) - s^g(v) in real coordinates.
inline MatD fd_real_jacobian(const KronReduction& red, const VecC& v, const InjectionSpec& spec,
                             double step = 1e-6) {
  const int n = red.n();
  auto residual = [&](const VecC& voltage) {
    const VecC value = evaluate_injection(red, voltage) - spec.generation(voltage);
    VecD out(2 * n);
    out.head(n) = value.real();
    out.tail(n) = value.imag();
    return out;
  };
  MatD jac(2 * n, 2 * n);
  for (int c = 0; c < 2 * n; ++c) {
    VecC plus = v, minus = v;
    if (c < n) {
      plus(c) += step;
      minus(c) -= step;
    } else {
      plus(c - n) += Complex(0.0, step);
      minus(c - n) -= Complex(0.0, step);
    }
    jac.col(c) = (residual(plus) - residual(minus)) / (2.0 * step);
  }
  return jac;
}

}  // namespace dpgrid::testing
