#include "dpgrid/reference.hpp"

#include <cmath>

#include <Eigen/Cholesky>

#include "dpgrid/rng.hpp"

namespace dpgrid {

namespace {

constexpr int kSteps = 96;
constexpr int kLaterals = 10;

Complex admittance_from_impedance(double resistance, double reactance) {
  return 1.0 / Complex(resistance, reactance);
}

MatD ar1_covariance(int horizon, double sigma, double rho) {
  MatD cov(horizon, horizon);
  for (int i = 0; i < horizon; ++i)
    for (int j = 0; j < horizon; ++j) cov(i, j) = sigma * sigma * std::pow(rho, std::abs(i - j));
  return cov;
}

VecD daily_shape(double base_level, double amp1, double phase1, double amp2, double phase2) {
  VecD mu(kSteps);
  for (int t = 0; t < kSteps; ++t) {
    mu(t) = std::log(base_level) + amp1 * std::sin(2.0 * kPi * (t - phase1) / kSteps) +
            amp2 * std::sin(4.0 * kPi * (t - phase2) / kSteps);
  }
  return mu;
}

struct ClassSpec {
  double theta_deg;
  VecD mu;
  double sigma;
  double rho;
};

std::vector<ClassSpec> class_specs() {
  return {
      {18.0, daily_shape(0.20, 0.20, 34.0, 0.05, 10.0), 0.22, 0.85},  // heads
      {26.0, daily_shape(0.15, 0.25, 60.0, 0.08, 5.0), 0.25, 0.85},   // mids
      {32.0, daily_shape(0.12, 0.18, 50.0, 0.06, 20.0), 0.28, 0.85},  // leaves
  };
}

Bus load_bus(const std::string& id, int class_id, double theta_deg) {
  Bus bus;
  bus.id = id;
  bus.kind = BusKind::Load;
  bus.class_id = class_id;
  bus.power_factor_deg = theta_deg;
  return bus;
}

Bus plain_bus(const std::string& id, BusKind kind) {
  Bus bus;
  bus.id = id;
  bus.kind = kind;
  return bus;
}

}  // namespace

NetworkModel reference_feeder() {
  NetworkModel network;
  network.slack_voltage = Complex(1.0, 0.0);
  network.v_min = 0.96;
  network.v_max = 1.04;

  const auto specs = class_specs();
  network.buses.push_back(plain_bus("sub", BusKind::Slack));

  const Complex y_slack = admittance_from_impedance(0.008, 0.004);    // slack - head
  const Complex y_upper = admittance_from_impedance(0.014, 0.007);    // head - junction
  const Complex y_lower = admittance_from_impedance(0.014, 0.007);    // junction - mid
  const Complex y_leaf = admittance_from_impedance(0.020, 0.010);     // mid - leaf

  VoltVarCurve pv_curve;
  pv_curve.points = {{0.95, 0.045}, {1.05, -0.045}};

  for (int i = 0; i < kLaterals; ++i) {
    const std::string head = "h" + std::to_string(i);
    const std::string junction = "j" + std::to_string(i);
    const std::string mid = "m" + std::to_string(i);
    const std::string leaf = "l" + std::to_string(i);

    network.buses.push_back(load_bus(head, 0, specs[0].theta_deg));
    network.buses.push_back(plain_bus(junction, BusKind::ZeroInjection));
    network.buses.push_back(load_bus(mid, 1, specs[1].theta_deg));
    if (i < 9) {
      if (i < 3) {
        Bus pv = plain_bus(leaf, BusKind::Pv);
        pv.gamma = 0.3;
        pv.voltvar = pv_curve;
        network.buses.push_back(std::move(pv));
      } else {
        network.buses.push_back(load_bus(leaf, 2, specs[2].theta_deg));
      }
    }

    network.lines.push_back({"sub", head, y_slack, Complex(0, 0), true});
    network.lines.push_back({head, junction, y_upper, Complex(0, 0), true});
    network.lines.push_back({junction, mid, y_lower, Complex(0, 0), true});
    if (i < 9) network.lines.push_back({mid, leaf, y_leaf, Complex(0, 0), true});
  }
  network.validate();
  return network;
}

std::vector<LoadClassModel> reference_true_classes() {
  const auto specs = class_specs();
  const NetworkModel network = reference_feeder();
  std::vector<LoadClassModel> classes;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    LoadClassModel cls;
    cls.class_id = static_cast<int>(c);
    cls.theta_deg = specs[c].theta_deg;
    cls.mu = specs[c].mu;
    cls.sigma_t = ar1_covariance(kSteps, specs[c].sigma, specs[c].rho);
    // Wide truth margins: +-5 sigma around the extreme mean levels.
    cls.p_min = std::exp(cls.mu.minCoeff() - 5.0 * specs[c].sigma);
    cls.p_max = std::exp(cls.mu.maxCoeff() + 5.0 * specs[c].sigma);
    for (const auto& bus : network.buses)
      if (bus.kind == BusKind::Load && bus.class_id && *bus.class_id == static_cast<int>(c))
        cls.member_bus_ids.push_back(bus.id);
    cls.validate();
    classes.push_back(std::move(cls));
  }
  return classes;
}

LoadPanel generate_reference_panel(int days, std::uint64_t seed) {
  if (days < 1) throw InputError("days must be >= 1");
  const auto classes = reference_true_classes();
  LoadPanel panel;
  panel.resolution_minutes = 15;

  std::vector<int> class_of_bus;
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (const auto& id : classes[c].member_bus_ids) {
      panel.bus_ids.push_back(id);
      class_of_bus.push_back(static_cast<int>(c));
    }

  std::vector<Eigen::LLT<MatD>> chols;
  for (const auto& cls : classes) chols.emplace_back(cls.sigma_t);

  const int n = static_cast<int>(panel.bus_ids.size());
  panel.values.resize(n, days * kSteps);
  Rng root(seed);
  for (int bus = 0; bus < n; ++bus) {
    const auto& cls = classes[class_of_bus[bus]];
    const auto& chol = chols[class_of_bus[bus]];
    for (int day = 0; day < days; ++day) {
      Rng draw = root.substream(static_cast<std::uint64_t>(bus) * 100000 + day);
      VecD z(kSteps);
      for (int t = 0; t < kSteps; ++t) z(t) = draw.normal();
      panel.values.block(bus, day * kSteps, 1, kSteps) =
          (cls.mu + chol.matrixL() * z).array().exp().matrix().transpose();
    }
  }
  panel.validate();
  return panel;
}

VecD reference_irradiance() {
  VecD h = VecD::Zero(kSteps);
  for (int t = 26; t < 70; ++t) h(t) = std::pow(std::sin(kPi * (t - 26) / 44.0), 1.3);
  return h;
}

NetworkModel three_bus_example() {
  NetworkModel network;
  network.slack_voltage = Complex(1.0, 0.0);
  network.v_min = 0.95;
  network.v_max = 1.05;
  Bus one = plain_bus("1", BusKind::Load);
  Bus three = plain_bus("3", BusKind::Load);
  network.buses.push_back(std::move(one));
  network.buses.push_back(plain_bus("2", BusKind::ZeroInjection));
  network.buses.push_back(std::move(three));
  network.lines.push_back({"1", "2", Complex(1.0, 0.0), Complex(0, 0), true});
  network.lines.push_back({"2", "3", Complex(1.0, 0.0), Complex(0, 0), true});
  network.validate();
  return network;
}

NetworkModel validation_feeder() {
  NetworkModel network;
  network.slack_voltage = Complex(1.0, 0.0);
  network.v_min = 0.95;
  network.v_max = 1.05;
  network.buses.push_back(plain_bus("s", BusKind::Slack));
  network.buses.push_back(load_bus("a", 0, 15.0));
  network.buses.push_back(load_bus("b", 0, 25.0));
  network.lines.push_back({"s", "a", admittance_from_impedance(0.004, 0.002), Complex(0, 0), true});
  network.lines.push_back({"a", "b", admittance_from_impedance(0.008, 0.004), Complex(0, 0), true});
  network.validate();
  return network;
}

FeederLoadModel validation_load_model() {
  FeederLoadModel model;
  model.resolution_minutes = 360;  // T = 4 steps per day
  LoadClassModel cls;
  cls.class_id = 0;
  cls.theta_deg = 20.0;
  cls.mu = VecD::Constant(4, std::log(2.0));
  cls.sigma_t = ar1_covariance(4, 0.15, 0.6);
  cls.p_min = 1.25;
  cls.p_max = 3.2;
  cls.member_bus_ids = {"a", "b"};
  cls.validate();
  model.classes.push_back(std::move(cls));
  model.validate();
  return model;
}

}  // namespace dpgrid
