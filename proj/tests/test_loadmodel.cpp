#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "dpgrid/loadmodel.hpp"
#include "dpgrid/rng.hpp"

using namespace dpgrid;

namespace {

LoadPanel planted_panel(int buses_per_cluster, int steps, double level_a, double level_b) {
  LoadPanel panel;
  panel.resolution_minutes = 1440 / steps;
  panel.values.resize(2 * buses_per_cluster, steps);
  Rng rng(1234);
  for (int b = 0; b < 2 * buses_per_cluster; ++b) {
    const double level = b < buses_per_cluster ? level_a : level_b;
    panel.bus_ids.push_back("bus" + std::to_string(b));
    for (int t = 0; t < steps; ++t)
      panel.values(b, t) = level * std::exp(0.05 * rng.normal());
  }
  return panel;
}

LoadClassModel simple_class(int horizon, double mu, double sigma, double p_min, double p_max) {
  LoadClassModel cls;
  cls.class_id = 0;
  cls.theta_deg = 0.0;
  cls.mu = VecD::Constant(horizon, mu);
  cls.sigma_t = sigma * sigma * MatD::Identity(horizon, horizon);
  cls.p_min = p_min;
  cls.p_max = p_max;
  cls.member_bus_ids = {"a"};
  return cls;
}

}  // namespace

TEST_CASE("partition into one class or singletons") {
  const LoadPanel panel = planted_panel(3, 8, 0.5, 2.0);
  SUBCASE("single class holds every bus") {
    const auto assignment = partition_classes(panel, 1, 7);
    for (int a : assignment) CHECK(a == 0);
  }
  SUBCASE("as many classes as buses gives singletons") {
    const auto assignment = partition_classes(panel, panel.n_buses(), 7);
    std::vector<int> counts(panel.n_buses(), 0);
    for (int a : assignment) ++counts[a];
    for (int count : counts) CHECK(count == 1);
  }
  SUBCASE("more classes than buses is rejected") {
    CHECK_THROWS_AS(partition_classes(panel, panel.n_buses() + 1, 7), InputError);
  }
}

TEST_CASE("well-separated clusters are recovered exactly") {
  const LoadPanel panel = planted_panel(4, 8, 0.3, 3.0);
  const auto assignment = partition_classes(panel, 2, 21);
  // All buses of each planted cluster share a label, and the labels differ.
  for (int b = 1; b < 4; ++b) CHECK(assignment[b] == assignment[0]);
  for (int b = 5; b < 8; ++b) CHECK(assignment[b] == assignment[4]);
  CHECK(assignment[0] != assignment[4]);
}

TEST_CASE("non-private fit returns clipped empirical moments") {
  Rng rng(5);
  std::vector<VecD> records;
  for (int i = 0; i < 40; ++i) {
    VecD record(3);
    for (int t = 0; t < 3; ++t) record(t) = -1.0 + 0.3 * rng.normal();
    records.push_back(record);
  }
  DpFitConfig cfg;  // eps = inf
  Rng fit_rng(9);
  const auto [mu, sigma] = fit_dp_gaussian(records, cfg, -3.0, 1.0, fit_rng);

  VecD mean = VecD::Zero(3);
  for (const auto& record : records) mean += record;
  mean /= records.size();
  MatD cov = MatD::Zero(3, 3);
  for (const auto& record : records) cov += (record - mean) * (record - mean).transpose();
  cov /= records.size();
  CHECK((mu - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sigma - cov).cwiseAbs().maxCoeff() < 1e-9);  // floor is inactive here
}

TEST_CASE("degenerate data hits the eigenvalue floor") {
  std::vector<VecD> records(5, VecD::Constant(4, -0.2));
  DpFitConfig cfg;
  Rng rng(1);
  const auto [mu, sigma] = fit_dp_gaussian(records, cfg, -1.0, 1.0, rng);
  CHECK((mu - VecD::Constant(4, -0.2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sigma - cfg.eigenvalue_floor * MatD::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fewer than two profiles is rejected") {
  std::vector<VecD> records(1, VecD::Constant(4, -0.2));
  DpFitConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(fit_dp_gaussian(records, cfg, -1.0, 1.0, rng), InputError);
}

TEST_CASE("seeded private fit replays the recorded noise draws") {
  Rng rng(5);
  std::vector<VecD> records;
  for (int i = 0; i < 30; ++i) {
    VecD record(3);
    for (int t = 0; t < 3; ++t) record(t) = -1.0 + 0.2 * rng.normal();
    records.push_back(record);
  }
  DpFitConfig cfg;
  cfg.eps_load = 1.0;
  cfg.delta_load = 1e-4;
  const double lo = -3.0, hi = 1.0;
  Rng fit_rng(777);
  const auto [mu, sigma] = fit_dp_gaussian(records, cfg, lo, hi, fit_rng);

  // Replay: clipped empirical mean plus the same Gaussian-mechanism draws.
  const double center = 0.5 * (lo + hi);
  const double radius = cfg.clip_ball_fraction * 0.5 * (hi - lo) * std::sqrt(3.0);
  VecD mean = VecD::Zero(3);
  for (auto record : records) {
    VecD y = record.cwiseMax(lo).cwiseMin(hi).array() - center;
    if (y.norm() > radius) y *= radius / y.norm();
    mean += y;
  }
  mean /= records.size();
  const double eps_mean = cfg.mean_budget_fraction * cfg.eps_load;
  const double delta_mean = cfg.mean_budget_fraction * cfg.delta_load;
  const double sigma_mean =
      (2.0 * radius / records.size()) * std::sqrt(2.0 * std::log(1.25 / delta_mean)) / eps_mean;
  Rng replay(777);
  VecD expected = mean;
  for (int t = 0; t < 3; ++t) expected(t) += sigma_mean * replay.normal();
  CHECK((mu - (expected.array() + center).matrix()).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::SelfAdjointEigenSolver<MatD> eigen(sigma);
  CHECK(eigen.eigenvalues().minCoeff() >= cfg.eigenvalue_floor - 1e-12);
}

TEST_CASE("truncated sampling") {
  SUBCASE("inactive truncation recovers the untruncated mean") {
    const LoadClassModel cls = simple_class(3, 0.0, 0.1, std::exp(-10.0), std::exp(10.0));
    const MatD loads = sample_truncated_loads(cls, 10000, Rng(31));
    const double mean_log = loads.array().log().mean();
    CHECK(std::abs(mean_log) < 3.0 * 0.1 / std::sqrt(3.0 * 10000.0));
  }
  SUBCASE("vanishing box mass fails with advice") {
    const LoadClassModel cls = simple_class(3, 0.0, 0.1, 1.0, 1.0 + 1e-9);
    CHECK_THROWS_WITH_AS(sample_truncated_loads(cls, 10, Rng(3)),
                         doctest::Contains("widen"), NumericalError);
  }
  SUBCASE("every sample lies inside the margins") {
    const LoadClassModel cls = simple_class(4, std::log(0.5), 0.4, 0.35, 0.75);
    const MatD loads = sample_truncated_loads(cls, 500, Rng(7));
    CHECK((loads.array() >= cls.p_min).all());
    CHECK((loads.array() <= cls.p_max).all());
  }
  SUBCASE("unconstrained draws reproduce the covariance") {
    LoadClassModel cls = simple_class(4, 0.0, 0.2, std::exp(-10.0), std::exp(10.0));
    cls.sigma_t(0, 1) = cls.sigma_t(1, 0) = 0.02;
    const int draws = 100000;
    const MatD loads = sample_truncated_loads(cls, draws, Rng(13));
    const MatD logs = loads.array().log().matrix();
    const VecD mean = logs.colwise().mean();
    MatD cov = MatD::Zero(4, 4);
    for (int i = 0; i < draws; ++i) {
      const VecD centered = logs.row(i).transpose() - mean;
      cov += centered * centered.transpose();
    }
    cov /= draws;
    CHECK((cov - cls.sigma_t).norm() / cls.sigma_t.norm() < 0.10);
  }
}

TEST_CASE("refitting samples of a model recovers its mean") {
  const LoadClassModel truth = simple_class(4, std::log(0.4), 0.2, 0.05, 3.0);
  const int draws = 400;
  const MatD loads = sample_truncated_loads(truth, draws, Rng(41));
  std::vector<VecD> records;
  for (int i = 0; i < draws; ++i)
    records.push_back(loads.row(i).array().log().matrix().transpose());
  DpFitConfig cfg;  // eps = inf
  Rng rng(2);
  const auto [mu, sigma] = fit_dp_gaussian(records, cfg, std::log(0.05), std::log(3.0), rng);
  const double standard_error = 0.2 / std::sqrt(static_cast<double>(draws));
  CHECK((mu - truth.mu).cwiseAbs().maxCoeff() < 3.0 * standard_error);
}

TEST_CASE("reactive power from the fixed power factor") {
  CHECK(reactive_from_active(1.0, 0.0) == 0.0);
  CHECK(reactive_from_active(1.0, 45.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(reactive_from_active(2.0, -30.0) ==
        doctest::Approx(2.0 * std::tan(-30.0 * kPi / 180.0)).epsilon(1e-12));
  CHECK(reactive_from_active(2.0, -30.0) == doctest::Approx(-1.15470).epsilon(1e-5));
}

TEST_CASE("pv injection phasor") {
  CHECK(std::abs(pv_injection(1.0, 0.0, 0.3)) == 0.0);
  CHECK(std::abs(pv_injection(2.0, 0.5, 0.0) - Complex(1.0, 0.0)) < 1e-15);
  const Complex unit30 = pv_injection(1.0, 1.0, kPi / 6.0);
  CHECK(unit30.real() == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
  CHECK(unit30.imag() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("log is Lipschitz on a positive interval") {
  Rng rng(77);
  const double p_min = 0.2, p_max = 5.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const double x = rng.uniform(p_min, p_max);
    const double y = rng.uniform(p_min, p_max);
    CHECK(std::abs(std::log(x) - std::log(y)) <= std::abs(x - y) / p_min + 1e-15);
  }
}
