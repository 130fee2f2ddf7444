#include <doctest.h>

#include <cmath>

#include "dpgrid/harness.hpp"
#include "dpgrid/mechanisms.hpp"
#include "dpgrid/reference.hpp"
#include "helpers.hpp"

using namespace dpgrid;
using namespace dpgrid::testing;

namespace {

struct ValidationSetup {
  NetworkModel network;
  KronReduction red;
  InjectionModel inj;
  FeederLoadModel model;
  VecD irradiance = VecD::Zero(4);
  PowerFlowConfig cfg;
  PrivacyReport report;  // tagging only

  ValidationSetup() : network(validation_feeder()) {
    red = kron_reduce(build_admittance(network), network);
    inj = injection_model(network, red);
    model = validation_load_model();
    report.epsilon = 12.5;
    report.delta = 0.05;
    report.delta_total = 0.05;
  }
};

FeederLoadModel degenerate_model(double level) {
  FeederLoadModel model = validation_load_model();
  model.classes[0].mu = VecD::Constant(4, std::log(level));
  model.classes[0].sigma_t = 1e-12 * MatD::Identity(4, 4);
  model.classes[0].p_min = level * (1.0 - 1e-5);
  model.classes[0].p_max = level * (1.0 + 1e-5);
  return model;
}

bool identical_voltages(const MechanismRelease& a, const MechanismRelease& b) {
  if (a.days() != b.days()) return false;
  for (int d = 0; d < a.days(); ++d)
    if ((a.voltages[d] - b.voltages[d]).cwiseAbs().maxCoeff() != 0.0) return false;
  return true;
}

LoadPanel panel_from_model(const ValidationSetup& setup, int days, std::uint64_t seed) {
  LoadPanel panel;
  panel.resolution_minutes = 360;
  panel.bus_ids = {"a", "b"};
  panel.values.resize(2, 4 * days);
  for (int day = 0; day < days; ++day) {
    const MatD loads = sample_truncated_loads(setup.model.classes[0], 2, Rng(seed + day));
    panel.values.block(0, 4 * day, 2, 4) = loads;
  }
  return panel;
}

}  // namespace

TEST_CASE("budget composition") {
  CHECK(compose_budget(3.0, 0.01, 1) == std::pair<double, double>{3.0, 0.01});
  CHECK(compose_budget(25.0, 0.05, 7).first == doctest::Approx(175.0));
  // The experiment sweeps these per-day values.
  for (double eps : {25.0, 30.0, 50.0, 100.0, 200.0})
    CHECK(compose_budget(eps, 0.05, 2).first == doctest::Approx(2.0 * eps));
}

TEST_CASE("dp powerflow release") {
  ValidationSetup setup;
  SUBCASE("collapsed randomness reproduces the deterministic solve") {
    const FeederLoadModel degenerate = degenerate_model(2.0);
    const MechanismRelease release =
        release_dp_powerflow(setup.red, setup.inj, degenerate, setup.irradiance, 1, setup.cfg,
                             setup.report, setup.network.v_min, setup.network.v_max, Rng(2));
    const VoltageSolution expected =
        solve_powerflow(setup.red, setup.inj.at(VecD::Constant(2, 2.0), 0.0), setup.cfg,
                        setup.network.v_min, setup.network.v_max);
    REQUIRE(expected.converged);
    for (int t = 0; t < 4; ++t)
      for (int k = 0; k < 2; ++k)
        CHECK(std::abs(release.voltages[0](t, k) - expected.v(k)) < 1e-4);
  }
  SUBCASE("good-set accounting and budget tagging") {
    const MechanismRelease release =
        release_dp_powerflow(setup.red, setup.inj, setup.model, setup.irradiance, 2, setup.cfg,
                             setup.report, setup.network.v_min, setup.network.v_max, Rng(3));
    CHECK(release.days() == 2);
    CHECK(release.eps_day == doctest::Approx(12.5));
    CHECK(release.eps_total == doctest::Approx(25.0));
    CHECK(release.solver_failures == 0);
    CHECK(release.good_set_violations >= 0);
  }
  SUBCASE("fixed seed replay is bit-identical") {
    const MechanismRelease first =
        release_dp_powerflow(setup.red, setup.inj, setup.model, setup.irradiance, 2, setup.cfg,
                             setup.report, setup.network.v_min, setup.network.v_max, Rng(7));
    const MechanismRelease second =
        release_dp_powerflow(setup.red, setup.inj, setup.model, setup.irradiance, 2, setup.cfg,
                             setup.report, setup.network.v_min, setup.network.v_max, Rng(7));
    CHECK(identical_voltages(first, second));
  }
}

TEST_CASE("gaussian voltage release") {
  ValidationSetup setup;
  const LoadPanel panel = panel_from_model(setup, 1, 100);
  const MechanismRelease base =
      release_noise_free(setup.red, setup.inj, panel, setup.irradiance, 1, setup.cfg,
                         setup.network.v_min, setup.network.v_max);
  SUBCASE("infinite budget is the identity") {
    const MechanismRelease noised = release_gaussian_voltage(
        base, MechanismKind::JointVoltageNoise, 1.0,
        std::numeric_limits<double>::infinity(), 0.05, Rng(5));
    CHECK(identical_voltages(base, noised));
  }
  SUBCASE("noise standard deviation matches the Table row") {
    // Large synthetic panel: 1e6 noise draws.
    MechanismRelease wide = base;
    wide.horizon = 1000;
    wide.bus_ids.assign(500, "x");
    wide.voltages.assign(1, MatC::Zero(1000, 500));
    const MechanismRelease noised = release_gaussian_voltage(
        wide, MechanismKind::JointVoltageNoise, 1.0, 1.0, 0.05, Rng(11));
    const double sigma_expected = std::sqrt(1000.0) * std::sqrt(2.0 * std::log(25.0));
    CHECK(noised.noise_sigma == doctest::Approx(sigma_expected).epsilon(1e-12));
    double ss = 0.0;
    for (int t = 0; t < 1000; ++t)
      for (int k = 0; k < 500; ++k) ss += std::norm(noised.voltages[0](t, k));
    const double sample_sigma = std::sqrt(ss / (2.0 * 1000.0 * 500.0));
    CHECK(sample_sigma == doctest::Approx(sigma_expected).epsilon(0.02));
  }
  SUBCASE("per-day sensitivity scales with sqrt horizon") {
    CHECK(gaussian_sigma(0.3, 2.0, 0.05, 192) ==
          doctest::Approx(std::sqrt(2.0) * gaussian_sigma(0.3, 2.0, 0.05, 96)).epsilon(1e-12));
  }
}

TEST_CASE("joint voltage mechanism") {
  ValidationSetup setup;
  const LoadPanel panel = panel_from_model(setup, 1, 200);
  const MechanismRelease base =
      release_noise_free(setup.red, setup.inj, panel, setup.irradiance, 1, setup.cfg,
                         setup.network.v_min, setup.network.v_max);
  SUBCASE("larger admittance sensitivity reduces to the plain voltage mechanism") {
    const MechanismRelease joint = release_joint_voltage(base, 0.4, 0.1, 9.0, 2.0, 0.05, Rng(13));
    const MechanismRelease plain = release_gaussian_voltage(
        base, MechanismKind::JointVoltageNoise, 0.4, 2.0, 0.05, Rng(13));
    CHECK(identical_voltages(joint, plain));
  }
  SUBCASE("the maximum of the two sensitivities is used") {
    const MechanismRelease joint =
        release_joint_voltage(base, 0.0232105, 0.1488646, 5.0, 5.0, 0.05, Rng(17));
    CHECK(joint.noise_sigma ==
          doctest::Approx(gaussian_sigma(0.1488646, 5.0, 0.05, 4)).epsilon(1e-12));
  }
  SUBCASE("infinite budgets collapse to the noise-free baseline") {
    const double inf = std::numeric_limits<double>::infinity();
    const MechanismRelease joint = release_joint_voltage(base, 0.4, 0.1, inf, inf, 0.05, Rng(19));
    CHECK(identical_voltages(base, joint));
  }
}

TEST_CASE("dpgmm plus gaussian voltage mechanism") {
  ValidationSetup setup;
  SUBCASE("collapsed randomness plus infinite voltage budget is deterministic") {
    const FeederLoadModel degenerate = degenerate_model(2.0);
    const double inf = std::numeric_limits<double>::infinity();
    const MechanismRelease release = release_dpgmm_plus_gauss(
        setup.red, setup.inj, degenerate, setup.irradiance, 1, setup.cfg, setup.report,
        setup.network.v_min, setup.network.v_max, 0.02, inf, 0.05, Rng(23));
    const VoltageSolution expected =
        solve_powerflow(setup.red, setup.inj.at(VecD::Constant(2, 2.0), 0.0), setup.cfg,
                        setup.network.v_min, setup.network.v_max);
    for (int t = 0; t < 4; ++t)
      for (int k = 0; k < 2; ++k)
        CHECK(std::abs(release.voltages[0](t, k) - expected.v(k)) < 1e-4);
  }
  SUBCASE("matches the composition of its two stages at matched seeds") {
    const MechanismRelease composed = release_dpgmm_plus_gauss(
        setup.red, setup.inj, setup.model, setup.irradiance, 2, setup.cfg, setup.report,
        setup.network.v_min, setup.network.v_max, 0.02, 40.0, 0.05, Rng(29));
    const MechanismRelease stage1 =
        release_dp_powerflow(setup.red, setup.inj, setup.model, setup.irradiance, 2, setup.cfg,
                             setup.report, setup.network.v_min, setup.network.v_max,
                             Rng(29).substream(1));
    const MechanismRelease stage2 = release_gaussian_voltage(
        stage1, MechanismKind::DpgmmPlusGauss, 0.02, 40.0, 0.05, Rng(29).substream(2));
    CHECK(identical_voltages(composed, stage2));
  }
  SUBCASE("seeded replay is deterministic") {
    const MechanismRelease a = release_dpgmm_plus_gauss(
        setup.red, setup.inj, setup.model, setup.irradiance, 1, setup.cfg, setup.report,
        setup.network.v_min, setup.network.v_max, 0.02, 40.0, 0.05, Rng(31));
    const MechanismRelease b = release_dpgmm_plus_gauss(
        setup.red, setup.inj, setup.model, setup.irradiance, 1, setup.cfg, setup.report,
        setup.network.v_min, setup.network.v_max, 0.02, 40.0, 0.05, Rng(31));
    CHECK(identical_voltages(a, b));
  }
}

TEST_CASE("noisy loads plus gaussian voltage mechanism") {
  ValidationSetup setup;
  const LoadPanel panel = panel_from_model(setup, 2, 300);
  const double inf = std::numeric_limits<double>::infinity();
  SUBCASE("infinite budgets equal the noise-free baseline") {
    const MechanismRelease noisy = release_noisy_loads_plus_gauss(
        setup.red, setup.inj, panel, setup.irradiance, 2, setup.cfg, setup.model.classes[0].p_min,
        setup.model.classes[0].p_max, inf, 0.05, 0.02, inf, 0.05, setup.network.v_min,
        setup.network.v_max, Rng(37), 0);
    const MechanismRelease base =
        release_noise_free(setup.red, setup.inj, panel, setup.irradiance, 2, setup.cfg,
                           setup.network.v_min, setup.network.v_max);
    CHECK(identical_voltages(noisy, base));
  }
  SUBCASE("finite budgets stay solvable because loads are clipped to range") {
    const MechanismRelease noisy = release_noisy_loads_plus_gauss(
        setup.red, setup.inj, panel, setup.irradiance, 2, setup.cfg, setup.model.classes[0].p_min,
        setup.model.classes[0].p_max, 20.0, 0.01, 0.02, 20.0, 0.01, setup.network.v_min,
        setup.network.v_max, Rng(41), 0);
    CHECK(noisy.days() == 2);
    CHECK(noisy.solver_failures == 0);
    for (int d = 0; d < 2; ++d) CHECK(noisy.voltages[d].allFinite());
  }
}
