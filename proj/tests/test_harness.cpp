#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dpgrid/harness.hpp"
#include "dpgrid/io.hpp"
#include "dpgrid/reference.hpp"
#include "helpers.hpp"

using namespace dpgrid;

namespace {

/// Independent W1 oracle: integrate |F_a(x) - F_b(x)| over the merged support
/// (the CDF form of the 1-d optimal transport cost).
double w1_cdf_oracle(std::vector<double> a, std::vector<double> b) {
  std::vector<double> merged;
  merged.insert(merged.end(), a.begin(), a.end());
  merged.insert(merged.end(), b.begin(), b.end());
  std::sort(merged.begin(), merged.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cdf = [](const std::vector<double>& sorted, double x) {
    return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin()) /
           sorted.size();
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < merged.size(); ++i) {
    const double width = merged[i + 1] - merged[i];
    if (width <= 0.0) continue;
    total += width * std::abs(cdf(a, merged[i]) - cdf(b, merged[i]));
  }
  return total;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("wasserstein distance basics") {
  CHECK(wasserstein1({1.0, 2.0, 3.0}, {3.0, 1.0, 2.0}) == 0.0);
  CHECK(wasserstein1({0.0, 0.0}, {1.0, 1.0}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(wasserstein1({}, {1.0}), InputError);
}

TEST_CASE("wasserstein distance agrees with the CDF-form oracle") {
  Rng rng(61);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> a(3 + rng.integer(40)), b(3 + rng.integer(40));
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = 0.3 + 0.8 * rng.normal();
    CHECK(wasserstein1(a, b) == doctest::Approx(w1_cdf_oracle(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("wasserstein distance is a metric on samples") {
  Rng rng(67);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(5 + rng.integer(20)), b(5 + rng.integer(20)), c(5 + rng.integer(20));
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    for (auto& x : c) x = rng.normal();
    const double ab = wasserstein1(a, b);
    const double ba = wasserstein1(b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-12);
  }
}

TEST_CASE("feeder document round trip") {
  const NetworkModel network = reference_feeder();
  const auto dir = temp_dir("dpgrid_feeder_roundtrip");
  save_feeder(network, (dir / "feeder.json").string());
  const NetworkModel loaded = load_feeder((dir / "feeder.json").string());
  REQUIRE(loaded.buses.size() == network.buses.size());
  for (std::size_t i = 0; i < network.buses.size(); ++i) {
    CHECK(loaded.buses[i].id == network.buses[i].id);
    CHECK(loaded.buses[i].kind == network.buses[i].kind);
    CHECK(loaded.buses[i].gamma == network.buses[i].gamma);
    CHECK(loaded.buses[i].power_factor_deg == network.buses[i].power_factor_deg);
  }
  REQUIRE(loaded.lines.size() == network.lines.size());
  for (std::size_t i = 0; i < network.lines.size(); ++i) {
    CHECK(loaded.lines[i].series == network.lines[i].series);
    CHECK(loaded.lines[i].shunt == network.lines[i].shunt);
  }
  CHECK(loaded.v_min == network.v_min);
  CHECK(loaded.v_max == network.v_max);
}

TEST_CASE("panel and irradiance round trips preserve every double") {
  const LoadPanel panel = generate_reference_panel(2, 71);
  const auto dir = temp_dir("dpgrid_panel_roundtrip");
  save_panel_csv(panel, (dir / "panel.csv").string());
  const LoadPanel loaded = load_panel_csv((dir / "panel.csv").string(), 15);
  CHECK(loaded.bus_ids == panel.bus_ids);
  CHECK((loaded.values - panel.values).cwiseAbs().maxCoeff() == 0.0);

  const VecD irradiance = reference_irradiance();
  save_irradiance_csv(irradiance, (dir / "irr.csv").string());
  const VecD loaded_irr = load_irradiance_csv((dir / "irr.csv").string());
  CHECK((loaded_irr - irradiance).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("model document round trip") {
  const FeederLoadModel model = validation_load_model();
  const auto dir = temp_dir("dpgrid_model_roundtrip");
  save_model_json(model, (dir / "model.json").string());
  const FeederLoadModel loaded = load_model_json((dir / "model.json").string());
  REQUIRE(loaded.classes.size() == 1);
  CHECK((loaded.classes[0].mu - model.classes[0].mu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.classes[0].sigma_t - model.classes[0].sigma_t).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.classes[0].p_min == model.classes[0].p_min);
  CHECK(loaded.classes[0].member_bus_ids == model.classes[0].member_bus_ids);
}

TEST_CASE("release round trip restores the exact voltages") {
  const NetworkModel network = validation_feeder();
  const KronReduction red = kron_reduce(build_admittance(network), network);
  const InjectionModel inj = injection_model(network, red);
  const FeederLoadModel model = validation_load_model();
  PrivacyReport report;
  report.epsilon = 3.25;
  report.delta_total = 0.05;
  const MechanismRelease release =
      release_dp_powerflow(red, inj, model, VecD::Zero(4), 2, PowerFlowConfig{}, report,
                           network.v_min, network.v_max, Rng(73));
  const auto dir = temp_dir("dpgrid_release_roundtrip");
  save_release(release, dir.string());
  const MechanismRelease loaded = load_release(dir.string());
  CHECK(loaded.kind == release.kind);
  CHECK(loaded.eps_day == release.eps_day);
  CHECK(loaded.seed == release.seed);
  REQUIRE(loaded.days() == release.days());
  for (int d = 0; d < release.days(); ++d)
    CHECK((loaded.voltages[d] - release.voltages[d]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mini sweep on the validation feeder") {
  // Panel from the validation model: 6 days of 4 steps.
  const NetworkModel network = validation_feeder();
  const FeederLoadModel truth = validation_load_model();
  LoadPanel panel;
  panel.resolution_minutes = 360;
  panel.bus_ids = {"a", "b"};
  panel.values.resize(2, 4 * 30);
  for (int day = 0; day < 30; ++day)
    panel.values.block(0, 4 * day, 2, 4) =
        sample_truncated_loads(truth.classes[0], 2, Rng(1000 + day));

  SweepInputs inputs{network, panel, VecD::Zero(4)};
  ExperimentConfig cfg;
  cfg.eps_grid = {50.0, 100.0};
  cfg.delta = 0.05;
  cfg.r = 1e-3;
  cfg.days = 2;
  cfg.repetitions = 3;
  cfg.seed = 77;
  cfg.n_classes = 1;
  cfg.resolution_minutes = 360;
  cfg.calibration_trajectories = 19;
  cfg.eps_load_grid_points = 3;
  cfg.fit.delta_load = 1e-4;

  const EvaluationReport report = run_sweep(inputs, cfg);
  CHECK(report.cells.size() == 8);  // 2 grid points x 4 mechanisms
  CHECK(report.floor_w1 > 0.0);
  CHECK(report.calibration.trials == 19);
  for (const auto& cell : report.cells) {
    CHECK(cell.repetitions_used == 3);
    CHECK(cell.repetitions_excluded == 0);
    CHECK(cell.mean_w1 >= 0.0);
  }
  // Determinism of the whole report.
  const EvaluationReport again = run_sweep(inputs, cfg);
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    CHECK(report.cells[i].mean_w1 == again.cells[i].mean_w1);
    CHECK(report.cells[i].std_w1 == again.cells[i].std_w1);
  }
  // Emission, byte-identical across repeated runs of the same config.
  const auto dir = temp_dir("dpgrid_sweep_report");
  save_evaluation_report(report, cfg, (dir / "first").string());
  save_evaluation_report(again, cfg, (dir / "second").string());
  CHECK(std::filesystem::exists(dir / "first" / "sweep_results.csv"));
  CHECK(std::filesystem::exists(dir / "first" / "sweep_report.json"));
  auto file_bytes = [](const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(file_bytes(dir / "first" / "sweep_results.csv") ==
        file_bytes(dir / "second" / "sweep_results.csv"));
  CHECK(file_bytes(dir / "first" / "sweep_report.json") ==
        file_bytes(dir / "second" / "sweep_report.json"));
}
