#include "dpgrid/io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dpgrid {

namespace {

using json = nlohmann::ordered_json;

json complex_to_json(const Complex& z) { return json{{"re", z.real()}, {"im", z.imag()}}; }

Complex complex_from_json(const json& j) {
  if (!j.is_object() || !j.contains("re") || !j.contains("im"))
    throw InputError("complex values must be {re, im} objects");
  return Complex(j.at("re").get<double>(), j.at("im").get<double>());
}

json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("failed to parse " + path + ": " + e.what());
  }
  return j;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << contents;
  if (!out) throw InputError("failed to write " + path);
}

std::string json_to_string(const json& j) { return j.dump(2) + "\n"; }

BusKind bus_kind_from_string(const std::string& kind) {
  if (kind == "slack") return BusKind::Slack;
  if (kind == "load") return BusKind::Load;
  if (kind == "pv") return BusKind::Pv;
  if (kind == "zero-injection") return BusKind::ZeroInjection;
  throw InputError("unknown bus kind: " + kind);
}

std::string bus_kind_to_string(BusKind kind) {
  switch (kind) {
    case BusKind::Slack: return "slack";
    case BusKind::Load: return "load";
    case BusKind::Pv: return "pv";
    case BusKind::ZeroInjection: return "zero-injection";
  }
  throw InputError("unknown bus kind");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream stream(line);
  std::string field;
  while (std::getline(stream, field, ',')) fields.push_back(field);
  return fields;
}

json matrix_row_major(const MatD& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) rows.push_back(m(i, j));
  return rows;
}

}  // namespace

NetworkModel load_feeder(const std::string& path) {
  const json j = parse_file(path);
  NetworkModel network;
  for (const auto& jb : j.at("buses")) {
    Bus bus;
    bus.id = jb.at("id").get<std::string>();
    bus.kind = bus_kind_from_string(jb.at("kind").get<std::string>());
    if (jb.contains("class_id")) bus.class_id = jb.at("class_id").get<int>();
    if (jb.contains("gamma")) bus.gamma = jb.at("gamma").get<double>();
    if (jb.contains("power_factor_deg"))
      bus.power_factor_deg = jb.at("power_factor_deg").get<double>();
    if (jb.contains("voltvar")) {
      VoltVarCurve curve;
      for (const auto& point : jb.at("voltvar").at("points"))
        curve.points.emplace_back(point.at(0).get<double>(), point.at(1).get<double>());
      bus.voltvar = std::move(curve);
    }
    network.buses.push_back(std::move(bus));
  }
  for (const auto& jl : j.at("lines")) {
    Line line;
    line.from = jl.at("from").get<std::string>();
    line.to = jl.at("to").get<std::string>();
    line.series = complex_from_json(jl.at("series"));
    if (jl.contains("shunt")) line.shunt = complex_from_json(jl.at("shunt"));
    if (jl.contains("closed")) line.closed = jl.at("closed").get<bool>();
    network.lines.push_back(std::move(line));
  }
  network.slack_voltage = complex_from_json(j.at("slack_voltage"));
  network.v_min = j.at("v_min").get<double>();
  network.v_max = j.at("v_max").get<double>();
  network.validate();
  return network;
}

std::string feeder_to_json(const NetworkModel& network) {
  json j;
  j["buses"] = json::array();
  for (const auto& bus : network.buses) {
    json jb{{"id", bus.id}, {"kind", bus_kind_to_string(bus.kind)}};
    if (bus.class_id) jb["class_id"] = *bus.class_id;
    if (bus.kind == BusKind::Pv) jb["gamma"] = bus.gamma;
    if (bus.kind == BusKind::Load) jb["power_factor_deg"] = bus.power_factor_deg;
    if (bus.voltvar) {
      json points = json::array();
      for (const auto& [mag, angle] : bus.voltvar->points) points.push_back(json::array({mag, angle}));
      jb["voltvar"] = json{{"points", points}};
    }
    j["buses"].push_back(std::move(jb));
  }
  j["lines"] = json::array();
  for (const auto& line : network.lines) {
    j["lines"].push_back(json{{"from", line.from},
                              {"to", line.to},
                              {"series", complex_to_json(line.series)},
                              {"shunt", complex_to_json(line.shunt)},
                              {"closed", line.closed}});
  }
  j["slack_voltage"] = complex_to_json(network.slack_voltage);
  j["v_min"] = network.v_min;
  j["v_max"] = network.v_max;
  return json_to_string(j);
}

void save_feeder(const NetworkModel& network, const std::string& path) {
  write_file(path, feeder_to_json(network));
}

LoadPanel load_panel_csv(const std::string& path, int resolution_minutes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty panel file " + path);
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2) throw InputError("panel needs a time column and at least one bus");
  LoadPanel panel;
  panel.resolution_minutes = resolution_minutes;
  panel.bus_ids.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw InputError("panel row has " + std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()));
    std::vector<double> row;
    for (std::size_t i = 1; i < fields.size(); ++i) row.push_back(std::stod(fields[i]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("panel has no data rows");
  panel.values.resize(panel.bus_ids.size(), rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t b = 0; b < panel.bus_ids.size(); ++b) panel.values(b, t) = rows[t][b];
  panel.validate();
  return panel;
}

void save_panel_csv(const LoadPanel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << "time";
  for (const auto& id : panel.bus_ids) out << "," << id;
  out << "\n";
  for (int t = 0; t < panel.total_steps(); ++t) {
    out << t;
    for (int b = 0; b < panel.n_buses(); ++b) out << "," << format_double(panel.values(b, t));
    out << "\n";
  }
}

VecD load_irradiance_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty irradiance file");
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() < 2) throw InputError("irradiance rows need time_index,h_g");
    values.push_back(std::stod(fields[1]));
  }
  if (values.empty()) throw InputError("irradiance file has no rows");
  VecD out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out(i) = values[i];
  return out;
}

void save_irradiance_csv(const VecD& irradiance, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out << "time_index,h_g\n";
  for (int t = 0; t < irradiance.size(); ++t)
    out << t << "," << format_double(irradiance(t)) << "\n";
}

FeederLoadModel load_model_json(const std::string& path) {
  const json j = parse_file(path);
  FeederLoadModel model;
  model.resolution_minutes = j.at("resolution_minutes").get<int>();
  for (const auto& jc : j.at("classes")) {
    LoadClassModel cls;
    cls.class_id = jc.at("class_id").get<int>();
    cls.theta_deg = jc.at("theta_deg").get<double>();
    cls.p_min = jc.at("p_min").get<double>();
    cls.p_max = jc.at("p_max").get<double>();
    for (const auto& id : jc.at("member_bus_ids")) cls.member_bus_ids.push_back(id.get<std::string>());
    const auto& jmu = jc.at("mu");
    cls.mu.resize(jmu.size());
    for (std::size_t t = 0; t < jmu.size(); ++t) cls.mu(t) = jmu[t].get<double>();
    const auto& jsigma = jc.at("sigma");
    const int horizon = static_cast<int>(cls.mu.size());
    if (static_cast<int>(jsigma.size()) != horizon * horizon)
      throw InputError("sigma must be row-major with horizon^2 entries");
    cls.sigma_t.resize(horizon, horizon);
    for (int i = 0; i < horizon; ++i)
      for (int t = 0; t < horizon; ++t) cls.sigma_t(i, t) = jsigma[i * horizon + t].get<double>();
    cls.validate();
    model.classes.push_back(std::move(cls));
  }
  model.validate();
  return model;
}

std::string model_to_json(const FeederLoadModel& model) {
  json j;
  j["resolution_minutes"] = model.resolution_minutes;
  j["classes"] = json::array();
  for (const auto& cls : model.classes) {
    json jc{{"class_id", cls.class_id},
            {"member_bus_ids", cls.member_bus_ids},
            {"theta_deg", cls.theta_deg},
            {"p_min", cls.p_min},
            {"p_max", cls.p_max}};
    json mu = json::array();
    for (int t = 0; t < cls.mu.size(); ++t) mu.push_back(cls.mu(t));
    jc["mu"] = std::move(mu);
    jc["sigma"] = matrix_row_major(cls.sigma_t);
    j["classes"].push_back(std::move(jc));
  }
  return json_to_string(j);
}

void save_model_json(const FeederLoadModel& model, const std::string& path) {
  write_file(path, model_to_json(model));
}

std::string privacy_report_to_json(const PrivacyReport& report) {
  json j;
  j["epsilon"] = report.epsilon;
  j["delta"] = report.delta;
  j["delta_m"] = report.delta_m;
  j["delta_total"] = report.delta_total;
  j["admissible"] = report.admissible;
  j["alpha"] = report.alpha;
  j["lambda_bar_ii"] = report.lambda_bar_ii;
  j["psi_bar"] = report.psi_bar;
  j["tau"] = report.tau;
  j["total_bias"] = report.total_bias;
  j["m_tilde_star"] = report.m_tilde_star;
  j["m_tilde_provenance"] =
      report.provenance == MStarProvenance::ClosedForm ? "closed-form" : "monte-carlo";
  j["inputs"] = json{{"r", report.r},
                     {"kappa_kron", report.kappa},
                     {"c_star", report.c_star},
                     {"v_min", report.v_min},
                     {"v_max", report.v_max},
                     {"n", report.n},
                     {"horizon", report.horizon},
                     {"d_max", report.d_max}};
  j["classes"] = json::array();
  for (const auto& cls : report.classes) {
    j["classes"].push_back(json{{"class_id", cls.class_id},
                                {"members", cls.members},
                                {"p_min", cls.p_min},
                                {"d_ell", cls.d_ell},
                                {"gamma_ell", cls.gamma_ell},
                                {"one_sigma_one", cls.one_sigma_one},
                                {"bias_contribution", cls.bias_contribution}});
  }
  return json_to_string(j);
}

void save_privacy_report(const PrivacyReport& report, const std::string& path) {
  write_file(path, privacy_report_to_json(report));
}

std::string calibration_to_json(const CalibrationResult& result) {
  json j;
  j["mu0"] = result.mu0;
  j["mu0_prime"] = result.mu0_prime;
  j["exceedances"] = result.exceedances;
  j["trials"] = result.trials;
  j["step_exceedances"] = result.step_exceedances;
  j["solver_failures"] = result.solver_failures;
  j["confidence"] = result.confidence;
  j["delta_m_upper"] = result.delta_m_upper;
  return json_to_string(j);
}

void save_calibration(const CalibrationResult& result, const std::string& path) {
  write_file(path, calibration_to_json(result));
}

void save_release(const MechanismRelease& release, const std::string& directory) {
  std::filesystem::create_directories(directory);
  for (int day = 0; day < release.days(); ++day) {
    char name[32];
    std::snprintf(name, sizeof(name), "day_%03d.csv", day);
    std::ofstream out(std::filesystem::path(directory) / name);
    if (!out) throw InputError("cannot write release day file in " + directory);
    out << "time_index,bus_id,v_re,v_im\n";
    const MatC& panel = release.voltages[day];
    for (int t = 0; t < panel.rows(); ++t)
      for (int k = 0; k < panel.cols(); ++k)
        out << t << "," << release.bus_ids[k] << "," << format_double(panel(t, k).real()) << ","
            << format_double(panel(t, k).imag()) << "\n";
  }
  json j;
  j["mechanism"] = mechanism_name(release.kind);
  j["days"] = release.days();
  j["horizon"] = release.horizon;
  j["bus_ids"] = release.bus_ids;
  j["eps_day"] = release.noise_free() ? json("inf") : json(release.eps_day);
  j["delta_day"] = release.delta_day;
  j["eps_total"] = std::isinf(release.eps_total) ? json("inf") : json(release.eps_total);
  j["delta_total"] = release.delta_total;
  j["eps_load"] = std::isinf(release.eps_load) ? json("inf") : json(release.eps_load);
  j["seed"] = release.seed;
  j["noise_sigma"] = release.noise_sigma;
  j["warnings"] = json{{"good_set_violations", release.good_set_violations},
                       {"solver_failures", release.solver_failures},
                       {"min_truncation_acceptance", release.min_truncation_acceptance}};
  write_file((std::filesystem::path(directory) / "release.json").string(), json_to_string(j));
}

MechanismRelease load_release(const std::string& directory) {
  const json j = parse_file((std::filesystem::path(directory) / "release.json").string());
  MechanismRelease release;
  release.kind = mechanism_from_name(j.at("mechanism").get<std::string>());
  release.horizon = j.at("horizon").get<int>();
  for (const auto& id : j.at("bus_ids")) release.bus_ids.push_back(id.get<std::string>());
  auto number_or_inf = [](const json& v) {
    return v.is_string() ? std::numeric_limits<double>::infinity() : v.get<double>();
  };
  release.eps_day = number_or_inf(j.at("eps_day"));
  release.delta_day = j.at("delta_day").get<double>();
  release.eps_total = number_or_inf(j.at("eps_total"));
  release.delta_total = j.at("delta_total").get<double>();
  release.eps_load = number_or_inf(j.at("eps_load"));
  release.seed = j.at("seed").get<std::uint64_t>();
  release.noise_sigma = j.at("noise_sigma").get<double>();
  const int days = j.at("days").get<int>();
  const int n = static_cast<int>(release.bus_ids.size());
  std::unordered_map<std::string, int> bus_index;
  for (int k = 0; k < n; ++k) bus_index[release.bus_ids[k]] = k;
  for (int day = 0; day < days; ++day) {
    char name[32];
    std::snprintf(name, sizeof(name), "day_%03d.csv", day);
    std::ifstream in(std::filesystem::path(directory) / name);
    if (!in) throw InputError("missing release day file " + std::string(name));
    std::string line;
    std::getline(in, line);  // header
    MatC panel = MatC::Zero(release.horizon, n);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != 4) throw InputError("release rows need 4 fields");
      const int t = std::stoi(fields[0]);
      const int k = bus_index.at(fields[1]);
      panel(t, k) = Complex(std::stod(fields[2]), std::stod(fields[3]));
    }
    release.voltages.push_back(std::move(panel));
  }
  return release;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const json j = parse_file(path);
  ExperimentConfig cfg;
  cfg.feeder_path = j.at("feeder").get<std::string>();
  cfg.load_panel_path = j.at("load_panel").get<std::string>();
  cfg.irradiance_path = j.at("irradiance").get<std::string>();
  if (j.contains("eps_grid")) {
    cfg.eps_grid.clear();
    for (const auto& value : j.at("eps_grid")) cfg.eps_grid.push_back(value.get<double>());
  }
  if (j.contains("delta")) cfg.delta = j.at("delta").get<double>();
  if (j.contains("r")) cfg.r = j.at("r").get<double>();
  if (j.contains("days")) cfg.days = j.at("days").get<int>();
  if (j.contains("repetitions")) cfg.repetitions = j.at("repetitions").get<int>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("w1_mode"))
    cfg.w1_mode = j.at("w1_mode").get<std::string>() == "per_bus" ? W1Mode::PerBus : W1Mode::Pooled;
  if (j.contains("classes")) cfg.n_classes = j.at("classes").get<int>();
  if (j.contains("resolution_minutes"))
    cfg.resolution_minutes = j.at("resolution_minutes").get<int>();
  if (j.contains("eps_load_fit")) cfg.fit.eps_load = j.at("eps_load_fit").get<double>();
  if (j.contains("delta_load")) cfg.fit.delta_load = j.at("delta_load").get<double>();
  if (j.contains("mu0")) cfg.mu0 = j.at("mu0").get<double>();
  if (j.contains("calibration_trajectories"))
    cfg.calibration_trajectories = j.at("calibration_trajectories").get<int>();
  if (j.contains("confidence")) cfg.confidence = j.at("confidence").get<double>();
  if (j.contains("eps_load_grid_points"))
    cfg.eps_load_grid_points = j.at("eps_load_grid_points").get<int>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  return cfg;
}

void save_evaluation_report(const EvaluationReport& report, const ExperimentConfig& cfg,
                            const std::string& directory) {
  std::filesystem::create_directories(directory);
  // Plot-ready CSV.
  {
    std::ofstream out(std::filesystem::path(directory) / "sweep_results.csv");
    if (!out) throw InputError("cannot write sweep_results.csv");
    out << "mechanism,eps,mean_w1,std_w1,repetitions_used,repetitions_excluded\n";
    for (const auto& cell : report.cells)
      out << mechanism_name(cell.mechanism) << "," << format_double(cell.eps_target) << ","
          << format_double(cell.mean_w1) << "," << format_double(cell.std_w1) << ","
          << cell.repetitions_used << "," << cell.repetitions_excluded << "\n";
  }
  json j;
  j["floor_w1"] = report.floor_w1;
  j["ordering"] = json{{"dp_le_dpgmm", report.ordering_dp_le_dpgmm},
                       {"dpgmm_le_joint", report.ordering_dpgmm_le_joint},
                       {"dpgmm_le_noisy", report.ordering_dpgmm_le_noisy},
                       {"points_satisfied", report.ordering_points_satisfied}};
  j["selected_eps_load"] = report.selected_eps_load;
  j["calibration"] = json::parse(calibration_to_json(report.calibration));
  j["audit"] = json{{"min_sigma_min_jacobian", report.audit.min_sigma_min_jacobian},
                    {"envelope_fraction", report.audit.envelope_fraction},
                    {"voltvar_compliant", report.audit.voltvar_compliant}};
  j["privacy_reports"] = json::array();
  for (const auto& pr : report.privacy_reports)
    j["privacy_reports"].push_back(json::parse(privacy_report_to_json(pr)));
  j["cells"] = json::array();
  for (const auto& cell : report.cells) {
    j["cells"].push_back(json{{"mechanism", mechanism_name(cell.mechanism)},
                              {"eps", cell.eps_target},
                              {"mean_w1", cell.mean_w1},
                              {"std_w1", cell.std_w1},
                              {"w1_values", cell.w1_values},
                              {"repetitions_used", cell.repetitions_used},
                              {"repetitions_excluded", cell.repetitions_excluded}});
  }
  j["config"] = json{{"eps_grid", cfg.eps_grid}, {"delta", cfg.delta},      {"r", cfg.r},
                     {"days", cfg.days},         {"repetitions", cfg.repetitions},
                     {"seed", cfg.seed},         {"classes", cfg.n_classes}};
  write_file((std::filesystem::path(directory) / "sweep_report.json").string(), json_to_string(j));
}

std::string kron_report_json(const KronReduction& red, const NetworkStats& stats) {
  json j;
  j["retained_ids"] = red.retained_ids;
  j["zero_ids"] = red.zero_ids;
  j["slack_id"] = red.slack_id ? json(*red.slack_id) : json(nullptr);
  j["kappa_kron"] = red.kappa_kron;
  auto cmat = [](const MatC& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (int c = 0; c < m.cols(); ++c) row.push_back(complex_to_json(m(i, c)));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["y_reduced"] = cmat(red.y_reduced);
  json b = json::array();
  for (int i = 0; i < red.b.size(); ++i) b.push_back(complex_to_json(red.b(i)));
  j["b"] = std::move(b);
  j["phi"] = cmat(red.phi);
  j["stats"] = json{{"d_max", stats.d_max},
                    {"sigma_min_y", stats.sigma_min_y},
                    {"flat_mismatch", stats.flat_mismatch},
                    {"row_sum_norm", stats.row_sum_norm}};
  return json_to_string(j);
}

std::string audit_to_json(const FeasibilityAudit& audit, const FeederLoadModel& model) {
  json j;
  j["samples"] = audit.samples;
  j["min_sigma_min_jacobian"] = audit.min_sigma_min_jacobian;
  json envelope = json::array();
  for (std::size_t i = 0; i < audit.envelope_fraction.size(); ++i)
    envelope.push_back(json{{"class_id", model.classes[i].class_id},
                            {"fraction_inside", audit.envelope_fraction[i]},
                            {"p_min", model.classes[i].p_min},
                            {"p_max", model.classes[i].p_max}});
  j["envelope"] = std::move(envelope);
  j["voltvar_compliant"] = audit.voltvar_compliant;
  j["voltvar_violations"] = audit.voltvar_violations;
  return json_to_string(j);
}

}  // namespace dpgrid
