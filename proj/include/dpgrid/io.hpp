#pragma once

#include <string>

#include "dpgrid/harness.hpp"
#include "dpgrid/loadmodel.hpp"
#include "dpgrid/mechanisms.hpp"
#include "dpgrid/network.hpp"

namespace dpgrid {

// Feeder description document (JSON): top-level keys `buses`, `lines`,
// `slack_voltage` {re, im}, `v_min`, `v_max`; complex values are {re, im}
// pairs in per-unit. The exact schema is documented in docs/formats.md.
NetworkModel load_feeder(const std::string& path);
std::string feeder_to_json(const NetworkModel& network);
void save_feeder(const NetworkModel& network, const std::string& path);

// Load panel CSV: header `time,<bus>,<bus>,...`; one row per time step.
LoadPanel load_panel_csv(const std::string& path, int resolution_minutes);
void save_panel_csv(const LoadPanel& panel, const std::string& path);

// Irradiance CSV: header `time_index,h_g`.
VecD load_irradiance_csv(const std::string& path);
void save_irradiance_csv(const VecD& irradiance, const std::string& path);

// Fitted load model document (JSON).
FeederLoadModel load_model_json(const std::string& path);
std::string model_to_json(const FeederLoadModel& model);
void save_model_json(const FeederLoadModel& model, const std::string& path);

// Accountant documents (JSON), echoing every input for auditability.
std::string privacy_report_to_json(const PrivacyReport& report);
void save_privacy_report(const PrivacyReport& report, const std::string& path);
std::string calibration_to_json(const CalibrationResult& result);
void save_calibration(const CalibrationResult& result, const std::string& path);

// Release output: one CSV per day (time_index, bus_id, v_re, v_im) plus a
// JSON sidecar with the mechanism kind, budgets, seed and warning counts.
// All numeric CSV output uses 17 significant digits.
void save_release(const MechanismRelease& release, const std::string& directory);
MechanismRelease load_release(const std::string& directory);

// Sweep configuration and evaluation report.
ExperimentConfig load_experiment_config(const std::string& path);
void save_evaluation_report(const EvaluationReport& report, const ExperimentConfig& cfg,
                            const std::string& directory);

std::string kron_report_json(const KronReduction& red, const NetworkStats& stats);
std::string audit_to_json(const FeasibilityAudit& audit, const FeederLoadModel& model);

}  // namespace dpgrid
