#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldml/data.hpp"
#include "ldml/engine.hpp"
#include "ldml/error.hpp"
#include "ldml/simlab.hpp"

namespace ldml::cli {

inline constexpr int kSchemaVersion = 1;

/// Fully resolved `estimate` request. Config-file keys and flags map onto
/// these fields one to one (flag --learning-rate <-> key "learning_rate").
struct EstimateRun {
  std::filesystem::path data;
  CsvSchema schema;
  std::string estimand;
  double gamma = 0.5;
  double alpha = 0.05;
  bool effect = false;
  bool share_propensity = true;
  LdmlConfig ldml;
  std::optional<std::filesystem::path> output;
};

struct SimulateRun {
  std::string study;
  StudyConfig study_config;
  std::optional<std::filesystem::path> output;
};

/// Builds a run from a merged config object. `entropy_seed` is used when
/// "seed" is absent. Errors: ConfigError.
EstimateRun resolve_estimate(const nlohmann::json& config, std::uint64_t entropy_seed);
/// Errors: ConfigError (also for unknown study or method names, and a missing seed).
SimulateRun resolve_simulate(const nlohmann::json& config);

/// The resolved run in config-file form; feeding it back as --config
/// reproduces the run. Thread count and output path are left out because
/// they cannot change the report.
nlohmann::json echo(const EstimateRun& run);
nlohmann::json echo(const SimulateRun& run);

nlohmann::json to_json(const EstimateReport& report, double alpha);
nlohmann::json to_json(const ReplicationReport& report);

/// Process exit status for a library error: 2 for ConfigError, 10 + the
/// code's ordinal otherwise. 1 is reserved for unexpected failures.
int exit_code(ErrorCode code);

/// {"schema_version": 1, "error": {"code", "message", "exit_code"}}.
nlohmann::json error_object(ErrorCode code, const std::string& message);

/// Full command line (args[0] is the program name). The report goes to
/// --output when given, else to `out`; error objects go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ldml::cli
