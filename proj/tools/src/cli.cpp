#include "ldml_cli/cli.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ldml/estimands.hpp"
#include "ldml/parallel.hpp"

namespace ldml::cli {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& message) {
  throw Error(ErrorCode::kConfigError, message);
}

enum class FlagType { kCount, kSeed, kReal, kString, kBool, kStringList, kCountList };

struct FlagSpec {
  std::string key;
  FlagType type;
  std::string help;
};

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

const std::vector<FlagSpec>& learner_flags() {
  static const std::vector<FlagSpec> flags{
      {"learner", FlagType::kString, "learner kind for every slot: gbt|logistic|ridge|constant"},
      {"trees", FlagType::kCount, "gbt trees (every slot)"},
      {"depth", FlagType::kCount, "gbt tree depth (every slot)"},
      {"learning_rate", FlagType::kReal, "gbt learning rate (every slot)"},
      {"min_leaf", FlagType::kCount, "gbt minimum leaf size (every slot)"},
      {"subsample", FlagType::kReal, "gbt row subsample fraction (every slot)"},
      {"max_bins", FlagType::kCount, "gbt histogram bins (every slot)"},
      {"l2_penalty", FlagType::kReal, "logistic/ridge L2 penalty (every slot)"},
  };
  return flags;
}

const std::vector<FlagSpec>& estimate_flags() {
  static const std::vector<FlagSpec> flags{
      {"data", FlagType::kString, "input CSV with a header row"},
      {"treatment", FlagType::kString, "0/1 treatment column"},
      {"outcome", FlagType::kString, "outcome column"},
      {"instrument", FlagType::kString, "0/1 instrument column (lqte)"},
      {"covariates", FlagType::kStringList, "comma-separated covariate columns (default: all others)"},
      {"estimand", FlagType::kString, "quantile|quantile_cvar|expectile|lqte"},
      {"gamma", FlagType::kReal, "level in (0,1)"},
      {"k", FlagType::kCount, "number of folds K"},
      {"kprime", FlagType::kCount, "folds K' used for the initial estimate"},
      {"splits", FlagType::kCount, "random fold splits S"},
      {"variant", FlagType::kString, "ldml1|ldml2"},
      {"aggregate", FlagType::kString, "median|mean over splits"},
      {"epsilon", FlagType::kReal, "solver tolerance above the scan minimum"},
      {"alpha", FlagType::kReal, "CI level is 1 - alpha"},
      {"seed", FlagType::kSeed, "RNG seed (drawn from entropy and echoed when absent)"},
      {"clip_lo", FlagType::kReal, "lower propensity clip"},
      {"clip_hi", FlagType::kReal, "upper propensity clip"},
      {"normalize_weights", FlagType::kBool, "normalize weights to mean 1 within each fold"},
      {"stratify", FlagType::kBool, "balance treated rows across folds"},
      {"bandwidth", FlagType::kReal, "kernel bandwidth for the Jacobian (default: rule of thumb)"},
      {"self_normalize", FlagType::kBool, "self-normalize the kernel Jacobian"},
      {"effect", FlagType::kBool, "estimate both arms and their difference"},
      {"share_propensity", FlagType::kBool, "control arm reuses 1 - treated propensity"},
      {"threads", FlagType::kCount, "worker threads (0 = all cores)"},
      {"output", FlagType::kString, "report path (default: stdout)"},
  };
  return flags;
}

const std::vector<FlagSpec>& simulate_flags() {
  static const std::vector<FlagSpec> flags{
      {"study", FlagType::kString, "study name: paper-sim"},
      {"n", FlagType::kCountList, "comma-separated sample sizes"},
      {"reps", FlagType::kCount, "replications per sample size"},
      {"methods", FlagType::kStringList, "comma-separated methods: ldml,ipw,dml_d"},
      {"gamma", FlagType::kReal, "quantile level"},
      {"runs", FlagType::kCount, "fold re-draws per dataset (median taken)"},
      {"k", FlagType::kCount, "number of folds K"},
      {"kprime", FlagType::kCount, "folds K' for the LDML initial estimate"},
      {"alpha", FlagType::kReal, "CI level is 1 - alpha"},
      {"seed", FlagType::kSeed, "RNG seed (required)"},
      {"clip_lo", FlagType::kReal, "lower propensity clip"},
      {"clip_hi", FlagType::kReal, "upper propensity clip"},
      {"normalize_weights", FlagType::kBool, "normalize weights to mean 1 within each fold"},
      {"noise", FlagType::kString, "variance|sd reading of N(mean, 2 X3)"},
      {"truth", FlagType::kReal, "target value (default: frozen oracle at gamma 2/3)"},
      {"threads", FlagType::kCount, "worker threads (0 = all cores)"},
      {"output", FlagType::kString, "report path (default: stdout)"},
  };
  return flags;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::uint64_t parse_unsigned(const std::string& key, std::string_view text) {
  text = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    config_error(key + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

double parse_real(const std::string& key, std::string_view text) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    config_error(key + ": expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = text.find(',');
    const auto item = trim(text.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

json flag_value(const FlagSpec& spec, const std::string& text) {
  switch (spec.type) {
    case FlagType::kCount:
    case FlagType::kSeed:
      return parse_unsigned(spec.key, text);
    case FlagType::kReal:
      return parse_real(spec.key, text);
    case FlagType::kString:
      return text;
    case FlagType::kBool: {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      config_error(spec.key + ": expected true or false, got '" + text + "'");
    }
    case FlagType::kStringList:
      return split_list(text);
    case FlagType::kCountList: {
      json arr = json::array();
      for (const auto& item : split_list(text)) arr.push_back(parse_unsigned(spec.key, item));
      return arr;
    }
  }
  return nullptr;
}

// Typed reads from the merged config, with ConfigError on a type mismatch.
class Reader {
 public:
  explicit Reader(const json& config) : config_(config) {}

  bool has(const std::string& key) const {
    return config_.contains(key) && !config_.at(key).is_null();
  }

  std::size_t count(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = config_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      config_error(key + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  std::uint64_t seed(const std::string& key) const {
    const json& v = config_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      config_error(key + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = config_.at(key);
    if (!v.is_number()) config_error(key + ": expected a number");
    return v.get<double>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = config_.at(key);
    if (!v.is_boolean()) config_error(key + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback = {}) const {
    if (!has(key)) return fallback;
    const json& v = config_.at(key);
    if (!v.is_string()) config_error(key + ": expected a string");
    return v.get<std::string>();
  }

  std::string required_string(const std::string& key) const {
    if (!has(key)) config_error("missing required setting '" + key + "' (flag " + flag_name(key) + ")");
    return string(key);
  }

  std::vector<std::string> strings(const std::string& key) const {
    if (!has(key)) return {};
    const json& v = config_.at(key);
    if (!v.is_array()) config_error(key + ": expected a list of strings");
    std::vector<std::string> out;
    for (const json& item : v) {
      if (!item.is_string()) config_error(key + ": expected a list of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    const json& v = config_.at(key);
    if (!v.is_array()) config_error(key + ": expected a list of non-negative integers");
    std::vector<std::size_t> out;
    for (const json& item : v) {
      if (!item.is_number_unsigned() && !(item.is_number_integer() && item.get<std::int64_t>() >= 0)) {
        config_error(key + ": expected a list of non-negative integers");
      }
      out.push_back(item.get<std::size_t>());
    }
    return out;
  }

 private:
  const json& config_;
};

void reject_unknown_keys(const json& config, const std::vector<FlagSpec>& flags,
                         const std::set<std::string>& extra) {
  if (!config.is_object()) config_error("config must be a JSON object");
  std::set<std::string> known = extra;
  for (const auto& f : flags) known.insert(f.key);
  for (const auto& f : learner_flags()) known.insert(f.key);
  for (const auto& [key, value] : config.items()) {
    if (!known.contains(key)) config_error("unknown config key '" + key + "'");
  }
}

LearnerConfig learner_for_kind(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::kLogistic: return LearnerConfig::logistic();
    case LearnerKind::kRidge: return LearnerConfig::ridge();
    case LearnerKind::kConstant: return LearnerConfig::constant();
    case LearnerKind::kGbt:
    case LearnerKind::kOracle: break;
  }
  return LearnerConfig::gbt();
}

// Applies kind first (resetting to that kind's defaults), then hyperparameters.
void apply_learner_keys(const json& object, LearnerConfig& learner, const std::string& where) {
  const Reader r(object);
  for (const auto& [key, value] : object.items()) {
    if (key == "kind") continue;
    bool known = false;
    for (const auto& f : learner_flags()) known = known || f.key == key;
    if (!known || key == "learner") config_error("unknown learner key '" + where + key + "'");
  }
  if (r.has("kind")) learner = learner_for_kind(parse_learner_kind(r.string("kind")));
  learner.trees = r.count("trees", learner.trees);
  learner.depth = r.count("depth", learner.depth);
  learner.learning_rate = r.real("learning_rate", learner.learning_rate);
  learner.min_leaf = r.count("min_leaf", learner.min_leaf);
  learner.subsample = r.real("subsample", learner.subsample);
  learner.max_bins = r.count("max_bins", learner.max_bins);
  learner.l2_penalty = r.real("l2_penalty", learner.l2_penalty);
}

constexpr std::array<std::pair<const char*, LearnerConfig LearnerSet::*>, 4> kSlots{{
    {"propensity", &LearnerSet::propensity},
    {"binary_outcome", &LearnerSet::binary_outcome},
    {"continuous_outcome", &LearnerSet::continuous_outcome},
    {"instrument_propensity", &LearnerSet::instrument_propensity},
}};

LearnerSet resolve_learners(const json& config, LearnerSet learners) {
  json shared = json::object();
  for (const auto& f : learner_flags()) {
    if (config.contains(f.key)) shared[f.key == "learner" ? "kind" : f.key] = config.at(f.key);
  }
  for (const auto& [name, member] : kSlots) apply_learner_keys(shared, learners.*member, "");
  if (config.contains("learners")) {
    const json& slots = config.at("learners");
    if (!slots.is_object()) config_error("learners: expected an object keyed by slot");
    for (const auto& [slot, value] : slots.items()) {
      bool found = false;
      for (const auto& [name, member] : kSlots) {
        if (slot != name) continue;
        if (!value.is_object()) config_error("learners." + slot + ": expected an object");
        apply_learner_keys(value, learners.*member, "learners." + slot + ".");
        found = true;
      }
      if (!found) config_error("unknown learner slot '" + slot + "'");
    }
  }
  for (const auto& [name, member] : kSlots) {
    if ((learners.*member).kind == LearnerKind::kOracle) {
      config_error("oracle learners cannot be configured from the command line");
    }
  }
  return learners;
}

json learner_json(const LearnerConfig& l) {
  json out{{"kind", learner_kind_name(l.kind)}};
  switch (l.kind) {
    case LearnerKind::kGbt:
      out["trees"] = l.trees;
      out["depth"] = l.depth;
      out["learning_rate"] = l.learning_rate;
      out["min_leaf"] = l.min_leaf;
      out["subsample"] = l.subsample;
      out["max_bins"] = l.max_bins;
      break;
    case LearnerKind::kLogistic:
    case LearnerKind::kRidge:
      out["l2_penalty"] = l.l2_penalty;
      break;
    case LearnerKind::kConstant:
    case LearnerKind::kOracle:
      break;
  }
  return out;
}

json learners_json(const LearnerSet& set) {
  json out = json::object();
  for (const auto& [name, member] : kSlots) out[name] = learner_json(set.*member);
  return out;
}

json matrix_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json split_json(const SplitResult& s) {
  json out{{"index", s.index}, {"seed", s.seed}, {"ok", s.ok}};
  if (!s.ok) {
    out["error"] = {{"code", s.error_code ? error_name(*s.error_code) : "Unknown"},
                    {"message", s.error}};
    return out;
  }
  out["theta"] = s.theta;
  out["sigma"] = matrix_json(s.sigma);
  out["jacobian"] = {{"matrix", matrix_json(s.jacobian.matrix)},
                     {"method", jacobian_method_name(s.jacobian.method)},
                     {"bandwidth", optional_json(s.jacobian.bandwidth)}};
  out["residual"] = s.residual;
  out["nu_hat"] = optional_json(s.nu_hat);
  out["sigma_repaired"] = s.sigma_repaired;
  json folds = json::array();
  for (const auto& f : s.folds) {
    json fold{{"theta_init", f.theta_init},
              {"init_training_rows", f.init_training_rows},
              {"eta1_training_rows", f.eta1_training_rows},
              {"eta2_training_rows", f.eta2_training_rows}};
    if (f.theta_fold) fold["theta_fold"] = *f.theta_fold;
    folds.push_back(std::move(fold));
  }
  out["folds"] = std::move(folds);
  return out;
}

std::uint64_t draw_entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    config_error("config file " + path + ": " + e.what());
  }
}

// Writes to a sibling temp file first so a failed run never leaves a partial report.
void write_report(const json& report, const std::optional<std::filesystem::path>& path,
                  std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (!path) {
    out << text;
    out.flush();
    return;
  }
  std::filesystem::path tmp = *path;
  tmp += ".partial";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    file << text;
    file.flush();
    if (!file) throw Error(ErrorCode::kIoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, *path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot move report into place at " + path->string());
  }
}

std::optional<std::filesystem::path> output_path(const Reader& r) {
  if (!r.has("output")) return std::nullopt;
  return std::filesystem::path(r.string("output"));
}

int run_estimate(const json& config, std::ostream& out) {
  EstimateRun run = resolve_estimate(config, draw_entropy_seed());
  const ObservationTable table = load_csv(run.data, run.schema);
  const MomentPtr moment = make_moment(run.estimand, run.gamma);
  json report;
  if (run.effect) {
    const EffectReport effect = run_treatment_effect(table, *moment, run.ldml, run.share_propensity);
    report = to_json(effect.difference, run.alpha);
    report["arms"] = {{"treated", to_json(effect.treated, run.alpha)},
                      {"control", to_json(effect.control, run.alpha)}};
  } else {
    report = to_json(run_ldml(table, *moment, run.ldml), run.alpha);
  }
  json doc{{"schema_version", kSchemaVersion}, {"command", "estimate"}, {"config_echo", echo(run)}};
  doc.update(report);
  write_report(doc, run.output, out);
  return 0;
}

int run_simulate(const json& config, std::ostream& out) {
  const SimulateRun run = resolve_simulate(config);
  const auto reports = run_study(run.study_config);
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  const json doc{{"schema_version", kSchemaVersion},
                 {"command", "simulate"},
                 {"config_echo", echo(run)},
                 {"reports", std::move(arr)}};
  write_report(doc, run.output, out);
  return 0;
}

}  // namespace

EstimateRun resolve_estimate(const json& config, std::uint64_t entropy_seed) {
  reject_unknown_keys(config, estimate_flags(), {"learners"});
  const Reader r(config);
  EstimateRun run;
  run.data = r.required_string("data");
  run.schema.treatment = r.required_string("treatment");
  run.schema.outcome = r.required_string("outcome");
  if (r.has("instrument")) run.schema.instrument = r.string("instrument");
  run.schema.covariates = r.strings("covariates");
  run.estimand = r.required_string("estimand");
  run.gamma = r.real("gamma", 0.5);
  // Unknown estimands and out-of-range levels surface here as ConfigError.
  (void)make_moment(run.estimand, run.gamma);
  run.alpha = r.real("alpha", 0.05);
  if (!(run.alpha > 0.0 && run.alpha < 1.0)) config_error("alpha must be in (0,1)");
  run.effect = r.boolean("effect", false);
  run.share_propensity = r.boolean("share_propensity", true);

  LdmlConfig& c = run.ldml;
  c.folds = r.count("k", c.folds);
  c.kprime = r.count("kprime", c.kprime);
  c.splits = r.count("splits", c.splits);
  if (r.has("variant")) c.variant = parse_variant(r.string("variant"));
  if (r.has("aggregate")) c.aggregate = parse_aggregate_rule(r.string("aggregate"));
  c.epsilon_tolerance = r.real("epsilon", c.epsilon_tolerance);
  c.clip.lo = r.real("clip_lo", c.clip.lo);
  c.clip.hi = r.real("clip_hi", c.clip.hi);
  c.normalize_weights = r.boolean("normalize_weights", c.normalize_weights);
  c.stratify = r.boolean("stratify", c.stratify);
  if (r.has("bandwidth")) c.kde.bandwidth = r.real("bandwidth", 0.0);
  c.kde.self_normalize = r.boolean("self_normalize", c.kde.self_normalize);
  c.threads = r.count("threads", 0);
  c.seed = r.has("seed") ? r.seed("seed") : entropy_seed;
  c.learners = resolve_learners(config, c.learners);
  c.validate();
  run.output = output_path(r);
  return run;
}

SimulateRun resolve_simulate(const json& config) {
  reject_unknown_keys(config, simulate_flags(), {"learners"});
  const Reader r(config);
  SimulateRun run;
  run.study = r.required_string("study");
  if (run.study != "paper-sim") config_error("unknown study '" + run.study + "' (known: paper-sim)");
  if (!r.has("seed")) config_error("simulate requires --seed");

  StudyConfig& c = run.study_config;
  c.seed = r.seed("seed");
  if (r.has("n")) c.n_grid = r.counts("n");
  if (c.n_grid.empty()) config_error("n: at least one sample size is required");
  c.reps = r.count("reps", c.reps);
  if (c.reps == 0) config_error("reps must be at least 1");
  if (r.has("methods")) {
    c.methods.clear();
    for (const auto& name : r.strings("methods")) {
      try {
        c.methods.push_back(parse_study_method(name));
      } catch (const Error&) {
        config_error("unknown method '" + name + "' (known: ldml, ipw, dml_d)");
      }
    }
    if (c.methods.empty()) config_error("methods: at least one method is required");
  }
  c.gamma = r.real("gamma", c.gamma);
  if (!(c.gamma > 0.0 && c.gamma < 1.0)) config_error("gamma must be in (0,1)");
  c.runs_per_rep = r.count("runs", c.runs_per_rep);
  if (c.runs_per_rep == 0) config_error("runs must be at least 1");
  c.folds = r.count("k", c.folds);
  c.kprime = r.count("kprime", c.kprime);
  c.alpha = r.real("alpha", c.alpha);
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) config_error("alpha must be in (0,1)");
  c.clip.lo = r.real("clip_lo", c.clip.lo);
  c.clip.hi = r.real("clip_hi", c.clip.hi);
  c.normalize_weights = r.boolean("normalize_weights", c.normalize_weights);
  if (r.has("noise")) c.noise = parse_noise_convention(r.string("noise"));
  if (r.has("truth")) c.truth = r.real("truth", 0.0);
  c.threads = r.count("threads", 0);
  c.learners = resolve_learners(config, c.learners);

  LdmlConfig check;
  check.folds = c.folds;
  check.kprime = c.kprime;
  check.clip = c.clip;
  check.learners = c.learners;
  check.validate();
  if (!c.truth && std::abs(c.gamma - kReferenceGamma) > 1e-12) {
    config_error("truth is required when gamma differs from 2/3");
  }
  run.output = output_path(r);
  return run;
}

json echo(const EstimateRun& run) {
  const LdmlConfig& c = run.ldml;
  json out{{"data", run.data.string()},
           {"treatment", run.schema.treatment},
           {"outcome", run.schema.outcome},
           {"covariates", run.schema.covariates},
           {"estimand", run.estimand},
           {"gamma", run.gamma},
           {"k", c.folds},
           {"kprime", c.kprime},
           {"splits", c.splits},
           {"variant", variant_name(c.variant)},
           {"aggregate", aggregate_rule_name(c.aggregate)},
           {"epsilon", c.epsilon_tolerance},
           {"alpha", run.alpha},
           {"seed", c.seed},
           {"clip_lo", c.clip.lo},
           {"clip_hi", c.clip.hi},
           {"normalize_weights", c.normalize_weights},
           {"stratify", c.stratify},
           {"self_normalize", c.kde.self_normalize},
           {"effect", run.effect},
           {"share_propensity", run.share_propensity},
           {"learners", learners_json(c.learners)}};
  if (run.schema.instrument) out["instrument"] = *run.schema.instrument;
  if (c.kde.bandwidth) out["bandwidth"] = *c.kde.bandwidth;
  return out;
}

json echo(const SimulateRun& run) {
  const StudyConfig& c = run.study_config;
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(study_method_name(m));
  json out{{"study", run.study},
           {"n", c.n_grid},
           {"reps", c.reps},
           {"methods", std::move(methods)},
           {"gamma", c.gamma},
           {"runs", c.runs_per_rep},
           {"k", c.folds},
           {"kprime", c.kprime},
           {"alpha", c.alpha},
           {"seed", c.seed},
           {"clip_lo", c.clip.lo},
           {"clip_hi", c.clip.hi},
           {"normalize_weights", c.normalize_weights},
           {"noise", noise_convention_name(c.noise)},
           {"learners", learners_json(c.learners)}};
  if (c.truth) out["truth"] = *c.truth;
  return out;
}

json to_json(const EstimateReport& report, double alpha) {
  json lower = json::array(), upper = json::array();
  for (std::size_t j = 0; j < report.theta.size(); ++j) {
    const ConfidenceInterval ci = report.interval(j, alpha);
    lower.push_back(ci.lower);
    upper.push_back(ci.upper);
  }
  json splits = json::array();
  for (const auto& s : report.splits) splits.push_back(split_json(s));
  return {{"estimand", report.estimand},
          {"gamma", report.gamma},
          {"n", report.n},
          {"aggregate", aggregate_rule_name(report.aggregate)},
          {"theta", report.theta},
          {"jacobian", matrix_json(report.jacobian)},
          {"sigma", matrix_json(report.sigma)},
          {"stderr", report.stderr_},
          {"ci", {{"lower", std::move(lower)}, {"upper", std::move(upper)}, {"alpha", alpha}}},
          {"splits", std::move(splits)},
          {"warnings", report.warnings}};
}

json to_json(const ReplicationReport& r) {
  return {{"method", r.method},
          {"n", r.n},
          {"reps", r.reps},
          {"truth", r.truth},
          {"mse", r.mse},
          {"mse_se", r.mse_se},
          {"coverage", r.coverage},
          {"coverage_se", r.coverage_se},
          {"estimates", r.estimates},
          {"standard_errors", r.standard_errors},
          {"lower", r.lower},
          {"upper", r.upper}};
}

int exit_code(ErrorCode code) {
  if (code == ErrorCode::kConfigError) return 2;
  return 10 + static_cast<int>(code);
}

json error_object(ErrorCode code, const std::string& message) {
  return {{"schema_version", kSchemaVersion},
          {"error", {{"code", error_name(code)}, {"message", message}, {"exit_code", exit_code(code)}}}};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Localized debiased machine learning estimators", "ldml"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ldml 0.1.0");

  struct Command {
    CLI::App* app;
    const std::vector<FlagSpec>* flags;
    std::map<std::string, std::string> values;
    std::string config_path;
  };
  std::vector<Command> commands;
  commands.reserve(2);
  commands.push_back({app.add_subcommand("estimate", "estimate from a CSV file"), &estimate_flags(), {}, {}});
  commands.push_back({app.add_subcommand("simulate", "run a simulation study"), &simulate_flags(), {}, {}});

  for (auto& cmd : commands) {
    cmd.app->add_option("--config", cmd.config_path, "JSON config file; flags override its keys");
    for (const auto* list : {cmd.flags, &learner_flags()}) {
      for (const auto& f : *list) {
        if (f.type == FlagType::kBool) {
          // Bare flag means true; --flag=false is accepted too.
          cmd.app->add_option(flag_name(f.key), cmd.values[f.key], f.help)
              ->expected(0, 1);
        } else {
          cmd.app->add_option(flag_name(f.key), cmd.values[f.key], f.help);
        }
      }
    }
  }

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "ldml 0.1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_object(ErrorCode::kConfigError, e.what()).dump() << "\n";
    return exit_code(ErrorCode::kConfigError);
  }

  try {
    for (auto& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      json config = cmd.config_path.empty() ? json::object() : load_config_file(cmd.config_path);
      if (!config.is_object()) config_error("config file must hold a JSON object");
      for (const auto* list : {cmd.flags, &learner_flags()}) {
        for (const auto& f : *list) {
          const CLI::Option* opt = cmd.app->get_option(flag_name(f.key));
          if (opt->count() == 0) continue;
          std::string text = cmd.values[f.key];
          if (f.type == FlagType::kBool && text.empty()) text = "true";
          config[f.key] = flag_value(f, text);
        }
      }
      if (cmd.app->get_name() == "estimate") return run_estimate(config, out);
      return run_simulate(config, out);
    }
  } catch (const Error& e) {
    err << error_object(e.code(), e.what()).dump() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << json{{"schema_version", kSchemaVersion},
                {"error", {{"code", "Internal"}, {"message", e.what()}, {"exit_code", 1}}}}
               .dump()
        << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ldml::cli
