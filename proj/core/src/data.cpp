#include "ldml/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "ldml/error.hpp"

namespace ldml {
namespace {

void require_binary(const std::vector<int>& flags, ErrorCode code, const char* what) {
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] != 0 && flags[i] != 1) {
      throw Error(code, std::string(what) + " value " + std::to_string(flags[i]) + " at row " +
                            std::to_string(i) + " is not 0/1");
    }
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

std::string unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

double parse_number(std::string_view text, std::size_t line_no, const std::string& column) {
  auto where = [&] { return " in column '" + column + "' on line " + std::to_string(line_no); };
  if (text.empty()) throw Error(ErrorCode::kNonFiniteValue, "missing value" + where());
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::kMalformedValue, "cannot parse '" + std::string(text) + "'" + where());
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFiniteValue, "non-finite value" + where());
  }
  return value;
}

}  // namespace

ObservationTable::ObservationTable(Matrix covariates, std::vector<int> treatment,
                                   std::vector<double> outcome,
                                   std::optional<std::vector<int>> instrument,
                                   std::vector<std::string> covariate_names)
    : covariates_(std::move(covariates)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      instrument_(std::move(instrument)),
      covariate_names_(std::move(covariate_names)) {
  const auto n = outcome_.size();
  if (treatment_.size() != n || static_cast<std::size_t>(covariates_.rows()) != n ||
      (instrument_ && instrument_->size() != n)) {
    throw Error(ErrorCode::kDimensionMismatch, "column lengths disagree");
  }
  require_binary(treatment_, ErrorCode::kNonBinaryTreatment, "treatment");
  if (instrument_) require_binary(*instrument_, ErrorCode::kNonBinaryTreatment, "instrument");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(outcome_[i])) {
      throw Error(ErrorCode::kNonFiniteValue, "outcome at row " + std::to_string(i));
    }
  }
  if (!covariates_.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "covariates");
  if (covariate_names_.empty()) {
    for (std::size_t j = 0; j < p(); ++j) covariate_names_.push_back("x" + std::to_string(j + 1));
  } else if (covariate_names_.size() != p()) {
    throw Error(ErrorCode::kDimensionMismatch, "covariate name count");
  }
}

Matrix ObservationTable::select_covariates(std::span<const std::size_t> rows) const {
  Matrix out(static_cast<Eigen::Index>(rows.size()), covariates_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = covariates_.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

std::size_t ObservationTable::treated_count() const {
  return static_cast<std::size_t>(std::count(treatment_.begin(), treatment_.end(), 1));
}

ObservationTable load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    for (auto f : split_fields(line)) header.push_back(unquote(f));
    have_header = true;
    break;
  }
  if (!have_header) throw Error(ErrorCode::kEmptyFile, path.string() + " has no header");

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], j);
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::kMissingColumn, "column '" + name + "'");
    return it->second;
  };
  if (schema.treatment.empty() || schema.outcome.empty()) {
    throw Error(ErrorCode::kMissingColumn, "schema must name treatment and outcome columns");
  }
  const std::size_t t_col = column(schema.treatment);
  const std::size_t y_col = column(schema.outcome);
  std::optional<std::size_t> w_col;
  if (schema.instrument) w_col = column(*schema.instrument);

  std::vector<std::size_t> x_cols;
  std::vector<std::string> x_names;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == t_col || j == y_col || (w_col && j == *w_col)) continue;
      x_cols.push_back(j);
      x_names.push_back(header[j]);
    }
  } else {
    for (const auto& name : schema.covariates) {
      x_cols.push_back(column(name));
      x_names.push_back(name);
    }
  }

  std::vector<double> x_values;
  std::vector<int> t_values;
  std::vector<double> y_values;
  std::vector<int> w_values;
  auto as_flag = [&](std::string_view text, const std::string& name) {
    const double v = parse_number(text, line_no, name);
    if (v != 0.0 && v != 1.0) {
      throw Error(ErrorCode::kNonBinaryTreatment, "column '" + name + "' value '" +
                                                      std::string(text) + "' on line " +
                                                      std::to_string(line_no));
    }
    return static_cast<int>(v);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kMalformedValue, "line " + std::to_string(line_no) + " has " +
                                                  std::to_string(fields.size()) + " fields, expected " +
                                                  std::to_string(header.size()));
    }
    t_values.push_back(as_flag(fields[t_col], schema.treatment));
    y_values.push_back(parse_number(fields[y_col], line_no, schema.outcome));
    if (w_col) w_values.push_back(as_flag(fields[*w_col], *schema.instrument));
    for (std::size_t j = 0; j < x_cols.size(); ++j) {
      x_values.push_back(parse_number(fields[x_cols[j]], line_no, x_names[j]));
    }
  }
  if (y_values.empty()) throw Error(ErrorCode::kEmptyFile, path.string() + " has no data rows");

  Matrix x(static_cast<Eigen::Index>(y_values.size()), static_cast<Eigen::Index>(x_cols.size()));
  std::copy(x_values.begin(), x_values.end(), x.data());
  std::optional<std::vector<int>> w;
  if (w_col) w = std::move(w_values);
  return ObservationTable(std::move(x), std::move(t_values), std::move(y_values), std::move(w),
                          std::move(x_names));
}

void write_csv(const std::filesystem::path& path, const ObservationTable& table,
               const CsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  std::vector<std::string> names =
      schema.covariates.empty() ? table.covariate_names() : schema.covariates;
  if (names.size() != table.p()) throw Error(ErrorCode::kDimensionMismatch, "covariate names");

  for (const auto& name : names) out << name << ',';
  if (schema.instrument) out << *schema.instrument << ',';
  out << schema.treatment << ',' << schema.outcome << '\n';

  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (std::size_t i = 0; i < table.n(); ++i) {
    for (double v : table.row(i)) {
      put(v);
      out << ',';
    }
    if (schema.instrument) out << table.instrument(i) << ',';
    out << table.treatment(i) << ',';
    put(table.outcome(i));
    out << '\n';
  }
}

}  // namespace ldml
