#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ldml {

/// Row-major so a covariate row is a contiguous span.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// The non-covariate part of one row, which is all an estimating equation sees.
struct Observation {
  double outcome = 0.0;
  int treatment = 0;
  int instrument = 0;
};

/// Immutable n x p dataset Z = (X, [W], T, Y). Treatment and instrument are
/// validated to be 0/1 and every numeric entry finite at construction.
class ObservationTable {
 public:
  ObservationTable(Matrix covariates, std::vector<int> treatment, std::vector<double> outcome,
                   std::optional<std::vector<int>> instrument = std::nullopt,
                   std::vector<std::string> covariate_names = {});

  std::size_t n() const { return outcome_.size(); }
  std::size_t p() const { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const { return covariates_; }
  std::span<const double> row(std::size_t i) const {
    return {covariates_.data() + i * p(), p()};
  }
  int treatment(std::size_t i) const { return treatment_[i]; }
  double outcome(std::size_t i) const { return outcome_[i]; }
  bool has_instrument() const { return instrument_.has_value(); }
  int instrument(std::size_t i) const { return instrument_ ? (*instrument_)[i] : 0; }

  const std::vector<int>& treatments() const { return treatment_; }
  const std::vector<double>& outcomes() const { return outcome_; }
  const std::optional<std::vector<int>>& instruments() const { return instrument_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  Observation observation(std::size_t i) const {
    return {outcome_[i], treatment_[i], instrument(i)};
  }

  /// Covariate rows at `rows`, in the given order.
  Matrix select_covariates(std::span<const std::size_t> rows) const;

  std::size_t treated_count() const;

 private:
  Matrix covariates_;
  std::vector<int> treatment_;
  std::vector<double> outcome_;
  std::optional<std::vector<int>> instrument_;
  std::vector<std::string> covariate_names_;
};

/// Column-name mapping for CSV ingestion. Empty `covariates` means every column
/// not claimed by treatment/outcome/instrument, in file order.
struct CsvSchema {
  std::string treatment;
  std::string outcome;
  std::optional<std::string> instrument;
  std::vector<std::string> covariates;
};

/// Strict CSV reader: UTF-8, comma separated, header row required, decimal
/// point numerals. Rows are kept in file order.
ObservationTable load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes the table back as CSV with the given column names (used by tools
/// that emit simulated datasets).
void write_csv(const std::filesystem::path& path, const ObservationTable& table,
               const CsvSchema& schema);

}  // namespace ldml
