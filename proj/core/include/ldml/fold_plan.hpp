#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ldml {

/// Random K-fold partition with the three-way split used for localization.
///
/// Folds are numbered 0..K-1. Fold k holds permutation positions
/// [ceil(k*n/K), ceil((k+1)*n/K)). For each fold k, h1(k) are the folds used
/// for the initial estimate and h2(k) the folds used for the localized
/// nuisance fit:
///   h1(k) = {0, ..., K'+[k<K']-1} \ {k},   h2(k) = {K'+[k<K'], ..., K-1} \ {k}.
/// |h1(k)| = K' for every k, and h1(k), h2(k), {k} partition the folds.
class FoldPlan {
 public:
  FoldPlan(std::size_t n, std::size_t folds, std::size_t kprime, std::uint64_t seed,
           std::vector<std::size_t> permutation);

  std::size_t n() const { return permutation_.size(); }
  std::size_t folds() const { return folds_; }
  std::size_t kprime() const { return kprime_; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<std::size_t>& permutation() const { return permutation_; }
  std::size_t fold_of(std::size_t row) const { return fold_of_[row]; }
  const std::vector<std::size_t>& fold_rows(std::size_t k) const { return fold_rows_[k]; }
  const std::vector<std::size_t>& h1(std::size_t k) const { return h1_[k]; }
  const std::vector<std::size_t>& h2(std::size_t k) const { return h2_[k]; }

  /// Rows of the listed folds, concatenated in the order given.
  std::vector<std::size_t> rows_in(std::span<const std::size_t> fold_ids) const;
  /// Rows of every fold except k (the ordinary cross-fitting complement).
  std::vector<std::size_t> rows_outside(std::size_t k) const;

  bool operator==(const FoldPlan& other) const;

 private:
  std::size_t folds_;
  std::size_t kprime_;
  std::uint64_t seed_;
  std::vector<std::size_t> permutation_;
  std::vector<std::size_t> fold_of_;
  std::vector<std::vector<std::size_t>> fold_rows_;
  std::vector<std::vector<std::size_t>> h1_;
  std::vector<std::vector<std::size_t>> h2_;
};

/// Builds a seeded plan. With `stratify` (per-row 0/1 flags) the permutation
/// places ones and zeros so that every fold's count of ones differs from
/// fold_size * (global share of ones) by less than one.
/// Errors: InvalidArgument (K < 3), InvalidKPrime (K' outside [1, K-2]),
/// TooFewRows (n < K).
FoldPlan make_fold_plan(std::size_t n, std::size_t folds, std::size_t kprime, std::uint64_t seed,
                        std::optional<std::span<const int>> stratify = std::nullopt);

}  // namespace ldml
