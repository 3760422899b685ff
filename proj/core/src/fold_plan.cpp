#include "ldml/fold_plan.hpp"

#include <algorithm>
#include <string>

#include "ldml/error.hpp"
#include "ldml/random.hpp"

namespace ldml {
namespace {

// ceil(k * n / K) without overflow for realistic sizes.
std::size_t fold_boundary(std::size_t k, std::size_t n, std::size_t folds) {
  return (k * n + folds - 1) / folds;
}

template <typename T>
void shuffle(std::vector<T>& v, std::size_t begin, std::size_t end, Rng& rng) {
  for (std::size_t i = end; i > begin + 1; --i) {
    const std::size_t j = begin + rng.uniform_index(i - begin);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

FoldPlan::FoldPlan(std::size_t n, std::size_t folds, std::size_t kprime, std::uint64_t seed,
                   std::vector<std::size_t> permutation)
    : folds_(folds), kprime_(kprime), seed_(seed), permutation_(std::move(permutation)) {
  if (permutation_.size() != n) throw Error(ErrorCode::kDimensionMismatch, "permutation length");
  fold_of_.assign(n, 0);
  fold_rows_.resize(folds);
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t lo = fold_boundary(k, n, folds);
    const std::size_t hi = fold_boundary(k + 1, n, folds);
    for (std::size_t pos = lo; pos < hi; ++pos) {
      fold_of_[permutation_[pos]] = k;
      fold_rows_[k].push_back(permutation_[pos]);
    }
  }
  h1_.resize(folds);
  h2_.resize(folds);
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t cut = kprime + (k < kprime ? 1 : 0);
    for (std::size_t j = 0; j < folds; ++j) {
      if (j == k) continue;
      (j < cut ? h1_[k] : h2_[k]).push_back(j);
    }
  }
}

std::vector<std::size_t> FoldPlan::rows_in(std::span<const std::size_t> fold_ids) const {
  std::vector<std::size_t> rows;
  for (std::size_t k : fold_ids) {
    rows.insert(rows.end(), fold_rows_[k].begin(), fold_rows_[k].end());
  }
  return rows;
}

std::vector<std::size_t> FoldPlan::rows_outside(std::size_t k) const {
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < folds_; ++j) {
    if (j != k) ids.push_back(j);
  }
  return rows_in(ids);
}

bool FoldPlan::operator==(const FoldPlan& other) const {
  return folds_ == other.folds_ && kprime_ == other.kprime_ &&
         permutation_ == other.permutation_;
}

FoldPlan make_fold_plan(std::size_t n, std::size_t folds, std::size_t kprime, std::uint64_t seed,
                        std::optional<std::span<const int>> stratify) {
  if (folds < 3) throw Error(ErrorCode::kInvalidArgument, "K must be at least 3");
  if (kprime < 1 || kprime + 2 > folds) {
    throw Error(ErrorCode::kInvalidKPrime, "K'=" + std::to_string(kprime) +
                                               " outside [1, K-2] for K=" + std::to_string(folds));
  }
  if (n < folds) {
    throw Error(ErrorCode::kTooFewRows,
                std::to_string(n) + " rows cannot fill " + std::to_string(folds) + " folds");
  }

  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  if (!stratify) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    shuffle(perm, 0, n, rng);
    return FoldPlan(n, folds, kprime, seed, std::move(perm));
  }

  if (stratify->size() != n) throw Error(ErrorCode::kDimensionMismatch, "stratify flags");
  std::vector<std::size_t> ones, zeros;
  for (std::size_t i = 0; i < n; ++i) ((*stratify)[i] == 1 ? ones : zeros).push_back(i);
  shuffle(ones, 0, ones.size(), rng);
  shuffle(zeros, 0, zeros.size(), rng);

  // Fold k takes floor(hi*n1/n) - floor(lo*n1/n) ones: the deviation from
  // size*n1/n is a difference of two fractional parts, hence < 1.
  std::size_t next_one = 0, next_zero = 0;
  const std::size_t n1 = ones.size();
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t lo = fold_boundary(k, n, folds);
    const std::size_t hi = fold_boundary(k + 1, n, folds);
    const std::size_t take = hi * n1 / n - lo * n1 / n;
    std::size_t pos = lo;
    for (std::size_t c = 0; c < take; ++c) perm[pos++] = ones[next_one++];
    while (pos < hi) perm[pos++] = zeros[next_zero++];
    shuffle(perm, lo, hi, rng);
  }
  return FoldPlan(n, folds, kprime, seed, std::move(perm));
}

}  // namespace ldml
