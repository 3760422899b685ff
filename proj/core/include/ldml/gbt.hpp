#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ldml/data.hpp"

namespace ldml {

struct GbtParams {
  std::size_t trees = 200;
  std::size_t depth = 3;
  double learning_rate = 0.1;
  std::size_t min_leaf = 5;
  /// Row fraction drawn (without replacement, per tree) when < 1.
  double subsample = 1.0;
  std::size_t max_bins = 32;
};

/// Per-feature quantile cut points and the binned training matrix.
/// A value x falls in bin b iff cuts[b-1] < x <= cuts[b]; splits send
/// bins <= b to the left child.
class FeatureBins {
 public:
  FeatureBins(const Matrix& features, std::size_t max_bins);

  std::size_t rows() const { return rows_; }
  std::size_t features() const { return features_; }
  std::size_t bin_count(std::size_t feature) const { return cuts_[feature].size() + 1; }
  double cut(std::size_t feature, std::size_t bin) const { return cuts_[feature][bin]; }
  std::uint8_t code(std::size_t row, std::size_t feature) const {
    return codes_[row * features_ + feature];
  }
  const std::uint8_t* row_codes(std::size_t row) const { return codes_.data() + row * features_; }

 private:
  std::size_t rows_;
  std::size_t features_;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::uint8_t> codes_;
};

/// Squared-loss gradient boosting with depth-limited histogram trees.
class GbtModel {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf output, already scaled by the learning rate
    int bin = -1;        // training-bin index of the split
  };
  using Tree = std::vector<Node>;

  GbtModel(double base_score, std::vector<Tree> trees, std::size_t feature_dim)
      : base_score_(base_score), trees_(std::move(trees)), feature_dim_(feature_dim) {}

  double base_score() const { return base_score_; }
  std::size_t tree_count() const { return trees_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }

  double predict_row(std::span<const double> x) const;
  /// Prediction using only the first `trees` trees.
  double predict_row(std::span<const double> x, std::size_t trees) const;

 private:
  double base_score_;
  std::vector<Tree> trees_;
  std::size_t feature_dim_;
};

GbtModel fit_gbt(const FeatureBins& bins, std::span<const double> targets, const GbtParams& params,
                 std::uint64_t seed);

}  // namespace ldml
