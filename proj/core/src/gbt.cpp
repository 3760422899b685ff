#include "ldml/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ldml/error.hpp"
#include "ldml/random.hpp"

namespace ldml {

FeatureBins::FeatureBins(const Matrix& features, std::size_t max_bins)
    : rows_(static_cast<std::size_t>(features.rows())),
      features_(static_cast<std::size_t>(features.cols())) {
  max_bins = std::clamp<std::size_t>(max_bins, 2, 256);
  cuts_.resize(features_);
  codes_.resize(rows_ * features_);
  std::vector<double> column(rows_);
  for (std::size_t f = 0; f < features_; ++f) {
    for (std::size_t i = 0; i < rows_; ++i) column[i] = features(static_cast<Eigen::Index>(i), f);
    std::vector<double> sorted = column;
    std::sort(sorted.begin(), sorted.end());
    auto& cuts = cuts_[f];
    std::vector<double> unique;
    std::unique_copy(sorted.begin(), sorted.end(), std::back_inserter(unique));
    if (unique.size() <= max_bins) {
      cuts.assign(unique.begin(), unique.empty() ? unique.end() : unique.end() - 1);
    } else {
      for (std::size_t j = 1; j < max_bins; ++j) {
        const double v = sorted[j * rows_ / max_bins];
        if (v < unique.back() && (cuts.empty() || v > cuts.back())) cuts.push_back(v);
      }
    }
    for (std::size_t i = 0; i < rows_; ++i) {
      const auto it = std::lower_bound(cuts.begin(), cuts.end(), column[i]);
      codes_[i * features_ + f] = static_cast<std::uint8_t>(it - cuts.begin());
    }
  }
}

double GbtModel::predict_row(std::span<const double> x) const {
  return predict_row(x, trees_.size());
}

double GbtModel::predict_row(std::span<const double> x, std::size_t trees) const {
  double out = base_score_;
  trees = std::min(trees, trees_.size());
  for (std::size_t t = 0; t < trees; ++t) {
    const Tree& tree = trees_[t];
    int node = 0;
    while (tree[node].feature >= 0) {
      const Node& nd = tree[node];
      node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    out += tree[node].value;
  }
  return out;
}

namespace {

struct Bin {
  double sum = 0.0;
  double count = 0.0;
};

/// Grows depth-limited trees over a shared index buffer. Rows of a node occupy
/// a contiguous range of the buffer and are partitioned in place on split.
class TreeGrower {
 public:
  TreeGrower(const FeatureBins& bins, const GbtParams& params)
      : bins_(bins), params_(params), stride_(0) {
    for (std::size_t f = 0; f < bins.features(); ++f) {
      stride_ = std::max(stride_, bins.bin_count(f));
    }
  }

  struct Leaf {
    int node;
    std::size_t begin;
    std::size_t end;
  };

  /// Grows one tree on the rows in `index`; `leaves` receives the row range
  /// of every leaf within `index`.
  void grow(std::vector<std::uint32_t>& index, const std::vector<double>& residual,
            GbtModel::Tree& tree, std::vector<Leaf>& leaves) {
    tree.clear();
    leaves.clear();
    free_.clear();
    for (std::size_t h = 0; h < pool_.size(); ++h) free_.push_back(h);

    struct Pending {
      int node;
      std::size_t depth;
      std::size_t begin;
      std::size_t end;
      std::size_t hist;
    };
    std::vector<Pending> frontier{{0, 0, 0, index.size(), acquire()}};
    build(index, 0, index.size(), residual, pool_[frontier[0].hist]);
    tree.push_back({});
    const std::size_t min_leaf = std::max<std::size_t>(params_.min_leaf, 1);

    while (!frontier.empty()) {
      std::vector<Pending> next;
      for (const Pending& work : frontier) {
        double total = 0.0;
        for (std::size_t k = work.begin; k < work.end; ++k) total += residual[index[k]];
        const std::size_t count = work.end - work.begin;
        auto make_leaf = [&] {
          tree[work.node].feature = -1;
          tree[work.node].value =
              count == 0 ? 0.0 : params_.learning_rate * total / static_cast<double>(count);
          leaves.push_back({work.node, work.begin, work.end});
          free_.push_back(work.hist);
        };
        if (work.depth >= params_.depth || count < 2 * min_leaf) {
          make_leaf();
          continue;
        }
        const auto best = best_split(pool_[work.hist], total, count);
        if (best.feature < 0) {
          make_leaf();
          continue;
        }

        const auto feature = static_cast<std::size_t>(best.feature);
        const auto mid = static_cast<std::size_t>(
            std::stable_partition(index.begin() + static_cast<std::ptrdiff_t>(work.begin),
                                  index.begin() + static_cast<std::ptrdiff_t>(work.end),
                                  [&](std::uint32_t i) { return bins_.code(i, feature) <= best.bin; }) -
            index.begin());
        const bool left_small = mid - work.begin <= work.end - mid;
        const std::size_t small = acquire();
        if (left_small) {
          build(index, work.begin, mid, residual, pool_[small]);
        } else {
          build(index, mid, work.end, residual, pool_[small]);
        }
        // The parent histogram becomes the larger child's.
        auto& large = pool_[work.hist];
        const auto& sm = pool_[small];
        for (std::size_t b = 0; b < large.size(); ++b) {
          large[b].sum -= sm[b].sum;
          large[b].count -= sm[b].count;
        }

        const int left_id = static_cast<int>(tree.size());
        tree.push_back({});
        tree.push_back({});
        auto& nd = tree[work.node];
        nd.feature = best.feature;
        nd.threshold = bins_.cut(feature, static_cast<std::size_t>(best.bin));
        nd.left = left_id;
        nd.right = left_id + 1;
        nd.bin = best.bin;

        next.push_back({left_id, work.depth + 1, work.begin, mid, left_small ? small : work.hist});
        next.push_back({left_id + 1, work.depth + 1, mid, work.end, left_small ? work.hist : small});
      }
      frontier = std::move(next);
    }
  }

 private:
  struct Split {
    int feature = -1;
    int bin = -1;
  };

  std::size_t acquire() {
    if (free_.empty()) {
      pool_.emplace_back(bins_.features() * stride_);
      return pool_.size() - 1;
    }
    const std::size_t h = free_.back();
    free_.pop_back();
    return h;
  }

  void build(const std::vector<std::uint32_t>& index, std::size_t begin, std::size_t end,
             const std::vector<double>& residual, std::vector<Bin>& hist) const {
    std::fill(hist.begin(), hist.end(), Bin{});
    const std::size_t p = bins_.features();
    Bin* h = hist.data();
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t i = index[k];
      const std::uint8_t* codes = bins_.row_codes(i);
      const double r = residual[i];
      for (std::size_t f = 0; f < p; ++f) {
        Bin& b = h[f * stride_ + codes[f]];
        b.sum += r;
        b.count += 1.0;
      }
    }
  }

  Split best_split(const std::vector<Bin>& h, double total, std::size_t count) const {
    const auto min_leaf = static_cast<double>(std::max<std::size_t>(params_.min_leaf, 1));
    const auto n = static_cast<double>(count);
    const double parent_score = total * total / n;
    double best_gain = 1e-12 * (1.0 + parent_score);
    Split best;
    for (std::size_t f = 0; f < bins_.features(); ++f) {
      double left_sum = 0.0;
      double left_count = 0.0;
      const std::size_t nb = bins_.bin_count(f);
      const Bin* row = h.data() + f * stride_;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        left_sum += row[b].sum;
        left_count += row[b].count;
        if (left_count < min_leaf) continue;
        const double right_count = n - left_count;
        if (right_count < min_leaf) break;
        const double right_sum = total - left_sum;
        const double gain =
            left_sum * left_sum / left_count + right_sum * right_sum / right_count - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best = {static_cast<int>(f), static_cast<int>(b)};
        }
      }
    }
    return best;
  }

  const FeatureBins& bins_;
  const GbtParams& params_;
  std::size_t stride_;
  std::vector<std::vector<Bin>> pool_;
  std::vector<std::size_t> free_;
};

}  // namespace

GbtModel fit_gbt(const FeatureBins& bins, std::span<const double> targets, const GbtParams& params,
                 std::uint64_t seed) {
  const std::size_t m = bins.rows();
  if (m == 0) throw Error(ErrorCode::kEmptyTrainingSet, "gbt needs at least one row");
  if (targets.size() != m) throw Error(ErrorCode::kDimensionMismatch, "gbt targets");

  const double base = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(m);
  std::vector<double> residual(targets.begin(), targets.end());
  for (double& r : residual) r -= base;

  TreeGrower grower(bins, params);
  std::vector<GbtModel::Tree> trees;
  trees.reserve(params.trees);
  GbtModel::Tree tree;
  std::vector<TreeGrower::Leaf> leaves;
  std::vector<std::uint32_t> index;
  const bool sampled = params.subsample < 1.0;

  for (std::size_t t = 0; t < params.trees; ++t) {
    index.clear();
    if (sampled) {
      Rng rng(derive_seed(seed, {t}));
      for (std::uint32_t i = 0; i < m; ++i) {
        if (rng.uniform() < params.subsample) index.push_back(i);
      }
      if (index.empty()) index.push_back(static_cast<std::uint32_t>(rng.uniform_index(m)));
    } else {
      index.resize(m);
      std::iota(index.begin(), index.end(), 0u);
    }
    grower.grow(index, residual, tree, leaves);

    if (sampled) {
      for (std::size_t i = 0; i < m; ++i) {
        int node = 0;
        while (tree[node].feature >= 0) {
          node = bins.code(i, static_cast<std::size_t>(tree[node].feature)) <= tree[node].bin
                     ? tree[node].left
                     : tree[node].right;
        }
        residual[i] -= tree[node].value;
      }
    } else {
      for (const auto& leaf : leaves) {
        const double v = tree[leaf.node].value;
        for (std::size_t k = leaf.begin; k < leaf.end; ++k) residual[index[k]] -= v;
      }
    }
    trees.push_back(tree);
  }
  return GbtModel(base, std::move(trees), bins.features());
}

}  // namespace ldml
