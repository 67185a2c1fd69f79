#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/random.hpp"

namespace lithopatch {

/// Flat binary tree; node 0 is the root. Split nodes send x[feature] <= threshold left.
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> value;  // leaf payload: class distribution (CART) or one score (Newton tree)
  double gain = 0.0;          // split quality recorded at training time

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(std::span<const double> x) const {
    int i = 0;
    while (!nodes[i].is_leaf()) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i];
  }

  int depth() const {
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[i].is_leaf()) {
        stack.push_back({nodes[i].left, d + 1});
        stack.push_back({nodes[i].right, d + 1});
      }
    }
    return best;
  }

  bool operator==(const DecisionTree&) const = default;
};

/// Threshold between two consecutive distinct sorted values.
inline double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return (mid < hi && mid >= lo) ? mid : lo;
}

struct CartParams {
  int max_depth = -1;  ///< -1 = unlimited
  int min_leaf = 1;
  int mtry = 0;        ///< features examined per node; 0 = all
  int num_classes = kNumClasses;
};

namespace detail {

// Greedy CART with Gini impurity. Sample multiplicities come from bootstrap
// resampling, so every count is an integer and split scores are compared
// exactly: maximizing sum_children (sum_k c_k^2) / n_child is equivalent to
// minimizing weighted Gini impurity.
class CartBuilder {
 public:
  CartBuilder(const FeatureMatrix& data, std::span<const std::uint32_t> weights, const CartParams& params, Rng& rng)
      : data_(data), weights_(weights), params_(params), rng_(rng) {}

  DecisionTree build() {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < data_.rows; ++r)
      if (weights_[r] > 0) rows.push_back(r);
    if (rows.empty()) throw Error(ErrorCode::EmptyTraining, "no training rows");
    tree_.nodes.reserve(2 * rows.size());
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  using i128 = __int128;

  int grow(std::vector<std::size_t>& rows, int depth) {
    const int k = params_.num_classes;
    std::vector<std::int64_t> counts(k, 0);
    std::int64_t total = 0;
    for (std::size_t r : rows) {
      counts[data_.labels[r]] += weights_[r];
      total += weights_[r];
    }

    const int self = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    const bool pure = std::count_if(counts.begin(), counts.end(), [](std::int64_t c) { return c > 0; }) <= 1;
    const bool depth_capped = params_.max_depth >= 0 && depth >= params_.max_depth;
    const bool too_small = total < 2 * static_cast<std::int64_t>(params_.min_leaf);
    if (!(pure || depth_capped || too_small)) {
      if (auto split = best_split(rows, counts, total)) {
        std::vector<std::size_t> left, right;
        for (std::size_t r : rows) (data_.at(r, split->feature) <= split->threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        tree_.nodes[self].feature = split->feature;
        tree_.nodes[self].threshold = split->threshold;
        tree_.nodes[self].gain = split->gini_decrease;
        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        tree_.nodes[self].left = l;
        tree_.nodes[self].right = r;
        return self;
      }
    }
    auto& value = tree_.nodes[self].value;
    value.resize(k);
    for (int c = 0; c < k; ++c) value[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
    return self;
  }

  struct Split {
    int feature;
    double threshold;
    double gini_decrease;
  };

  std::vector<int> candidate_features() {
    const int d = static_cast<int>(data_.cols);
    std::vector<int> f(d);
    std::iota(f.begin(), f.end(), 0);
    const int m = params_.mtry <= 0 ? d : std::min(params_.mtry, d);
    if (m < d) {
      for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng_.index(static_cast<std::uint64_t>(d - i)));
        std::swap(f[i], f[j]);
      }
      f.resize(m);
      std::sort(f.begin(), f.end());
    }
    return f;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& rows, const std::vector<std::int64_t>& counts,
                                  std::int64_t total) {
    const int k = params_.num_classes;
    const std::int64_t min_leaf = params_.min_leaf;
    std::optional<Split> best;
    i128 best_num = 0, best_den = 1;  // best score = num / den

    std::vector<std::size_t> order = rows;
    std::vector<std::int64_t> left(k);
    for (int f : candidate_features()) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = data_.at(a, f), vb = data_.at(b, f);
        return va < vb || (va == vb && a < b);
      });
      std::fill(left.begin(), left.end(), 0);
      std::int64_t n_left = 0;
      i128 sq_left = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t r = order[i];
        const std::int64_t w = weights_[r];
        const int c = data_.labels[r];
        sq_left += static_cast<i128>(2 * left[c] + w) * w;  // (a+w)^2 - a^2
        left[c] += w;
        n_left += w;
        const double v = data_.at(r, f), next = data_.at(order[i + 1], f);
        if (!(v < next)) continue;
        const std::int64_t n_right = total - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        i128 sq_right = 0;
        for (int j = 0; j < k; ++j) {
          const i128 cr = counts[j] - left[j];
          sq_right += cr * cr;
        }
        const i128 num = sq_left * n_right + sq_right * n_left;
        const i128 den = static_cast<i128>(n_left) * n_right;
        if (!best || num * best_den > best_num * den) {
          best_num = num;
          best_den = den;
          best = Split{f, split_threshold(v, next), 0.0};
        }
      }
    }
    if (best) {
      i128 sq_parent = 0;
      for (int j = 0; j < k; ++j) sq_parent += static_cast<i128>(counts[j]) * counts[j];
      const double n = static_cast<double>(total);
      best->gini_decrease = (static_cast<double>(best_num) / static_cast<double>(best_den) -
                             static_cast<double>(sq_parent) / n) / n;
    }
    return best;
  }

  const FeatureMatrix& data_;
  std::span<const std::uint32_t> weights_;
  CartParams params_;
  Rng& rng_;
  DecisionTree tree_;
};

}  // namespace detail

inline void check_training_data(const FeatureMatrix& data, int num_classes) {
  if (data.rows == 0) throw Error(ErrorCode::EmptyTraining, "training set is empty");
  if (data.cols == 0) throw Error(ErrorCode::EmptyTraining, "training set has no features");
  for (int l : data.labels)
    if (l < 0 || l >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(l));
}

/// Greedy CART with Gini impurity. Leaves hold class distributions.
inline DecisionTree train_tree(const FeatureMatrix& data, const CartParams& params, std::uint64_t seed,
                               std::span<const std::uint32_t> weights = {}) {
  check_training_data(data, params.num_classes);
  std::vector<std::uint32_t> unit;
  if (weights.empty()) {
    unit.assign(data.rows, 1);
    weights = unit;
  }
  Rng rng(seed);
  return detail::CartBuilder(data, weights, params, rng).build();
}

}  // namespace lithopatch
