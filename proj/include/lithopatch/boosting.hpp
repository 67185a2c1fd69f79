#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/random.hpp"
#include "lithopatch/tree.hpp"

namespace lithopatch {

struct BoostParams {
  int n_rounds = 200;
  double eta = 0.1;
  double lambda = 1.0;
  double gamma = 0.0;
  int max_depth = 6;
  double min_child_weight = 1.0;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  int num_classes = kNumClasses;

  bool operator==(const BoostParams&) const = default;
};

/// K trees per round; raw score_k(x) = base_score + eta * sum_r tree_{r,k}(x).
struct BoostedModel {
  std::vector<std::vector<DecisionTree>> rounds;
  double base_score = 0.0;
  BoostParams params;
  int num_classes = kNumClasses;
  std::size_t num_features = 0;
  std::string schema_id = kHsiLbpSchema;

  bool operator==(const BoostedModel&) const = default;
};

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += (p[k] = std::exp(z[k] - m));
  for (double& v : p) v /= sum;
  return p;
}

/// Leaf weight -G / (H + lambda).
inline double newton_leaf_weight(double g_sum, double h_sum, double lambda) { return -g_sum / (h_sum + lambda); }

/// 1/2 [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)] - gamma.
inline double newton_split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma) {
  const double g = gl + gr, h = hl + hr;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma;
}

namespace detail {

// Level-wise exact greedy search. Every feature column is presorted once; each
// level sweeps the sorted columns and accumulates per-node gradient sums, so a
// level costs O(rows * features) regardless of how many nodes it has.
class NewtonTreeBuilder {
 public:
  NewtonTreeBuilder(const FeatureMatrix& data, const std::vector<std::vector<std::uint32_t>>& sorted,
                    std::span<const double> grad, std::span<const double> hess, std::span<const char> active,
                    const BoostParams& params)
      : data_(data), sorted_(sorted), grad_(grad), hess_(hess), params_(params),
        node_of_(data.rows, -1) {
    for (std::size_t r = 0; r < data.rows; ++r)
      if (active.empty() || active[r]) node_of_[r] = 0;
  }

  DecisionTree build() {
    DecisionTree tree;
    tree.nodes.emplace_back();
    std::vector<int> frontier{0};
    std::vector<double> g_sum(1, 0.0), h_sum(1, 0.0);
    for (std::size_t r = 0; r < data_.rows; ++r)
      if (node_of_[r] == 0) {
        g_sum[0] += grad_[r];
        h_sum[0] += hess_[r];
      }

    for (int depth = 0; !frontier.empty(); ++depth) {
      std::vector<Candidate> best(tree.nodes.size());
      if (depth < params_.max_depth) find_splits(tree.nodes.size(), frontier, g_sum, h_sum, best);

      std::vector<int> next;
      for (int n : frontier) {
        const Candidate& c = best[n];
        if (c.feature < 0 || !(c.gain > 0.0)) {
          tree.nodes[n].value = {newton_leaf_weight(g_sum[n], h_sum[n], params_.lambda)};
          continue;
        }
        const int l = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        tree.nodes[n].feature = c.feature;
        tree.nodes[n].threshold = c.threshold;
        tree.nodes[n].gain = c.gain;
        tree.nodes[n].left = l;
        tree.nodes[n].right = l + 1;
        g_sum.resize(tree.nodes.size(), 0.0);
        h_sum.resize(tree.nodes.size(), 0.0);
        g_sum[l] = c.gl;
        h_sum[l] = c.hl;
        g_sum[l + 1] = g_sum[n] - c.gl;
        h_sum[l + 1] = h_sum[n] - c.hl;
        next.push_back(l);
        next.push_back(l + 1);
      }
      // reassign rows of split nodes to their children
      for (std::size_t r = 0; r < data_.rows; ++r) {
        const int n = node_of_[r];
        if (n < 0 || tree.nodes[n].is_leaf()) continue;
        node_of_[r] = data_.at(r, tree.nodes[n].feature) <= tree.nodes[n].threshold ? tree.nodes[n].left
                                                                                   : tree.nodes[n].right;
      }
      // children sums recomputed from rows to avoid drift from subtraction
      for (int n : next) g_sum[n] = h_sum[n] = 0.0;
      for (std::size_t r = 0; r < data_.rows; ++r) {
        const int n = node_of_[r];
        if (n >= 0 && std::find(next.begin(), next.end(), n) != next.end()) {
          g_sum[n] += grad_[r];
          h_sum[n] += hess_[r];
        }
      }
      frontier = std::move(next);
    }
    return tree;
  }

 private:
  struct Candidate {
    int feature = -1;
    double threshold = 0.0;
    double gain = -std::numeric_limits<double>::infinity();
    double gl = 0.0, hl = 0.0;
  };

  void find_splits(std::size_t node_count, const std::vector<int>& frontier, const std::vector<double>& g_sum,
                   const std::vector<double>& h_sum, std::vector<Candidate>& best) const {
    std::vector<char> open(node_count, 0);
    for (int n : frontier) open[n] = 1;
    std::vector<double> gl(node_count), hl(node_count), last(node_count);
    std::vector<std::size_t> seen(node_count);
    for (std::size_t f = 0; f < data_.cols; ++f) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (std::uint32_t r : sorted_[f]) {
        const int n = node_of_[r];
        if (n < 0 || !open[n]) continue;
        const double x = data_.at(r, f);
        if (seen[n] > 0 && x > last[n]) {
          const double gr = g_sum[n] - gl[n], hr = h_sum[n] - hl[n];
          if (hl[n] >= params_.min_child_weight && hr >= params_.min_child_weight) {
            const double gain = newton_split_gain(gl[n], hl[n], gr, hr, params_.lambda, params_.gamma);
            if (gain > best[n].gain) best[n] = {static_cast<int>(f), split_threshold(last[n], x), gain, gl[n], hl[n]};
          }
        }
        gl[n] += grad_[r];
        hl[n] += hess_[r];
        last[n] = x;
        ++seen[n];
      }
    }
  }

  const FeatureMatrix& data_;
  const std::vector<std::vector<std::uint32_t>>& sorted_;
  std::span<const double> grad_, hess_;
  BoostParams params_;
  std::vector<int> node_of_;
};

inline std::vector<std::vector<std::uint32_t>> presort_columns(const FeatureMatrix& data) {
  std::vector<std::vector<std::uint32_t>> sorted(data.cols);
  parallel_for(data.cols, [&](std::size_t f) {
    auto& order = sorted[f];
    order.resize(data.rows);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double va = data.at(a, f), vb = data.at(b, f);
      return va < vb || (va == vb && a < b);
    });
  });
  return sorted;
}

}  // namespace detail

/// Single Newton regression tree for the given gradients and hessians.
/// Rows with active[r] == 0 are ignored; an empty span means all rows.
inline DecisionTree train_newton_tree(const FeatureMatrix& data, std::span<const double> grad,
                                      std::span<const double> hess, const BoostParams& params,
                                      std::span<const char> active = {}) {
  const auto sorted = detail::presort_columns(data);
  return detail::NewtonTreeBuilder(data, sorted, grad, hess, active, params).build();
}

/// Raw per-class scores before the softmax.
inline std::vector<double> raw_scores(const BoostedModel& model, std::span<const double> x) {
  std::vector<double> z(model.num_classes, model.base_score);
  for (const auto& round : model.rounds)
    for (int k = 0; k < model.num_classes; ++k) z[k] += model.params.eta * round[k].leaf_for(x).value[0];
  return z;
}

inline std::vector<double> predict_proba(const BoostedModel& model, std::span<const double> x) {
  if (x.size() != model.num_features)
    throw Error(ErrorCode::SchemaMismatch, "expected " + std::to_string(model.num_features) + " features, got " +
                                               std::to_string(x.size()));
  return softmax(raw_scores(model, x));
}

/// Newton boosting on the softmax cross-entropy: per round and class,
/// g = p_k - 1{y = k}, h = p_k (1 - p_k).
inline BoostedModel train_boosted(const FeatureMatrix& data, const BoostParams& params) {
  check_training_data(data, params.num_classes);
  if (params.n_rounds < 0) throw Error(ErrorCode::ConfigInvalid, "n_rounds must be >= 0");
  if (!(params.subsample > 0.0 && params.subsample <= 1.0))
    throw Error(ErrorCode::ConfigInvalid, "subsample must be in (0, 1]");

  const int K = params.num_classes;
  const std::size_t n = data.rows;
  BoostedModel model;
  model.params = params;
  model.num_classes = K;
  model.num_features = data.cols;
  model.schema_id = data.schema_id;
  model.base_score = 0.0;

  const auto sorted = detail::presort_columns(data);
  std::vector<double> scores(n * K, model.base_score);
  std::vector<std::vector<double>> grad(K, std::vector<double>(n)), hess(K, std::vector<double>(n));
  std::vector<char> active;
  Rng rng(params.seed);

  for (int round = 0; round < params.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(std::span<const double>(scores).subspan(i * K, K));
      for (int k = 0; k < K; ++k) {
        grad[k][i] = p[k] - (data.labels[i] == k ? 1.0 : 0.0);
        hess[k][i] = p[k] * (1.0 - p[k]);
      }
    }
    active.clear();
    if (params.subsample < 1.0) {
      active.resize(n);
      for (std::size_t i = 0; i < n; ++i) active[i] = rng.bernoulli(params.subsample) ? 1 : 0;
    }
    std::vector<DecisionTree> trees(K);
    parallel_for(static_cast<std::size_t>(K), [&](std::size_t k) {
      trees[k] = detail::NewtonTreeBuilder(data, sorted, grad[k], hess[k], active, params).build();
    });
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < K; ++k) scores[i * K + k] += params.eta * trees[k].leaf_for(data.row(i)).value[0];
    model.rounds.push_back(std::move(trees));
  }
  return model;
}

}  // namespace lithopatch
