#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/random.hpp"
#include "lithopatch/tree.hpp"

namespace lithopatch {

struct ForestParams {
  int n_trees = 500;
  int max_depth = -1;  ///< -1 = unlimited
  int min_leaf = 1;
  int mtry = 0;        ///< 0 = ceil(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  int num_classes = kNumClasses;

  bool operator==(const ForestParams&) const = default;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  ForestParams params;
  int num_classes = kNumClasses;
  std::size_t num_features = 0;
  std::string schema_id = kHsiLbpSchema;

  bool operator==(const ForestModel&) const = default;
};

inline int default_mtry(std::size_t d) { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d)))); }

/// Seed of tree t inside a forest trained with `seed`.
inline std::uint64_t forest_tree_seed(std::uint64_t seed, std::size_t t) { return derive_seed(seed, {0x7265ULL, t}); }

/// Bagged CART trees with per-node feature subsampling.
inline ForestModel train_random_forest(const FeatureMatrix& data, const ForestParams& params) {
  check_training_data(data, params.num_classes);
  if (params.n_trees < 1) throw Error(ErrorCode::ConfigInvalid, "n_trees must be >= 1");

  ForestModel model;
  model.params = params;
  model.num_classes = params.num_classes;
  model.num_features = data.cols;
  model.schema_id = data.schema_id;
  model.trees.resize(static_cast<std::size_t>(params.n_trees));

  CartParams cart;
  cart.max_depth = params.max_depth;
  cart.min_leaf = params.min_leaf;
  cart.mtry = params.mtry > 0 ? params.mtry : default_mtry(data.cols);
  cart.num_classes = params.num_classes;

  parallel_for(model.trees.size(), [&](std::size_t t) {
    Rng rng(forest_tree_seed(params.seed, t));
    std::vector<std::uint32_t> weights(data.rows, params.bootstrap ? 0u : 1u);
    if (params.bootstrap)
      for (std::size_t i = 0; i < data.rows; ++i) ++weights[rng.index(data.rows)];
    model.trees[t] = detail::CartBuilder(data, weights, cart, rng).build();
  });
  return model;
}

/// Mean of the per-tree leaf distributions.
inline std::vector<double> predict_proba(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.num_features)
    throw Error(ErrorCode::SchemaMismatch, "expected " + std::to_string(model.num_features) + " features, got " +
                                               std::to_string(x.size()));
  std::vector<double> p(model.num_classes, 0.0);
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.leaf_for(x);
    for (int k = 0; k < model.num_classes; ++k) p[k] += leaf.value[k];
  }
  for (double& v : p) v /= static_cast<double>(model.trees.size());
  return p;
}

}  // namespace lithopatch
