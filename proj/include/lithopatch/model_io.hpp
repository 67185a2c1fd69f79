#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/boosting.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/forest.hpp"
#include "lithopatch/labels.hpp"
#include "lithopatch/tree.hpp"

namespace lithopatch {

using TreeModel = std::variant<ForestModel, BoostedModel>;

inline std::vector<double> predict_proba(const TreeModel& model, std::span<const double> x) {
  return std::visit([&](const auto& m) { return predict_proba(m, x); }, model);
}

/// argmax with ties broken by the lowest class index.
inline int argmax(std::span<const double> p) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(p.size()); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json tree_to_json(const DecisionTree& tree) {
  nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                 left = nlohmann::json::array(), right = nlohmann::json::array(), gain = nlohmann::json::array(),
                 value = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    gain.push_back(n.gain);
    value.push_back(n.value);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left},
          {"right", right},     {"gain", gain},           {"value", value}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  DecisionTree tree;
  const auto& feature = j.at("feature");
  const std::size_t n = feature.size();
  for (const char* key : {"threshold", "left", "right", "gain", "value"})
    if (j.at(key).size() != n) throw Error(ErrorCode::MalformedFile, std::string("tree column '") + key + "' length");
  if (n == 0) throw Error(ErrorCode::MalformedFile, "tree has no nodes");
  tree.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = tree.nodes[i];
    node.feature = feature[i].get<int>();
    node.threshold = j["threshold"][i].get<double>();
    node.left = j["left"][i].get<int>();
    node.right = j["right"][i].get<int>();
    node.gain = j["gain"][i].get<double>();
    node.value = j["value"][i].get<std::vector<double>>();
    const bool ok = node.is_leaf() ? !node.value.empty()
                                   : (node.left > 0 && node.right > 0 && static_cast<std::size_t>(node.left) < n &&
                                      static_cast<std::size_t>(node.right) < n);
    if (!ok) throw Error(ErrorCode::MalformedFile, "tree node " + std::to_string(i) + " is inconsistent");
  }
  return tree;
}

inline nlohmann::json label_map_json() {
  nlohmann::json m = nlohmann::json::array();
  for (auto name : kClassNames) m.push_back(std::string(name));
  return m;
}

inline nlohmann::json to_json(const ForestParams& p) {
  return {{"n_trees", p.n_trees}, {"max_depth", p.max_depth}, {"min_leaf", p.min_leaf}, {"mtry", p.mtry},
          {"bootstrap", p.bootstrap}, {"seed", p.seed},       {"num_classes", p.num_classes}};
}

inline ForestParams forest_params_from_json(const nlohmann::json& j, ForestParams p = {}) {
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_leaf = j.value("min_leaf", p.min_leaf);
  p.mtry = j.value("mtry", p.mtry);
  p.bootstrap = j.value("bootstrap", p.bootstrap);
  p.seed = j.value("seed", p.seed);
  p.num_classes = j.value("num_classes", p.num_classes);
  return p;
}

inline nlohmann::json to_json(const BoostParams& p) {
  return {{"n_rounds", p.n_rounds},
          {"eta", p.eta},
          {"lambda", p.lambda},
          {"gamma", p.gamma},
          {"max_depth", p.max_depth},
          {"min_child_weight", p.min_child_weight},
          {"subsample", p.subsample},
          {"seed", p.seed},
          {"num_classes", p.num_classes}};
}

inline BoostParams boost_params_from_json(const nlohmann::json& j, BoostParams p = {}) {
  p.n_rounds = j.value("n_rounds", p.n_rounds);
  p.eta = j.value("eta", p.eta);
  p.lambda = j.value("lambda", p.lambda);
  p.gamma = j.value("gamma", p.gamma);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_child_weight = j.value("min_child_weight", p.min_child_weight);
  p.subsample = j.value("subsample", p.subsample);
  p.seed = j.value("seed", p.seed);
  p.num_classes = j.value("num_classes", p.num_classes);
  return p;
}

inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
  return {{"format", "lithopatch-model"}, {"version", kModelFormatVersion}, {"kind", "forest"},
          {"schema_id", m.schema_id},     {"num_features", m.num_features}, {"num_classes", m.num_classes},
          {"label_map", label_map_json()}, {"params", to_json(m.params)},  {"trees", trees}};
}

inline nlohmann::json to_json(const BoostedModel& m) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : m.rounds) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& t : r) per_class.push_back(tree_to_json(t));
    rounds.push_back(per_class);
  }
  return {{"format", "lithopatch-model"}, {"version", kModelFormatVersion}, {"kind", "boosted"},
          {"schema_id", m.schema_id},     {"num_features", m.num_features}, {"num_classes", m.num_classes},
          {"label_map", label_map_json()}, {"params", to_json(m.params)},  {"base_score", m.base_score},
          {"rounds", rounds}};
}

inline nlohmann::json to_json(const TreeModel& m) {
  return std::visit([](const auto& v) { return to_json(v); }, m);
}

inline TreeModel tree_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "lithopatch-model")
      throw Error(ErrorCode::MalformedFile, "not a lithopatch model");
    if (j.at("version").get<int>() != kModelFormatVersion)
      throw Error(ErrorCode::MalformedFile, "unsupported model version");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "forest") {
      ForestModel m;
      m.schema_id = j.at("schema_id").get<std::string>();
      m.num_features = j.at("num_features").get<std::size_t>();
      m.num_classes = j.at("num_classes").get<int>();
      m.params = forest_params_from_json(j.at("params"));
      for (const auto& t : j.at("trees")) m.trees.push_back(tree_from_json(t));
      return m;
    }
    if (kind == "boosted") {
      BoostedModel m;
      m.schema_id = j.at("schema_id").get<std::string>();
      m.num_features = j.at("num_features").get<std::size_t>();
      m.num_classes = j.at("num_classes").get<int>();
      m.params = boost_params_from_json(j.at("params"));
      m.base_score = j.at("base_score").get<double>();
      for (const auto& r : j.at("rounds")) {
        std::vector<DecisionTree> per_class;
        for (const auto& t : r) per_class.push_back(tree_from_json(t));
        if (static_cast<int>(per_class.size()) != m.num_classes)
          throw Error(ErrorCode::MalformedFile, "boosting round does not have one tree per class");
        m.rounds.push_back(std::move(per_class));
      }
      return m;
    }
    throw Error(ErrorCode::MalformedFile, "unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("model file: ") + e.what());
  }
}

inline void save_tree_model(const std::filesystem::path& path, const TreeModel& m) {
  io::write_text_atomically(path, to_json(m).dump());
}

inline TreeModel load_tree_model(const std::filesystem::path& path) {
  try {
    return tree_model_from_json(nlohmann::json::parse(io::read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

}  // namespace lithopatch
