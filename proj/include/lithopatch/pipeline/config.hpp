#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/augmentation.hpp"
#include "lithopatch/binary_io.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/mlp_head.hpp"
#include "lithopatch/model_io.hpp"
#include "lithopatch/splits.hpp"

namespace lithopatch::pipeline {

enum class BalanceMode { down, up, none };
enum class ClassifierKind { forest, boosted, mlp };

inline const std::vector<std::string> kSeedNames = {"balance", "split", "augment", "train", "crossval"};

struct PipelineConfig {
  std::filesystem::path config_dir;  ///< base for relative paths
  std::string manifest;
  std::string output_dir = "run";
  int patch_size = 256;
  int max_overlap = 20;
  std::vector<std::string> views = {"surface", "section", "mixed"};

  BalanceMode balance = BalanceMode::down;
  std::optional<std::size_t> balance_target;

  int augment_factor = 8;
  AugmentConfig augment;

  bool whiten = false;

  ClassifierKind classifier = ClassifierKind::boosted;
  ForestParams forest;
  BoostParams boosted;
  TrainConfig mlp;
  std::string mlp_features = "hsi-lbp";  ///< or a path to an LPDF1/CSV deep-feature file

  GroupSplitOptions split;

  std::string crossval_protocol = "kfold";  ///< kfold | loo
  int crossval_folds = 10;
  int crossval_runs = 5;
  nlohmann::json tuning_grid = nlohmann::json::array();

  int project_components = 3;
  bool project_standardize = true;

  std::vector<int> ablate_sizes = {64, 128, 256, 512};
  std::optional<int> ablate_augment_factor;

  std::map<std::string, std::uint64_t> seeds = {
      {"balance", 11}, {"split", 23}, {"augment", 37}, {"train", 41}, {"crossval", 53}};

  std::filesystem::path manifest_path() const {
    const std::filesystem::path p(manifest);
    return p.is_absolute() ? p : config_dir / p;
  }
  std::filesystem::path output_path() const {
    const std::filesystem::path p(output_dir);
    return p.is_absolute() ? p : config_dir / p;
  }
  std::uint64_t seed(const std::string& name) const { return seeds.at(name); }
};

inline std::string to_string(BalanceMode m) { return m == BalanceMode::down ? "down" : m == BalanceMode::up ? "up" : "none"; }
inline std::string to_string(ClassifierKind k) {
  return k == ClassifierKind::forest ? "forest" : k == ClassifierKind::boosted ? "boosted" : "mlp";
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"epsilon", c.adam_eps},      {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"relu_after_fc2", c.relu_after_fc2}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("epsilon", c.adam_eps);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.relu_after_fc2 = j.value("relu_after_fc2", c.relu_after_fc2);
  return c;
}

/// Effective configuration with every default filled in. The output directory
/// is left out so that runs into different directories share one snapshot.
inline nlohmann::json snapshot(const PipelineConfig& c) {
  nlohmann::json forest = to_json(c.forest), boosted = to_json(c.boosted);
  forest.erase("seed");
  boosted.erase("seed");
  nlohmann::json mlp = to_json(c.mlp);
  mlp["features"] = c.mlp_features;
  return {
      {"manifest", c.manifest},
      {"patch_size", c.patch_size},
      {"max_overlap", c.max_overlap},
      {"views", c.views},
      {"balance", {{"mode", to_string(c.balance)}, {"target", c.balance_target ? nlohmann::json(*c.balance_target) : nlohmann::json(nullptr)}}},
      {"augment", [&] {
         auto j = to_json(c.augment);
         j["factor"] = c.augment_factor;
         return j;
       }()},
      {"features", {{"schema", kHsiLbpSchema}, {"whiten", c.whiten}}},
      {"classifier", {{"kind", to_string(c.classifier)}, {"forest", forest}, {"boosted", boosted}, {"mlp", mlp}}},
      {"split",
       {{"fractions", c.split.fractions},
        {"group_by", c.split.group_by_source ? "source_image" : "none"},
        {"stratify", c.split.stratify}}},
      {"crossval",
       {{"protocol", c.crossval_protocol}, {"folds", c.crossval_folds}, {"runs", c.crossval_runs}, {"grid", c.tuning_grid}}},
      {"project", {{"components", c.project_components}, {"standardize", c.project_standardize}}},
      {"ablate",
       {{"sizes", c.ablate_sizes},
        {"augment_factor", c.ablate_augment_factor ? nlohmann::json(*c.ablate_augment_factor) : nlohmann::json(nullptr)}}},
      {"seeds", c.seeds},
  };
}

namespace detail {
inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + key + "' in " + where);
}
}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& config_dir) {
  PipelineConfig c;
  c.config_dir = config_dir;
  try {
    detail::check_keys(j,
                       {"manifest", "output_dir", "patch_size", "max_overlap", "views", "balance", "augment", "features",
                        "classifier", "split", "crossval", "project", "ablate", "seeds"},
                       "config");
    c.manifest = j.at("manifest").get<std::string>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.max_overlap = j.value("max_overlap", c.max_overlap);
    if (j.contains("views")) c.views = j.at("views").get<std::vector<std::string>>();

    if (j.contains("balance")) {
      const auto& b = j.at("balance");
      detail::check_keys(b, {"mode", "target"}, "balance");
      const auto mode = b.value("mode", std::string("down"));
      if (mode == "down") c.balance = BalanceMode::down;
      else if (mode == "up") c.balance = BalanceMode::up;
      else if (mode == "none") c.balance = BalanceMode::none;
      else throw Error(ErrorCode::ConfigInvalid, "balance.mode must be down, up or none");
      if (b.contains("target") && !b.at("target").is_null()) c.balance_target = b.at("target").get<std::size_t>();
    }
    if (j.contains("augment")) {
      auto a = j.at("augment");
      c.augment_factor = a.value("factor", c.augment_factor);
      a.erase("factor");
      detail::check_keys(a,
                         {"flip_probability", "rotation_deg", "scale", "shear_deg", "translate_px",
                          "perspective_probability", "perspective_jitter", "fill"},
                         "augment");
      c.augment = augment_config_from_json(a);
    }
    if (j.contains("features")) {
      const auto& f = j.at("features");
      detail::check_keys(f, {"schema", "whiten"}, "features");
      if (f.value("schema", std::string(kHsiLbpSchema)) != kHsiLbpSchema)
        throw Error(ErrorCode::ConfigInvalid, std::string("features.schema must be ") + kHsiLbpSchema);
      c.whiten = f.value("whiten", c.whiten);
    }
    if (j.contains("classifier")) {
      const auto& k = j.at("classifier");
      detail::check_keys(k, {"kind", "forest", "boosted", "mlp"}, "classifier");
      const auto kind = k.value("kind", std::string("boosted"));
      if (kind == "forest") c.classifier = ClassifierKind::forest;
      else if (kind == "boosted") c.classifier = ClassifierKind::boosted;
      else if (kind == "mlp") c.classifier = ClassifierKind::mlp;
      else throw Error(ErrorCode::ConfigInvalid, "classifier.kind must be forest, boosted or mlp");
      if (k.contains("forest")) c.forest = forest_params_from_json(k.at("forest"));
      if (k.contains("boosted")) c.boosted = boost_params_from_json(k.at("boosted"));
      if (k.contains("mlp")) {
        c.mlp = train_config_from_json(k.at("mlp"));
        c.mlp_features = k.at("mlp").value("features", c.mlp_features);
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      detail::check_keys(s, {"fractions", "group_by", "stratify"}, "split");
      if (s.contains("fractions")) c.split.fractions = s.at("fractions").get<std::array<double, 3>>();
      const auto group = s.value("group_by", std::string("source_image"));
      if (group != "source_image" && group != "none")
        throw Error(ErrorCode::ConfigInvalid, "split.group_by must be source_image or none");
      c.split.group_by_source = group == "source_image";
      c.split.stratify = s.value("stratify", c.split.stratify);
    }
    if (j.contains("crossval")) {
      const auto& v = j.at("crossval");
      detail::check_keys(v, {"protocol", "folds", "runs", "grid"}, "crossval");
      c.crossval_protocol = v.value("protocol", c.crossval_protocol);
      c.crossval_folds = v.value("folds", c.crossval_folds);
      c.crossval_runs = v.value("runs", c.crossval_runs);
      if (v.contains("grid")) c.tuning_grid = v.at("grid");
    }
    if (j.contains("project")) {
      const auto& p = j.at("project");
      detail::check_keys(p, {"components", "standardize"}, "project");
      c.project_components = p.value("components", c.project_components);
      c.project_standardize = p.value("standardize", c.project_standardize);
    }
    if (j.contains("ablate")) {
      const auto& a = j.at("ablate");
      detail::check_keys(a, {"sizes", "augment_factor"}, "ablate");
      if (a.contains("sizes")) c.ablate_sizes = a.at("sizes").get<std::vector<int>>();
      if (a.contains("augment_factor") && !a.at("augment_factor").is_null())
        c.ablate_augment_factor = a.at("augment_factor").get<int>();
    }
    if (j.contains("seeds")) {
      for (const auto& [name, value] : j.at("seeds").items()) {
        if (std::find(kSeedNames.begin(), kSeedNames.end(), name) == kSeedNames.end())
          throw Error(ErrorCode::ConfigInvalid, "unknown seed '" + name + "'");
        c.seeds[name] = value.get<std::uint64_t>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }

  if (c.patch_size < 3) throw Error(ErrorCode::ConfigInvalid, "patch_size must be >= 3");
  if (c.max_overlap < 0 || c.max_overlap >= c.patch_size)
    throw Error(ErrorCode::ConfigInvalid, "max_overlap must lie in [0, patch_size)");
  if (c.augment_factor < 1) throw Error(ErrorCode::ConfigInvalid, "augment.factor must be >= 1");
  if (c.views.empty()) throw Error(ErrorCode::ConfigInvalid, "views must not be empty");
  for (const auto& v : c.views)
    if (v != "surface" && v != "section" && v != "mixed")
      throw Error(ErrorCode::ConfigInvalid, "unknown view '" + v + "'");
  if (c.crossval_protocol != "kfold" && c.crossval_protocol != "loo")
    throw Error(ErrorCode::ConfigInvalid, "crossval.protocol must be kfold or loo");
  if (c.project_components != 2 && c.project_components != 3)
    throw Error(ErrorCode::ConfigInvalid, "project.components must be 2 or 3");
  validate(c.mlp);
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::ConfigInvalid, "missing config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

/// Applies "name=value" to the named seed.
inline void apply_seed_override(PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::ConfigInvalid, "seed override must be name=value");
  const std::string name = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  if (std::find(kSeedNames.begin(), kSeedNames.end(), name) == kSeedNames.end())
    throw Error(ErrorCode::ConfigInvalid, "unknown seed '" + name + "'");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(value, &used, 0);
    if (used != value.size()) throw std::invalid_argument(value);
    c.seeds[name] = v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigInvalid, "seed '" + name + "' needs an unsigned integer, got '" + value + "'");
  }
}

}  // namespace lithopatch::pipeline
