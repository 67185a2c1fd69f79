#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/augmentation.hpp"
#include "lithopatch/deep_features.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/features.hpp"
#include "lithopatch/hashing.hpp"
#include "lithopatch/manifest.hpp"
#include "lithopatch/metrics.hpp"
#include "lithopatch/mlp_head.hpp"
#include "lithopatch/model_io.hpp"
#include "lithopatch/parallel.hpp"
#include "lithopatch/patch_sampling.hpp"
#include "lithopatch/pipeline/config.hpp"
#include "lithopatch/pipeline/ledger.hpp"
#include "lithopatch/pipeline/patch_index.hpp"
#include "lithopatch/projection.hpp"
#include "lithopatch/splits.hpp"
#include "lithopatch/tuning.hpp"

namespace lithopatch::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kExtracted = "patches/extracted.json";
inline constexpr const char* kBalanced = "patches/balanced.json";
inline constexpr const char* kSplit = "splits/split.json";
inline constexpr const char* kAugTrain = "patches/augmented_train.json";
inline constexpr const char* kAugVal = "patches/augmented_val.json";
inline constexpr std::array<const char*, 3> kParts = {"train", "val", "test"};

inline std::string features_file(const std::string& part) { return "features/" + part + ".lpfv"; }
inline std::string rows_file(const std::string& part) { return "features/" + part + ".rows.json"; }

/// Provenance of one feature-matrix row.
struct RowInfo {
  std::string id;
  std::string source_image_id;
  View view = View::surface;
  int copy = 0;
};

inline nlohmann::json to_json(const std::vector<RowInfo>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"id", r.id}, {"source_image_id", r.source_image_id}, {"view", std::string(view_name(r.view))}, {"copy", r.copy}});
  return out;
}

inline std::vector<RowInfo> rows_from_json(const nlohmann::json& j) {
  std::vector<RowInfo> rows;
  try {
    for (const auto& r : j)
      rows.push_back({r.at("id").get<std::string>(), r.at("source_image_id").get<std::string>(),
                      parse_view(r.at("view").get<std::string>()), r.at("copy").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("feature rows: ") + e.what());
  }
  return rows;
}

/// Row indices belonging to a view ("mixed" keeps all), optionally originals only.
inline std::vector<std::size_t> select_rows(const std::vector<RowInfo>& rows, const std::string& view, bool originals_only = false) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (view != "mixed" && view_name(rows[i].view) != view) continue;
    if (originals_only && rows[i].copy != 0) continue;
    idx.push_back(i);
  }
  return idx;
}

inline std::uint64_t view_slot(const std::string& view) { return view == "surface" ? 0 : view == "section" ? 1 : 2; }

/// Classifier parameters from the config with the given seed.
inline ClassifierParams tree_params(const PipelineConfig& c, std::uint64_t seed) {
  if (c.classifier == ClassifierKind::forest) {
    auto p = c.forest;
    p.seed = seed;
    return p;
  }
  auto p = c.boosted;
  p.seed = seed;
  return p;
}

inline std::string split_mode(const PipelineConfig& c) {
  return c.split.group_by_source ? "grouped:source_image" : "random:patch";
}

struct RunOptions {
  bool resume = false;
  std::function<void(const std::string&)> log = [](const std::string& msg) { std::cerr << msg << '\n'; };
};

struct AblationRow {
  int patch_size = 0;
  std::size_t patches = 0;
  std::optional<double> precision, recall;
  std::string note;
};

/// Runs pipeline stages against one output directory, keeping its ledger current.
class Runner {
 public:
  Runner(PipelineConfig config, RunOptions options = {})
      : cfg_(std::move(config)), out_(cfg_.output_path()), opt_(std::move(options)) {
    fs::create_directories(out_);
    ledger_ = Ledger::load_or_create(out_);
  }

  const fs::path& output_dir() const { return out_; }
  const Ledger& ledger() const { return ledger_; }

  void extract() {
    stage("extract", {}, source_inputs(), {{"manifest", cfg_.manifest}, {"patch_size", cfg_.patch_size}, {"max_overlap", cfg_.max_overlap}},
          [&] {
            PatchIndex index;
            index.patch_size = cfg_.patch_size;
            for (const auto& e : manifest().entries) {
              auto records = extract_grid_patches(sources().at(e.image_id), cfg_.patch_size, cfg_.max_overlap);
              for (auto& r : records) {
                r.patch = {};
                index.dataset.records.push_back(std::move(r));
              }
            }
            save_patch_index(out_ / kExtracted, index);
            log("extract: " + std::to_string(index.dataset.records.size()) + " grid patches");
            return std::vector<std::string>{kExtracted};
          });
  }

  void balance() {
    nlohmann::json section = snapshot(cfg_)["balance"];
    section["seed"] = cfg_.seed("balance");
    stage("balance", {kExtracted}, cfg_.balance == BalanceMode::up ? source_inputs() : nlohmann::json::object(), section, [&] {
      const auto extracted = load_patch_index(out_ / kExtracted);
      PatchIndex index;
      index.patch_size = extracted.patch_size;
      for (View view : {View::surface, View::section}) {
        PatchDataset ds;
        for (const auto& r : extracted.dataset.records)
          if (r.view == view) ds.records.push_back(r);
        if (ds.records.empty()) continue;
        const std::uint64_t seed = derive_seed(cfg_.seed("balance"), {view_slot(std::string(view_name(view)))});
        if (cfg_.balance == BalanceMode::down) {
          ds = downsample_classes(std::move(ds), seed);
        } else if (cfg_.balance == BalanceMode::up) {
          std::vector<SourceImage> view_sources;
          for (const auto& [id, s] : sources())
            if (s.view == view) view_sources.push_back(s);
          UpsampleOptions up;
          up.target_count = cfg_.balance_target;
          up.patch_size = extracted.patch_size;
          up.max_overlap = cfg_.max_overlap;
          ds = upsample_classes(std::move(ds), view_sources, up, seed);
        }
        for (auto& r : ds.records) {
          r.patch = {};
          index.dataset.records.push_back(std::move(r));
        }
        for (const auto& s : ds.seed_lineage)
          index.dataset.seed_lineage.push_back({s.stage + ":" + std::string(view_name(view)), s.seed});
      }
      save_patch_index(out_ / kBalanced, index);
      const auto counts = index.dataset.class_counts();
      log("balance: " + std::to_string(index.dataset.records.size()) + " patches (" + std::to_string(counts[0]) + "/" +
          std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + "/" + std::to_string(counts[3]) + ")");
      return std::vector<std::string>{kBalanced};
    });
  }

  void split() {
    nlohmann::json section = snapshot(cfg_)["split"];
    section["seed"] = cfg_.seed("split");
    stage("split", {kBalanced}, {}, section, [&] {
      const auto balanced = load_patch_index(out_ / kBalanced);
      const auto& recs = balanced.dataset.records;
      std::vector<SplitItem> items;
      for (const auto& r : recs) items.push_back({r.source_image_id, class_index(r.label)});
      const auto parts = group_split(items, cfg_.split, cfg_.seed("split"));
      auto ids = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::string> out;
        for (auto i : idx) out.push_back(recs[i].id);
        return out;
      };
      nlohmann::json j = {{"mode", split_mode(cfg_)},
                          {"fractions", cfg_.split.fractions},
                          {"seed", cfg_.seed("split")},
                          {"train", ids(parts.train)},
                          {"val", ids(parts.val)},
                          {"test", ids(parts.test)}};
      io::write_text_atomically(out_ / kSplit, j.dump(1) + "\n");
      log("split: " + std::to_string(parts.train.size()) + " train / " + std::to_string(parts.val.size()) + " val / " +
          std::to_string(parts.test.size()) + " test");
      return std::vector<std::string>{kSplit};
    });
  }

  void augment() {
    nlohmann::json section = snapshot(cfg_)["augment"];
    section["seed"] = cfg_.seed("augment");
    stage("augment", {kBalanced, kSplit}, {}, section, [&] {
      const auto balanced = load_patch_index(out_ / kBalanced);
      const auto parts = load_split_ids();
      std::vector<std::string> outputs;
      for (int p = 0; p < 2; ++p) {
        const auto records = records_in(balanced, parts[p]);
        PatchIndex index;
        index.patch_size = balanced.patch_size;
        index.fill = cfg_.augment.fill;
        index.dataset.seed_lineage = balanced.dataset.seed_lineage;
        const std::uint64_t seed = derive_seed(cfg_.seed("augment"), {static_cast<std::uint64_t>(p)});
        index.dataset.seed_lineage.push_back({std::string("augment:") + kParts[p], seed});
        for (std::size_t i = 0; i < records.size(); ++i)
          for (int copy = 0; copy < cfg_.augment_factor; ++copy) {
            if (copy == 0) {
              index.dataset.records.push_back(records[i]);
              continue;
            }
            PatchRecord r = records[i];
            r.id = augmented_patch_id(records[i].id, copy);
            r.origin = AugmentedOrigin{records[i].id, copy,
                                       augment_transform(i, copy, seed, balanced.patch_size, cfg_.augment)};
            index.dataset.records.push_back(std::move(r));
          }
        const std::string rel = p == 0 ? kAugTrain : kAugVal;
        save_patch_index(out_ / rel, index);
        outputs.push_back(rel);
        log(std::string("augment: ") + kParts[p] + " " + std::to_string(records.size()) + " -> " +
            std::to_string(index.dataset.records.size()));
      }
      return outputs;
    });
  }

  void featurize() {
    stage("featurize", {kBalanced, kSplit, kAugTrain, kAugVal}, source_inputs(), snapshot(cfg_)["features"], [&] {
      std::vector<std::string> outputs;
      const auto balanced = load_patch_index(out_ / kBalanced);
      const auto test_ids = load_split_ids()[2];
      PatchIndex test_index = balanced;
      test_index.dataset.records = records_in(balanced, test_ids);
      const PatchIndex indices[3] = {load_patch_index(out_ / kAugTrain), load_patch_index(out_ / kAugVal), test_index};
      for (int p = 0; p < 3; ++p) {
        const auto& index = indices[p];
        const Materializer mat(sources(), index);
        const auto& recs = index.dataset.records;
        std::vector<std::vector<double>> rows(recs.size());
        parallel_for(recs.size(), [&](std::size_t i) { rows[i] = patch_features(mat.pixels(recs[i]), cfg_.whiten); });
        FeatureMatrix m;
        m.cols = kHsiLbpLength;
        std::vector<RowInfo> info;
        for (std::size_t i = 0; i < recs.size(); ++i) {
          m.append(rows[i], class_index(recs[i].label));
          const auto* aug = std::get_if<AugmentedOrigin>(&recs[i].origin);
          info.push_back({recs[i].id, recs[i].source_image_id, recs[i].view, aug ? aug->copy_index : 0});
        }
        save_lpfv(out_ / features_file(kParts[p]), m);
        io::write_text_atomically(out_ / rows_file(kParts[p]), to_json(info).dump(1) + "\n");
        outputs.push_back(features_file(kParts[p]));
        outputs.push_back(rows_file(kParts[p]));
        log(std::string("featurize: ") + kParts[p] + " " + std::to_string(m.rows) + " rows");
      }
      return outputs;
    });
  }

  void train() {
    nlohmann::json section = snapshot(cfg_)["classifier"];
    section["views"] = cfg_.views;
    section["seed"] = cfg_.seed("train");
    nlohmann::json external = nlohmann::json::object();
    if (deep_mode()) external["deep_features"] = sha256_file(deep_path());
    stage("train", deep_mode() ? std::vector<std::string>{} : feature_inputs({"train", "val"}), external, section, [&] {
      std::vector<std::string> outputs;
      for (const auto& view : active_views()) {
        const std::uint64_t seed = derive_seed(cfg_.seed("train"), {view_slot(view)});
        nlohmann::json summary = {{"view", view}, {"classifier", to_string(cfg_.classifier)}, {"seed", seed}};
        if (cfg_.classifier == ClassifierKind::mlp) {
          auto [train, val, test] = mlp_parts(view);
          (void)test;
          auto tc = cfg_.mlp;
          tc.seed = seed;
          const auto result = train_head(train, val, tc);
          save_mlp(out_ / model_file(view), result.model);
          summary["train_rows"] = train.rows;
          summary["val_rows"] = val.rows;
          summary["log"] = to_json(result.log);
        } else {
          const auto data = train_val_matrix(view, false);
          const auto model = train_classifier(data, tree_params(cfg_, seed));
          save_tree_model(out_ / model_file(view), model);
          summary["rows"] = data.rows;
          summary["params"] = to_json(tree_params(cfg_, seed));
        }
        const std::string report = "models/" + view + ".train.json";
        io::write_text_atomically(out_ / report, summary.dump(2) + "\n");
        outputs.push_back(model_file(view));
        outputs.push_back(report);
        log("train: " + view + " model written");
      }
      return outputs;
    });
  }

  std::vector<EvaluationReport> evaluate() {
    std::vector<std::string> inputs = deep_mode() ? std::vector<std::string>{} : feature_inputs({"test"});
    for (const auto& view : active_views()) inputs.push_back(model_file(view));
    nlohmann::json external = nlohmann::json::object();
    if (deep_mode()) external["deep_features"] = sha256_file(deep_path());
    std::vector<EvaluationReport> reports;
    stage("evaluate", inputs, external, {{"views", cfg_.views}, {"split_mode", split_mode(cfg_)}}, [&] {
      std::vector<std::string> outputs;
      for (const auto& view : active_views()) {
        EvaluationReport report;
        const std::string model_id = to_string(cfg_.classifier);
        if (cfg_.classifier == ClassifierKind::mlp) {
          const auto model = load_mlp(out_ / model_file(view));
          report = evaluate_model(model, std::get<2>(mlp_parts(view)), model_id, view, split_mode(cfg_));
        } else {
          const auto model = load_tree_model(out_ / model_file(view));
          report = evaluate_model(model, test_matrix(view), model_id, view, split_mode(cfg_));
        }
        for (const auto& name : kSeedNames)
          if (name != "crossval") report.seeds.emplace_back(name, cfg_.seed(name));
        const std::string json_rel = "reports/" + view + ".json", csv_rel = "reports/" + view + "_confusion.csv";
        io::write_text_atomically(out_ / json_rel, to_json(report).dump(2) + "\n");
        io::write_text_atomically(out_ / csv_rel, confusion_csv(report.confusion));
        outputs.push_back(json_rel);
        outputs.push_back(csv_rel);
        reports.push_back(std::move(report));
      }
      const auto tables = format_report_tables(reports);
      io::write_text_atomically(out_ / "reports/summary.txt", tables);
      outputs.push_back("reports/summary.txt");
      log(tables);
      return outputs;
    });
    return reports;
  }

  void crossval() {
    if (cfg_.classifier == ClassifierKind::mlp)
      throw Error(ErrorCode::ConfigInvalid, "crossval supports the forest and boosted classifiers");
    nlohmann::json section = snapshot(cfg_)["crossval"];
    section["classifier"] = snapshot(cfg_)["classifier"];
    section["seed"] = cfg_.seed("crossval");
    stage("crossval", feature_inputs({"train", "val"}), {}, section, [&] {
      const auto data = train_val_matrix("mixed", true);
      const std::uint64_t seed = cfg_.seed("crossval");
      const bool loo = cfg_.crossval_protocol == "loo";
      auto cv_json = [](const CvResult& r) {
        return nlohmann::json{{"mean_weighted_precision", r.mean_weighted_precision},
                              {"mean_weighted_recall", r.mean_weighted_recall},
                              {"run_precision", r.run_precision},
                              {"run_recall", r.run_recall},
                              {"confusion_matrix", to_json(r.confusion)}};
      };
      nlohmann::json out = {{"protocol", cfg_.crossval_protocol},
                            {"folds", loo ? static_cast<int>(data.rows) : cfg_.crossval_folds},
                            {"runs", loo ? 1 : cfg_.crossval_runs},
                            {"rows", data.rows},
                            {"seed", seed}};
      const auto base = tree_params(cfg_, 0);
      if (!cfg_.tuning_grid.empty()) {
        if (loo) throw Error(ErrorCode::ConfigInvalid, "hyper-parameter tuning uses k-fold cross-validation");
        std::vector<ClassifierParams> grid;
        for (const auto& point : cfg_.tuning_grid) {
          auto merged = to_json(base);
          merged.merge_patch(point);
          grid.push_back(cfg_.classifier == ClassifierKind::forest ? ClassifierParams(forest_params_from_json(merged))
                                                                   : ClassifierParams(boost_params_from_json(merged)));
        }
        const auto result = tune_hyperparameters(data, grid, cfg_.crossval_folds, cfg_.crossval_runs, seed);
        nlohmann::json points = nlohmann::json::array();
        for (std::size_t g = 0; g < grid.size(); ++g) {
          auto p = cv_json(result.per_point[g]);
          p["params"] = to_json(grid[g]);
          points.push_back(p);
        }
        out["grid"] = points;
        out["best_index"] = result.best_index;
        out["best_params"] = to_json(result.best);
        log("crossval: best grid point " + std::to_string(result.best_index) + " with mean weighted precision " +
            format_real(result.per_point[result.best_index].mean_weighted_precision));
      } else {
        const auto r = cross_validate(data, base, {cfg_.crossval_folds, cfg_.crossval_runs, loo}, seed);
        out["result"] = cv_json(r);
        out["params"] = to_json(base);
        log("crossval: mean weighted precision " + format_real(r.mean_weighted_precision) + ", recall " +
            format_real(r.mean_weighted_recall));
      }
      io::write_text_atomically(out_ / "reports/crossval.json", out.dump(2) + "\n");
      return std::vector<std::string>{"reports/crossval.json"};
    });
  }

  void project() {
    stage("project", feature_inputs({"train", "val", "test"}), {}, snapshot(cfg_)["project"], [&] {
      FeatureMatrix all;
      all.cols = kHsiLbpLength;
      for (const char* part : kParts) {
        const auto m = load_lpfv(out_ / features_file(part));
        const auto rows = load_rows(part);
        const auto idx = select_rows(rows, "mixed", true);
        for (auto i : idx) all.append(m.row(i), m.labels[i]);
      }
      Eigen::MatrixXd X = to_matrix(all);
      if (cfg_.project_standardize) {
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
          const double mean = X.col(c).mean();
          const double sd = std::sqrt((X.col(c).array() - mean).square().sum() / std::max<double>(1.0, X.rows() - 1.0));
          X.col(c) = ((X.col(c).array() - mean) / (sd > 0.0 ? sd : 1.0)).matrix();
        }
      }
      const auto model = fit_projection(X, cfg_.project_components);
      const Eigen::MatrixXd coords = project_rows(model, X);
      export_scatter(coords, all.labels, out_ / "projection/hsi_lbp");
      nlohmann::json j = to_json(model);
      j["rows"] = all.rows;
      j["standardized"] = cfg_.project_standardize;
      const auto sil = silhouette_score(coords, all.labels);
      const auto sil_full = silhouette_score(X, all.labels);
      j["silhouette_projected"] = sil ? nlohmann::json(*sil) : nlohmann::json(nullptr);
      j["silhouette_features"] = sil_full ? nlohmann::json(*sil_full) : nlohmann::json(nullptr);
      io::write_text_atomically(out_ / "projection/projection.json", j.dump(2) + "\n");
      log("project: " + std::to_string(all.rows) + " rows, explained variance " +
          format_real(model.explained_ratio.sum()));
      return std::vector<std::string>{"projection/hsi_lbp.csv", "projection/hsi_lbp.svg", "projection/projection.json"};
    });
  }

  std::vector<AblationRow> ablate() {
    std::vector<AblationRow> rows;
    nlohmann::json section = snapshot(cfg_);
    section.erase("crossval");
    section.erase("project");
    stage("ablate", {}, source_inputs(), section, [&] {
      for (int size : cfg_.ablate_sizes) rows.push_back(ablate_one(size));
      std::optional<std::size_t> best;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].precision || !rows[i].recall) continue;
        const double score = *rows[i].precision + *rows[i].recall;
        if (!best || score > *rows[*best].precision + *rows[*best].recall) best = i;
      }
      nlohmann::json table = nlohmann::json::array();
      std::ostringstream txt;
      txt << "patch_size  patches  weighted_P  weighted_R  note\n";
      auto cell = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
      for (const auto& r : rows) {
        table.push_back({{"patch_size", r.patch_size}, {"patches", r.patches}, {"weighted_precision", cell(r.precision)},
                         {"weighted_recall", cell(r.recall)}, {"note", r.note}});
        char line[160];
        std::snprintf(line, sizeof line, "%-10d  %-7zu  %-10s  %-10s  %s\n", r.patch_size, r.patches,
                      lithopatch::detail::metric_cell(r.precision).c_str(), lithopatch::detail::metric_cell(r.recall).c_str(), r.note.c_str());
        txt << line;
      }
      const nlohmann::json best_size = best ? nlohmann::json(rows[*best].patch_size) : nlohmann::json(nullptr);
      txt << "best: " << (best ? std::to_string(rows[*best].patch_size) : std::string("unavailable")) << '\n';
      io::write_text_atomically(out_ / "reports/ablation.json",
                                nlohmann::json{{"rows", table}, {"best_patch_size", best_size}}.dump(2) + "\n");
      io::write_text_atomically(out_ / "reports/ablation.txt", txt.str());
      log(txt.str());
      return std::vector<std::string>{"reports/ablation.json", "reports/ablation.txt"};
    });
    return rows;
  }

  /// extract -> balance -> split -> augment -> featurize -> train -> evaluate -> crossval -> project
  std::vector<EvaluationReport> run_all() {
    if (!deep_mode()) {
      extract();
      balance();
      split();
      augment();
      featurize();
    }
    train();
    auto reports = evaluate();
    if (cfg_.classifier != ClassifierKind::mlp) crossval();
    if (!deep_mode()) project();
    return reports;
  }

 private:
  void log(const std::string& msg) const {
    if (opt_.log) opt_.log(msg);
  }

  const Manifest& manifest() {
    if (!manifest_) manifest_ = load_manifest(cfg_.manifest_path());
    return *manifest_;
  }

  const SourceMap& sources() {
    if (!sources_) sources_ = load_sources(manifest());
    return *sources_;
  }

  /// Hashes of the manifest and every referenced image and mask.
  nlohmann::json source_inputs() {
    nlohmann::json in = {{"manifest", sha256_file(cfg_.manifest_path())}};
    for (const auto& e : manifest().entries) {
      in["source:" + e.image_path.generic_string()] = sha256_file(resolve(manifest(), e.image_path));
      in["source:" + e.mask_path.generic_string()] = sha256_file(resolve(manifest(), e.mask_path));
    }
    return in;
  }

  template <typename Body>
  void stage(const std::string& name, const std::vector<std::string>& inputs, const nlohmann::json& external,
             const nlohmann::json& section, Body&& body) {
    nlohmann::json in = external.is_object() ? external : nlohmann::json::object();
    for (const auto& rel : inputs) {
      ledger_.verify(out_, rel);
      in[rel] = ledger_.file_hash(rel);
    }
    const std::string fingerprint = sha256_hex(name + "\n" + section.dump() + "\n" + in.dump());
    if (opt_.resume && up_to_date(name, fingerprint)) {
      log(name + ": up to date, skipped");
      return;
    }
    const std::vector<std::string> outputs = body();
    ledger_.set_config(snapshot(cfg_));
    ledger_.refresh_files(out_);
    nlohmann::json outs = nlohmann::json::object();
    for (const auto& rel : outputs) outs[rel] = ledger_.file_hash(rel);
    ledger_.record_stage(name, {{"fingerprint", fingerprint}, {"config", section}, {"inputs", in}, {"outputs", outs}});
    ledger_.save(out_);
  }

  bool up_to_date(const std::string& name, const std::string& fingerprint) const {
    const auto* s = ledger_.stage(name);
    if (!s || s->value("fingerprint", "") != fingerprint) return false;
    try {
      for (const auto& [rel, hash] : s->at("outputs").items()) {
        ledger_.verify(out_, rel);
        if (ledger_.file_hash(rel) != hash.get<std::string>()) return false;
      }
    } catch (const Error&) {
      return false;
    }
    return true;
  }

  std::array<std::vector<std::string>, 3> load_split_ids() const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text(out_ / kSplit));
      return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
              j.at("test").get<std::vector<std::string>>()};
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedFile, std::string(kSplit) + ": " + e.what());
    }
  }

  static std::vector<PatchRecord> records_in(const PatchIndex& index, const std::vector<std::string>& ids) {
    std::set<std::string> wanted(ids.begin(), ids.end());
    std::vector<PatchRecord> out;
    for (const auto& r : index.dataset.records)
      if (wanted.count(r.id)) out.push_back(r);
    return out;
  }

  std::vector<RowInfo> load_rows(const std::string& part) const {
    try {
      return rows_from_json(nlohmann::json::parse(io::read_text(out_ / rows_file(part))));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedFile, rows_file(part) + ": " + e.what());
    }
  }

  static std::vector<std::string> feature_inputs(std::initializer_list<const char*> parts) {
    std::vector<std::string> in;
    for (const char* p : parts) {
      in.push_back(features_file(p));
      in.push_back(rows_file(p));
    }
    return in;
  }

  FeatureMatrix part_matrix(const std::string& part, const std::string& view, bool originals_only) const {
    const auto m = load_lpfv(out_ / features_file(part));
    const auto rows = load_rows(part);
    if (rows.size() != m.rows) throw Error(ErrorCode::MalformedFile, rows_file(part) + " does not match its matrix");
    return m.subset(select_rows(rows, view, originals_only));
  }

  FeatureMatrix train_val_matrix(const std::string& view, bool originals_only) const {
    auto m = part_matrix("train", view, originals_only);
    const auto v = part_matrix("val", view, originals_only);
    for (std::size_t i = 0; i < v.rows; ++i) m.append(v.row(i), v.labels[i]);
    return m;
  }

  FeatureMatrix test_matrix(const std::string& view) const { return part_matrix("test", view, false); }

  bool deep_mode() const { return cfg_.classifier == ClassifierKind::mlp && cfg_.mlp_features != "hsi-lbp"; }

  fs::path deep_path() const {
    const fs::path p(cfg_.mlp_features);
    return p.is_absolute() ? p : cfg_.config_dir / p;
  }

  /// Deep-feature files carry no view, so only the mixed view is trained.
  std::vector<std::string> active_views() const {
    if (deep_mode()) return {"mixed"};
    return cfg_.views;
  }

  std::string model_file(const std::string& view) const {
    return "models/" + view + (cfg_.classifier == ClassifierKind::mlp ? ".mlp.json" : ".json");
  }

  /// Train / val / test matrices for the MLP head.
  std::tuple<FeatureMatrix, FeatureMatrix, FeatureMatrix> mlp_parts(const std::string& view) const {
    if (!deep_mode()) return {part_matrix("train", view, false), part_matrix("val", view, false), test_matrix(view)};
    const auto set = load_deep_features(deep_path());
    if (!set.split.empty()) return {set.part(0), set.part(1), set.part(2)};
    std::vector<SplitItem> items;
    for (std::size_t i = 0; i < set.features.rows; ++i) items.push_back({std::to_string(i), set.features.labels[i]});
    GroupSplitOptions opts = cfg_.split;
    opts.group_by_source = false;
    const auto parts = group_split(items, opts, cfg_.seed("split"));
    return {set.features.subset(parts.train), set.features.subset(parts.val), set.features.subset(parts.test)};
  }

  static Eigen::MatrixXd project_rows(const ProjectionModel& model, const Eigen::MatrixXd& X) {
    return lithopatch::project(model, X);
  }

  AblationRow ablate_one(int size) {
    AblationRow row;
    row.patch_size = size;
    const int overlap = std::min(cfg_.max_overlap, size - 1);
    std::vector<PatchRecord> all;
    for (const auto& e : manifest().entries)
      for (auto& r : extract_grid_patches(sources().at(e.image_id), size, overlap)) all.push_back(std::move(r));
    row.patches = all.size();
    if (all.empty()) {
      row.note = "no patch fits inside the fragment masks";
      return row;
    }
    try {
      PatchDataset balanced;
      for (View view : {View::surface, View::section}) {
        PatchDataset ds;
        for (const auto& r : all)
          if (r.view == view) ds.records.push_back(r);
        if (ds.records.empty()) continue;
        const std::uint64_t seed = derive_seed(cfg_.seed("balance"), {view_slot(std::string(view_name(view)))});
        if (cfg_.balance != BalanceMode::none) ds = downsample_classes(std::move(ds), seed);
        for (auto& r : ds.records) balanced.records.push_back(std::move(r));
      }
      std::vector<SplitItem> items;
      for (const auto& r : balanced.records) items.push_back({r.source_image_id, class_index(r.label)});
      const auto parts = group_split(items, cfg_.split, cfg_.seed("split"));
      const int factor = cfg_.ablate_augment_factor.value_or(cfg_.augment_factor);

      auto featurize_part = [&](const std::vector<std::size_t>& idx, int copies, std::uint64_t seed) {
        std::vector<std::vector<double>> feats(idx.size() * static_cast<std::size_t>(copies));
        parallel_for(feats.size(), [&](std::size_t k) {
          const std::size_t i = k / static_cast<std::size_t>(copies);
          const int copy = static_cast<int>(k % static_cast<std::size_t>(copies));
          const auto rec = augment_record(balanced.records[idx[i]], i, copy, seed, cfg_.augment);
          feats[k] = patch_features(rec.patch, cfg_.whiten);
        });
        FeatureMatrix m;
        m.cols = kHsiLbpLength;
        for (std::size_t k = 0; k < feats.size(); ++k)
          m.append(feats[k], class_index(balanced.records[idx[k / static_cast<std::size_t>(copies)]].label));
        return m;
      };
      auto train = featurize_part(parts.train, factor, derive_seed(cfg_.seed("augment"), {0}));
      const auto val = featurize_part(parts.val, factor, derive_seed(cfg_.seed("augment"), {1}));
      const auto test = featurize_part(parts.test, 1, 0);
      if (test.rows == 0) throw Error(ErrorCode::EmptySplit, "test split is empty");
      const std::uint64_t seed = derive_seed(cfg_.seed("train"), {view_slot("mixed")});
      EvaluationReport report;
      if (cfg_.classifier == ClassifierKind::mlp) {
        auto tc = cfg_.mlp;
        tc.seed = seed;
        report = evaluate_model(train_head(train, val, tc).model, test, "mlp", "mixed");
      } else {
        for (std::size_t i = 0; i < val.rows; ++i) train.append(val.row(i), val.labels[i]);
        report = evaluate_model(train_classifier(train, tree_params(cfg_, seed)), test, to_string(cfg_.classifier), "mixed");
      }
      row.precision = report.weighted_precision;
      row.recall = report.weighted_recall;
    } catch (const Error& e) {
      row.note = e.what();
    }
    return row;
  }

  PipelineConfig cfg_;
  fs::path out_;
  RunOptions opt_;
  Ledger ledger_;
  std::optional<Manifest> manifest_;
  std::optional<SourceMap> sources_;
};

}  // namespace lithopatch::pipeline
