#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "lithopatch/boosting.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/forest.hpp"
#include "lithopatch/metrics.hpp"
#include "lithopatch/model_io.hpp"
#include "lithopatch/random.hpp"
#include "lithopatch/splits.hpp"

namespace lithopatch {

using ClassifierParams = std::variant<ForestParams, BoostParams>;

inline TreeModel train_classifier(const FeatureMatrix& data, const ClassifierParams& params) {
  return std::visit(
      [&](const auto& p) -> TreeModel {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, ForestParams>)
          return train_random_forest(data, p);
        else
          return train_boosted(data, p);
      },
      params);
}

inline ClassifierParams with_seed(ClassifierParams params, std::uint64_t seed) {
  std::visit([&](auto& p) { p.seed = seed; }, params);
  return params;
}

inline nlohmann::json to_json(const ClassifierParams& params) {
  return std::visit(
      [](const auto& p) {
        auto j = to_json(p);
        j["kind"] = std::is_same_v<std::decay_t<decltype(p)>, ForestParams> ? "forest" : "boosted";
        return j;
      },
      params);
}

/// Ordering key for tie-breaks: ensemble size first, then the remaining
/// hyper-parameters in declaration order. Unlimited forest depth sorts last.
inline std::vector<double> complexity_key(const ClassifierParams& params) {
  if (const auto* f = std::get_if<ForestParams>(&params))
    return {0.0,
            double(f->n_trees),
            f->max_depth < 0 ? std::numeric_limits<double>::infinity() : double(f->max_depth),
            double(f->min_leaf),
            double(f->mtry),
            double(f->bootstrap)};
  const auto& b = std::get<BoostParams>(params);
  return {1.0,     double(b.n_rounds), double(b.max_depth), b.eta, b.lambda, b.gamma, b.min_child_weight,
          b.subsample};
}

struct CvResult {
  ConfusionMatrix confusion{kNumClasses};  ///< summed over all runs and folds
  std::vector<double> run_precision;       ///< weighted precision per run
  std::vector<double> run_recall;
  double mean_weighted_precision = 0.0;
  double mean_weighted_recall = 0.0;
};

/// Folds either stratified k-fold (folds >= 2) or leave-one-out (folds == 0).
struct CvOptions {
  int folds = 10;
  int runs = 5;
  bool leave_one_out = false;
};

/// Repeated stratified k-fold CV. Run r uses fold seed derive_seed(seed, {r});
/// the model for fold f of run r is seeded with derive_seed(seed, {r, f}).
inline CvResult cross_validate(const FeatureMatrix& data, const ClassifierParams& params, const CvOptions& options,
                               std::uint64_t seed) {
  if (!options.leave_one_out && data.rows < static_cast<std::size_t>(options.folds))
    throw Error(ErrorCode::TooFewSamples, std::to_string(data.rows) + " samples for " +
                                              std::to_string(options.folds) + " folds");
  if (options.runs < 1) throw Error(ErrorCode::ConfigInvalid, "runs must be >= 1");
  CvResult result;
  const int runs = options.leave_one_out ? 1 : options.runs;
  for (int r = 0; r < runs; ++r) {
    const auto folds = options.leave_one_out
                           ? leave_one_out(data.rows)
                           : stratified_kfold(data.labels, options.folds, derive_seed(seed, {std::uint64_t(r)}), false);
    ConfusionMatrix run_cm(kNumClasses);
    std::vector<char> held(data.rows);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::fill(held.begin(), held.end(), 0);
      for (std::size_t i : folds[f]) held[i] = 1;
      std::vector<std::size_t> train_idx;
      for (std::size_t i = 0; i < data.rows; ++i)
        if (!held[i]) train_idx.push_back(i);
      const auto model = train_classifier(data.subset(train_idx),
                                          with_seed(params, derive_seed(seed, {std::uint64_t(r), std::uint64_t(f)})));
      for (std::size_t i : folds[f]) run_cm.add(data.labels[i], argmax(predict_proba(model, data.row(i))));
    }
    const auto report = make_report(run_cm, "cv", "mixed");
    result.run_precision.push_back(report.weighted_precision.value_or(0.0));
    result.run_recall.push_back(report.weighted_recall.value_or(0.0));
    result.confusion += run_cm;
  }
  for (double p : result.run_precision) result.mean_weighted_precision += p / runs;
  for (double p : result.run_recall) result.mean_weighted_recall += p / runs;
  return result;
}

struct TuningResult {
  std::size_t best_index = 0;
  ClassifierParams best;
  std::vector<CvResult> per_point;
};

/// Grid search scored by mean weighted precision over repeated CV. Ties go to
/// the smaller ensemble, then to the lexicographically smaller parameters.
inline TuningResult tune_hyperparameters(const FeatureMatrix& data, const std::vector<ClassifierParams>& grid,
                                         int folds, int runs, std::uint64_t seed) {
  if (grid.empty()) throw Error(ErrorCode::ConfigInvalid, "empty hyper-parameter grid");
  if (data.rows < static_cast<std::size_t>(folds))
    throw Error(ErrorCode::TooFewSamples, std::to_string(data.rows) + " samples for " + std::to_string(folds) + " folds");
  TuningResult result;
  for (const auto& point : grid) result.per_point.push_back(cross_validate(data, point, {folds, runs, false}, seed));
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double a = result.per_point[g].mean_weighted_precision;
    const double b = result.per_point[result.best_index].mean_weighted_precision;
    if (a > b || (a == b && complexity_key(grid[g]) < complexity_key(grid[result.best_index]))) result.best_index = g;
  }
  result.best = grid[result.best_index];
  return result;
}

}  // namespace lithopatch
