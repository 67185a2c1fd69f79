#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lithopatch/diagnostics.hpp"
#include "lithopatch/error.hpp"
#include "lithopatch/labels.hpp"

namespace lithopatch {

/// counts(t, p): rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = kNumClasses)
      : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const noexcept { return k_; }
  std::uint64_t at(int t, int p) const { return counts_[static_cast<std::size_t>(t) * k_ + p]; }
  void add(int t, int p, std::uint64_t n = 1) { counts_[static_cast<std::size_t>(t) * k_ + p] += n; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (int k = 0; k < k_; ++k) s += at(k, k);
    return s;
  }
  std::uint64_t row_sum(int t) const {
    std::uint64_t s = 0;
    for (int p = 0; p < k_; ++p) s += at(t, p);
    return s;
  }
  std::uint64_t col_sum(int p) const {
    std::uint64_t s = 0;
    for (int t = 0; t < k_; ++t) s += at(t, p);
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw Error(ErrorCode::LengthMismatch, "confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                        int num_classes = kNumClasses) {
  if (y_true.size() != y_pred.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(y_true.size()) + " labels vs " +
                                               std::to_string(y_pred.size()) + " predictions");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] >= num_classes || y_pred[i] < 0 || y_pred[i] >= num_classes)
      throw Error(ErrorCode::LabelOutOfRange, "index " + std::to_string(i));
    cm.add(y_true[i], y_pred[i]);
  }
  return cm;
}

/// Per-class precision and recall; 0/0 is reported as std::nullopt.
struct ClassMetrics {
  std::vector<std::optional<double>> precision;
  std::vector<std::optional<double>> recall;
  std::vector<std::uint64_t> support;  // true instances per class
};

inline ClassMetrics precision_recall(const ConfusionMatrix& cm) {
  ClassMetrics m;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const auto tp = static_cast<double>(cm.at(k, k));
    const auto predicted = cm.col_sum(k);
    const auto actual = cm.row_sum(k);
    m.precision.push_back(predicted ? std::optional(tp / static_cast<double>(predicted)) : std::nullopt);
    m.recall.push_back(actual ? std::optional(tp / static_cast<double>(actual)) : std::nullopt);
    m.support.push_back(actual);
  }
  return m;
}

/// Support-weighted mean over classes whose metric is defined.
inline double weighted_average(std::span<const std::optional<double>> values, std::span<const std::uint64_t> supports) {
  if (values.size() != supports.size()) throw Error(ErrorCode::LengthMismatch, "values and supports differ in length");
  double num = 0.0;
  std::uint64_t den = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!values[k]) continue;
    num += *values[k] * static_cast<double>(supports[k]);
    den += supports[k];
  }
  if (den == 0) throw Error(ErrorCode::ZeroSupport, "no class with a defined metric has support");
  return num / static_cast<double>(den);
}

inline double weighted_average(std::span<const double> values, std::span<const std::uint64_t> supports) {
  std::vector<std::optional<double>> v(values.begin(), values.end());
  return weighted_average(std::span<const std::optional<double>>(v), supports);
}

struct EvaluationReport {
  std::string model_id;
  std::string view_tag;    // surface | section | mixed
  std::string split_mode;  // e.g. "grouped:source_image", "kfold:10x5"
  ConfusionMatrix confusion{kNumClasses};
  ClassMetrics per_class;
  std::optional<double> weighted_precision;
  std::optional<double> weighted_recall;  // equals accuracy by construction
  double accuracy = 0.0;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::vector<std::string> warnings;
};

/// confusion -> per-class P/R -> weighted averages.
inline EvaluationReport make_report(const ConfusionMatrix& cm, std::string model_id, std::string view_tag,
                                    std::string split_mode = {}) {
  EvaluationReport r;
  r.model_id = std::move(model_id);
  r.view_tag = std::move(view_tag);
  r.split_mode = std::move(split_mode);
  r.confusion = cm;
  r.per_class = precision_recall(cm);
  const std::uint64_t n = cm.total();
  r.accuracy = n ? static_cast<double>(cm.trace()) / static_cast<double>(n) : 0.0;

  for (int k = 0; k < cm.num_classes(); ++k) {
    if (r.per_class.support[k] > 0 && !r.per_class.precision[k])
      r.warnings.push_back("precision undefined for class " + std::string(class_name(k)) +
                           " (never predicted); excluded from the weighted average");
  }
  try {
    r.weighted_precision = weighted_average(r.per_class.precision, r.per_class.support);
  } catch (const Error& e) {
    r.warnings.push_back(std::string("weighted precision unavailable: ") + e.what());
  }
  // support-weighted recall reduces to trace / total; use the exact form
  if (n > 0) r.weighted_recall = r.accuracy;
  for (const auto& w : r.warnings) warn(w);
  return r;
}

inline EvaluationReport evaluate_predictions(std::span<const int> y_true, std::span<const int> y_pred,
                                             std::string model_id, std::string view_tag, std::string split_mode = {},
                                             int num_classes = kNumClasses) {
  return make_report(confusion_matrix(y_true, y_pred, num_classes), std::move(model_id), std::move(view_tag),
                     std::move(split_mode));
}

/// Evaluates any model exposing predict_proba(model, row).
template <typename Model, typename Rows>
EvaluationReport evaluate_model(const Model& model, const Rows& test, std::string model_id, std::string view_tag,
                                std::string split_mode = {}, int num_classes = kNumClasses) {
  std::vector<int> pred(test.rows);
  for (std::size_t i = 0; i < test.rows; ++i) {
    const auto p = predict_proba(model, test.row(i));
    int best = 0;
    for (int k = 1; k < static_cast<int>(p.size()); ++k)
      if (p[k] > p[best]) best = k;
    pred[i] = best;
  }
  return evaluate_predictions(test.labels, pred, std::move(model_id), std::move(view_tag), std::move(split_mode),
                              num_classes);
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < cm.num_classes(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int p = 0; p < cm.num_classes(); ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json per_class = nlohmann::json::array();
  for (int k = 0; k < r.confusion.num_classes(); ++k)
    per_class.push_back({{"class", k < kNumClasses ? std::string(class_name(k)) : std::to_string(k)},
                         {"precision", opt(r.per_class.precision[k])},
                         {"recall", opt(r.per_class.recall[k])},
                         {"support", r.per_class.support[k]}});
  nlohmann::json seeds = nlohmann::json::object();
  for (const auto& [name, value] : r.seeds) seeds[name] = value;
  return {{"model_id", r.model_id},
          {"view", r.view_tag},
          {"split_mode", r.split_mode},
          {"confusion_matrix", to_json(r.confusion)},
          {"per_class", per_class},
          {"weighted_precision", opt(r.weighted_precision)},
          {"weighted_recall", opt(r.weighted_recall)},
          {"accuracy", r.accuracy},
          {"weighted_recall_equals_accuracy", true},
          {"samples", r.confusion.total()},
          {"seeds", seeds},
          {"warnings", r.warnings}};
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\predicted";
  for (int p = 0; p < cm.num_classes(); ++p) os << ',' << class_name(p);
  os << '\n';
  for (int t = 0; t < cm.num_classes(); ++t) {
    os << class_name(t);
    for (int p = 0; p < cm.num_classes(); ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

namespace detail {
inline std::string metric_cell(const std::optional<double>& v) {
  std::ostringstream os;
  if (v)
    os << std::fixed << std::setprecision(2) << *v;
  else
    os << "n/a";
  return os.str();
}
}  // namespace detail

/// Two aligned tables: weighted P/R per classifier and view, then per-class P/R
/// per classifier (taken from the mixed report when present).
inline std::string format_report_tables(const std::vector<EvaluationReport>& reports) {
  std::vector<std::string> models;
  for (const auto& r : reports)
    if (std::find(models.begin(), models.end(), r.model_id) == models.end()) models.push_back(r.model_id);
  auto find = [&](const std::string& model, const std::string& view) -> const EvaluationReport* {
    for (const auto& r : reports)
      if (r.model_id == model && r.view_tag == view) return &r;
    return nullptr;
  };

  std::ostringstream os;
  const int w = 14, c = 10;
  os << "Weighted average metrics\n";
  os << std::left << std::setw(w) << "Classifier";
  for (const char* v : {"Surface", "Section", "Mixed"}) os << std::setw(c) << (std::string(v) + " P") << std::setw(c) << "R";
  os << '\n';
  for (const auto& m : models) {
    os << std::setw(w) << m;
    for (const char* v : {"surface", "section", "mixed"}) {
      const auto* r = find(m, v);
      os << std::setw(c) << detail::metric_cell(r ? r->weighted_precision : std::nullopt) << std::setw(c)
         << detail::metric_cell(r ? r->weighted_recall : std::nullopt);
    }
    os << '\n';
  }
  os << "\nPer-class metrics\n" << std::setw(w) << "Classifier";
  for (auto name : kClassNames) os << std::setw(c) << (std::string(name) + " P") << std::setw(c) << "R";
  os << '\n';
  for (const auto& m : models) {
    const EvaluationReport* r = find(m, "mixed");
    if (!r)
      for (const auto& cand : reports)
        if (cand.model_id == m) {
          r = &cand;
          break;
        }
    os << std::setw(w) << m;
    for (int k = 0; k < kNumClasses; ++k)
      os << std::setw(c) << detail::metric_cell(r->per_class.precision[k]) << std::setw(c)
         << detail::metric_cell(r->per_class.recall[k]);
    os << '\n';
  }
  return os.str();
}

}  // namespace lithopatch
