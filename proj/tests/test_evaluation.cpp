#include <gtest/gtest.h>

#include <set>

#include "lithopatch/diagnostics.hpp"
#include "lithopatch/metrics.hpp"
#include "lithopatch/splits.hpp"
#include "test_support.hpp"

using namespace lithopatch;

namespace {

ConfusionMatrix random_confusion(Rng& rng, int k) {
  ConfusionMatrix cm(k);
  for (int t = 0; t < k; ++t)
    for (int p = 0; p < k; ++p)
      if (rng.bernoulli(0.7)) cm.add(t, p, rng.index(40));
  return cm;
}

struct ConstantClassifier {
  int cls = 0;
};

std::vector<double> predict_proba(const ConstantClassifier& m, std::span<const double>) {
  std::vector<double> p(kNumClasses, 0.0);
  p[m.cls] = 1.0;
  return p;
}

class QuietWarnings : public ::testing::Test {
 protected:
  void SetUp() override { prev_ = set_warning_sink([](std::string_view) {}); }
  void TearDown() override { set_warning_sink(prev_); }

 private:
  WarningSink prev_;
};

}  // namespace

TEST(Confusion, CountsPairs) {
  const std::vector<int> t{0, 0, 1, 2, 3, 3}, p{0, 1, 1, 2, 3, 0};
  const auto cm = confusion_matrix(t, p);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(3, 0), 1u);
  EXPECT_EQ(cm.total(), 6u);
  EXPECT_EQ(cm.trace(), 4u);
  EXPECT_EQ(cm.row_sum(3), 2u);
  EXPECT_EQ(cm.col_sum(0), 2u);
}

TEST(Confusion, InputErrors) {
  const std::vector<int> a{0, 1}, b{0};
  try {
    confusion_matrix(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  const std::vector<int> bad{0, 4};
  try {
    confusion_matrix(a, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(Metrics, TwoClassExample) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 5);
  cm.add(0, 1, 1);
  cm.add(1, 0, 2);
  cm.add(1, 1, 4);
  const auto m = precision_recall(cm);
  EXPECT_DOUBLE_EQ(*m.precision[0], 5.0 / 7);
  EXPECT_DOUBLE_EQ(*m.recall[0], 5.0 / 6);
  EXPECT_DOUBLE_EQ(*m.precision[1], 4.0 / 5);
  EXPECT_DOUBLE_EQ(*m.recall[1], 4.0 / 6);
  const auto r = make_report(cm, "m", "mixed");
  EXPECT_NEAR(*r.weighted_precision, (5.0 / 7 + 4.0 / 5) / 2, 1e-15);
  EXPECT_NEAR(*r.weighted_recall, 0.75, 1e-15);
  EXPECT_NEAR(r.accuracy, 0.75, 1e-15);
}

TEST_F(QuietWarnings, UndefinedMetricsAreNullAndExcluded) {
  ConfusionMatrix cm(4);
  cm.add(0, 0, 3);
  cm.add(1, 0, 2);
  cm.add(2, 2, 4);
  const auto r = make_report(cm, "m", "surface");
  EXPECT_FALSE(r.per_class.precision[1]);
  EXPECT_FALSE(r.per_class.recall[3]);
  EXPECT_FALSE(r.per_class.precision[3]);
  // Class 1 has support but is never predicted.
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NEAR(*r.weighted_precision, (3.0 / 5 * 3 + 1.0 * 4) / 7, 1e-15);
  EXPECT_NEAR(*r.weighted_recall, 7.0 / 9, 1e-15);
}

TEST_F(QuietWarnings, EmptyMatrixHasNoWeightedMetrics) {
  const auto r = make_report(ConfusionMatrix(4), "m", "mixed");
  EXPECT_FALSE(r.weighted_precision);
  EXPECT_FALSE(r.weighted_recall);
}

TEST(WeightedAverage, ExamplesAndErrors) {
  const std::vector<double> v{0.5, 1.0};
  const std::vector<std::uint64_t> s{1, 3};
  EXPECT_DOUBLE_EQ(weighted_average(std::span<const double>(v), s), 0.875);
  const std::vector<std::optional<double>> none{std::nullopt, std::nullopt};
  try {
    weighted_average(std::span<const std::optional<double>>(none), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroSupport);
  }
  const std::vector<std::uint64_t> zero{0, 0};
  EXPECT_THROW(weighted_average(std::span<const double>(v), zero), Error);
}

TEST(WeightedAverage, LiesWithinPerClassRange) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> v(4);
    std::vector<std::uint64_t> s(4);
    for (int k = 0; k < 4; ++k) {
      v[k] = rng.uniform();
      s[k] = 1 + rng.index(50);
    }
    const double w = weighted_average(std::span<const double>(v), s);
    EXPECT_GE(w, *std::min_element(v.begin(), v.end()) - 1e-15);
    EXPECT_LE(w, *std::max_element(v.begin(), v.end()) + 1e-15);
  }
}

TEST_F(QuietWarnings, WeightedRecallEqualsAccuracy) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto cm = random_confusion(rng, 2 + static_cast<int>(rng.index(5)));
    if (cm.total() == 0) continue;
    const auto r = make_report(cm, "m", "mixed");
    const auto m = precision_recall(cm);
    const double oracle = weighted_average(std::span<const std::optional<double>>(m.recall), m.support);
    EXPECT_NEAR(*r.weighted_recall, oracle, 1e-12);
    EXPECT_DOUBLE_EQ(*r.weighted_recall, static_cast<double>(cm.trace()) / static_cast<double>(cm.total()));
  }
}

TEST_F(QuietWarnings, ConstantClassifierScoresChanceRecall) {
  FeatureMatrix test;
  for (int i = 0; i < 40; ++i) test.append(std::vector<double>{static_cast<double>(i)}, i % 4);
  const auto r = evaluate_model(ConstantClassifier{2}, test, "const", "mixed");
  EXPECT_DOUBLE_EQ(*r.weighted_recall, 0.25);
  EXPECT_DOUBLE_EQ(*r.weighted_precision, 0.25);
  EXPECT_EQ(r.confusion.col_sum(2), 40u);
  EXPECT_EQ(r.warnings.size(), 3u);
}

TEST(ReportIo, JsonAndCsv) {
  ConfusionMatrix cm(4);
  for (int k = 0; k < 4; ++k) cm.add(k, k, 5);
  cm.add(1, 2);
  const auto r = make_report(cm, "boosted", "mixed", "grouped:source_image");
  const auto j = to_json(r);
  EXPECT_EQ(j["model_id"], "boosted");
  EXPECT_EQ(j["confusion_matrix"][1][2], 1);
  const auto csv = confusion_csv(cm);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(format_report_tables({r}).find("boosted"), std::string::npos);
}

TEST(KFold, OneSamplePerClassPerFold) {
  std::vector<int> labels;
  for (int k = 0; k < 4; ++k) labels.insert(labels.end(), 10, k);
  const auto folds = stratified_kfold(labels, 10, 3);
  ASSERT_EQ(folds.size(), 10u);
  for (const auto& f : folds) {
    ASSERT_EQ(f.size(), 4u);
    std::set<int> classes;
    for (auto i : f) classes.insert(labels[i]);
    EXPECT_EQ(classes.size(), 4u);
  }
}

TEST(KFold, PartitionAndPerClassBalance) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng.index(9));
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) labels.insert(labels.end(), k + rng.index(40), c);
    rng.shuffle(labels);
    const auto folds = stratified_kfold(labels, k, t);
    std::vector<int> seen(labels.size(), 0);
    std::size_t smallest = labels.size(), largest = 0;
    for (int c = 0; c < 4; ++c) {
      std::size_t lo = labels.size(), hi = 0;
      for (const auto& f : folds) {
        const auto n = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [&](auto i) { return labels[i] == c; }));
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      EXPECT_LE(hi - lo, 1u);
    }
    for (const auto& f : folds) {
      smallest = std::min(smallest, f.size());
      largest = std::max(largest, f.size());
      for (auto i : f) ++seen[i];
    }
    EXPECT_LE(largest - smallest, 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(KFold, Errors) {
  const std::vector<int> labels{0, 0, 0, 1, 1};
  try {
    stratified_kfold(labels, 3, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ClassTooSmall);
  }
  EXPECT_EQ(stratified_kfold(labels, 3, 1, false).size(), 3u);
  EXPECT_THROW(stratified_kfold(labels, 1, 1), Error);
  EXPECT_THROW(stratified_kfold(labels, 6, 1, false), Error);
}

TEST(LeaveOneOut, SingletonFolds) {
  const auto folds = leave_one_out(5);
  ASSERT_EQ(folds.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(folds[i], Fold{i});
  EXPECT_THROW(leave_one_out(1), Error);
}

TEST(GroupSplit, TenGroupsSplitEightOneOne) {
  std::vector<SplitItem> items;
  for (int g = 0; g < 10; ++g)
    for (int i = 0; i < 3; ++i) items.push_back({"g" + std::to_string(g), 0});
  const auto s = group_split(items, {{0.8, 0.1, 0.1}, true, true}, 5);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_EQ(s.val.size(), 3u);
  EXPECT_EQ(s.test.size(), 3u);
}

TEST(GroupSplit, GroupsNeverStraddleParts) {
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    std::vector<SplitItem> items;
    const int groups = 5 + static_cast<int>(rng.index(30));
    for (int g = 0; g < groups; ++g) {
      const int label = static_cast<int>(rng.index(4));
      const int n = 1 + static_cast<int>(rng.index(6));
      for (int i = 0; i < n; ++i) items.push_back({"src" + std::to_string(g), label});
    }
    const auto s = group_split(items, {}, t);
    std::map<std::string, std::set<int>> where;
    std::vector<int> count(items.size(), 0);
    for (int p = 0; p < 3; ++p)
      for (auto i : (p == 0 ? s.train : p == 1 ? s.val : s.test)) {
        where[items[i].group].insert(p);
        ++count[i];
      }
    for (const auto& [g, parts] : where) EXPECT_EQ(parts.size(), 1u) << g;
    for (int c : count) EXPECT_EQ(c, 1);
    EXPECT_EQ(group_split(items, {}, t).train, s.train);
  }
}

TEST(GroupSplit, ZeroFractionPartStaysEmpty) {
  std::vector<SplitItem> items;
  for (int i = 0; i < 12; ++i) items.push_back({std::to_string(i), i % 2});
  const auto s = group_split(items, {{0.0, 0.0, 1.0}, true, true}, 1);
  EXPECT_TRUE(s.train.empty());
  EXPECT_TRUE(s.val.empty());
  EXPECT_EQ(s.test.size(), 12u);
}

TEST(GroupSplit, BadFractions) {
  const std::vector<SplitItem> items{{"a", 0}};
  for (const auto& f : {std::array<double, 3>{0.5, 0.5, 0.5}, std::array<double, 3>{1.2, -0.1, -0.1}}) {
    try {
      group_split(items, {f, true, true}, 1);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadFractions);
    }
  }
}
