#include <gtest/gtest.h>

#include "lithopatch/mlp_head.hpp"
#include "test_support.hpp"

using namespace lithopatch;

namespace {

Eigen::MatrixXd random_batch(Rng& rng, int n, int d) {
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}

std::vector<int> random_labels(Rng& rng, int n) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.index(kNumClasses));
  return y;
}

MlpHeadModel randomized_head(int d, std::uint64_t seed) {
  auto m = init_head(d, seed);
  Rng rng(seed + 100);
  for (Eigen::Index i = 0; i < kHidden1; ++i) {
    m.bn_gamma(i) = rng.uniform(0.5, 1.5);
    m.bn_beta(i) = rng.uniform(-0.3, 0.3);
    m.b1(i) = rng.uniform(-0.1, 0.1);
  }
  for (Eigen::Index i = 0; i < m.b2.size(); ++i) m.b2(i) = rng.uniform(-0.1, 0.1);
  for (Eigen::Index i = 0; i < m.b3.size(); ++i) m.b3(i) = rng.uniform(-0.1, 0.1);
  return m;
}

bool same_trainables(const MlpHeadModel& a, const MlpHeadModel& b) {
  return a.W1 == b.W1 && a.b1 == b.b1 && a.bn_gamma == b.bn_gamma && a.bn_beta == b.bn_beta && a.W2 == b.W2 &&
         a.b2 == b.b2 && a.W3 == b.W3 && a.b3 == b.b3;
}

FeatureMatrix one_hot_points() {
  FeatureMatrix m;
  for (int k = 0; k < kNumClasses; ++k) {
    std::vector<double> x(kNumClasses, 0.0);
    x[k] = 1.0;
    m.append(x, k);
  }
  return m;
}

}  // namespace

TEST(MlpForward, ZeroParametersGiveUniform) {
  auto m = init_head(5, 1);
  m.W1.setZero();
  m.W2.setZero();
  m.W3.setZero();
  Rng rng(2);
  const auto c = forward_batch(m, random_batch(rng, 3, 5), Mode::training);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(c.P(i, k), 0.25);
  for (double p : forward(m, std::vector<double>{1, 2, 3, 4, 5})) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(MlpForward, SoftmaxRowsSumToOneAndAreShiftInvariant) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto m = randomized_head(7, t);
    const auto c = forward_batch(m, random_batch(rng, 6, 7), Mode::training);
    for (Eigen::Index i = 0; i < c.P.rows(); ++i) {
      EXPECT_NEAR(c.P.row(i).sum(), 1.0, 1e-9);
      EXPECT_GT(c.P.row(i).minCoeff(), 0.0);
      EXPECT_LT(c.P.row(i).maxCoeff(), 1.0);
    }
    const Eigen::MatrixXd shifted = (c.logits.array() + 37.5).matrix();
    EXPECT_LT((softmax_rows(shifted) - c.P).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MlpForward, BatchNormNormalizesTrainingBatch) {
  Rng rng(4);
  const auto m = randomized_head(6, 5);
  const auto c = forward_batch(m, random_batch(rng, 64, 6), Mode::training);
  for (Eigen::Index j = 0; j < kHidden1; ++j) {
    const double mean = c.BN.col(j).mean();
    const double var = (c.BN.col(j).array() - mean).square().mean();
    // Batch variance s2 of the pre-normalization column shrinks the output by s2 / (s2 + eps).
    const double s2 = (c.Z1.col(j).array() - c.Z1.col(j).mean()).square().mean();
    const double g2 = m.bn_gamma(j) * m.bn_gamma(j);
    EXPECT_NEAR(mean, m.bn_beta(j), 1e-6);
    EXPECT_NEAR(var, g2 * s2 / (s2 + m.bn_eps), 1e-9);
    EXPECT_NEAR(var, g2, g2 * m.bn_eps / s2);
  }
}

TEST(MlpForward, InferenceUsesRunningStatistics) {
  auto m = randomized_head(4, 6);
  Rng rng(7);
  const Eigen::MatrixXd X = random_batch(rng, 3, 4);
  const auto before = forward_batch(m, X, Mode::inference);
  m.running_mean.setConstant(0.5);
  const auto after = forward_batch(m, X, Mode::inference);
  EXPECT_GT((before.P - after.P).cwiseAbs().maxCoeff(), 0.0);
  // Row 0 alone gives the same answer as inside the batch.
  const auto single = forward(m, std::vector<double>{X(0, 0), X(0, 1), X(0, 2), X(0, 3)});
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(single[k], after.P(0, k), 1e-15);
}

TEST(MlpForward, DimensionMismatch) {
  const auto m = init_head(4, 1);
  try {
    forward(m, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(MlpGradient, SmallModelPassesCheck) {
  Rng rng(8);
  for (int t = 0; t < 5; ++t) {
    const auto m = randomized_head(6, 10 + t);
    const auto X = random_batch(rng, 4, 6);
    const auto y = random_labels(rng, 4);
    if (relu_margin(forward_batch(m, X, Mode::training), true) < 1e-3) continue;
    const auto r = gradient_check(m, X, y);
    EXPECT_LE(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
  }
}

TEST(MlpGradient, WithoutSecondRelu) {
  Rng rng(9);
  auto m = randomized_head(5, 21);
  m.relu_after_fc2 = false;
  const auto X = random_batch(rng, 5, 5);
  const auto y = random_labels(rng, 5);
  ASSERT_GE(relu_margin(forward_batch(m, X, Mode::training), false), 1e-4);
  EXPECT_LE(gradient_check(m, X, y).max_relative_error, 1e-4);
}

TEST(MlpGradient, OutputBiasGradientIsMeanResidual) {
  Rng rng(10);
  const auto m = randomized_head(3, 30);
  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4, 3);
  const std::vector<int> y{0, 1, 2, 3};
  const auto c = forward_batch(m, X, Mode::training);
  const auto g = backward(m, c, y);
  for (int k = 0; k < 4; ++k) {
    double expected = 0;
    for (int i = 0; i < 4; ++i) expected += (c.P(i, k) - (y[i] == k)) / 4.0;
    EXPECT_NEAR(g.b3(k), expected, 1e-15);
  }
  EXPECT_LE(gradient_check(m, X, y).max_relative_error, 1e-4);
}

TEST(MlpGradient, DuplicatedRowsGiveSameGradients) {
  Rng rng(11);
  const auto m = randomized_head(4, 40);
  const auto X = random_batch(rng, 3, 4);
  const auto y = random_labels(rng, 3);
  Eigen::MatrixXd X2(6, 4);
  X2 << X, X;
  std::vector<int> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const auto g1 = backward(m, forward_batch(m, X, Mode::training), y);
  const auto g2 = backward(m, forward_batch(m, X2, Mode::training), y2);
  const auto a = parameter_views(g1);
  const auto b = parameter_views(g2);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (Eigen::Index i = 0; i < a[t].size; ++i) EXPECT_NEAR(a[t].data[i], b[t].data[i], 1e-12) << a[t].name;
}

TEST(MlpGradient, RejectsSingleRowBatch) {
  const auto m = init_head(3, 1);
  EXPECT_THROW(gradient_check(m, Eigen::MatrixXd::Ones(1, 3), std::vector<int>{0}), Error);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto m = randomized_head(4, 50);
  const auto before = m;
  auto state = make_adam_state(m);
  TrainConfig c;
  c.learning_rate = 0.1;
  adam_step(m, zero_gradients(m), state, c);
  EXPECT_TRUE(same_trainables(m, before));
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate) {
  auto m = randomized_head(3, 51);
  const auto before = m;
  auto g = zero_gradients(m);
  g.b3 << 0.5, -2.0, 1e-3, 0.0;
  auto state = make_adam_state(m);
  TrainConfig c;
  c.learning_rate = 0.01;
  adam_step(m, g, state, c);
  // Bias-corrected first step: lr * g / (|g| + eps).
  for (int k = 0; k < 4; ++k) {
    const double expected = g.b3(k) == 0.0 ? 0.0 : 0.01 * g.b3(k) / (std::abs(g.b3(k)) + 1e-8);
    EXPECT_NEAR(before.b3(k) - m.b3(k), expected, 1e-15);
  }
}

TEST(TrainHead, SeparableFourPointsReachFullAccuracy) {
  const auto data = one_hot_points();
  TrainConfig c;
  c.learning_rate = 0.01;
  c.patience = 50;
  c.max_epochs = 500;
  c.seed = 3;
  const auto r = train_head(data, data, c);
  EXPECT_EQ(evaluate_loss(r.model, data).second, 1.0);
}

TEST(TrainHead, ZeroLearningRateKeepsParameters) {
  const auto data = one_hot_points();
  TrainConfig c;
  c.learning_rate = 0.0;
  c.max_epochs = 7;
  c.patience = 100;
  c.seed = 4;
  const auto r = train_head(data, data, c);
  EXPECT_TRUE(same_trainables(r.model, init_head(4, derive_seed(4, {1}))));
  EXPECT_EQ(r.log.epochs.size(), 7u);
}

TEST(TrainHead, EqualSeedsAreBitIdentical) {
  Rng rng(12);
  FeatureMatrix train, val;
  for (int i = 0; i < 150; ++i) {
    const int k = static_cast<int>(rng.index(4));
    std::vector<double> x(8);
    for (int j = 0; j < 8; ++j) x[j] = rng.normal() + (j == k ? 2.0 : 0.0);
    (i < 110 ? train : val).append(x, k);
  }
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.max_epochs = 15;
  c.seed = 9;
  const auto a = train_head(train, val, c), b = train_head(train, val, c);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  EXPECT_EQ(to_json(a.log), to_json(b.log));
  c.seed = 10;
  EXPECT_FALSE(same_parameters(train_head(train, val, c).model, a.model));

  // Early stopping returns the best-validation snapshot.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : a.log.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(a.log.best_val_loss, best);
  EXPECT_EQ(evaluate_loss(a.model, val).first, best);
}

TEST(TrainHead, EarlyStoppingHonoursPatience) {
  const auto data = one_hot_points();
  FeatureMatrix wrong = data;
  for (int& l : wrong.labels) l = (l + 1) % 4;
  TrainConfig c;
  c.learning_rate = 0.05;
  c.patience = 3;
  c.max_epochs = 300;
  const auto r = train_head(data, wrong, c);
  EXPECT_TRUE(r.log.stopped_early);
  EXPECT_EQ(static_cast<int>(r.log.epochs.size()), r.log.best_epoch + 3);
}

TEST(TrainHead, Errors) {
  const auto data = one_hot_points();
  TrainConfig c;
  try {
    train_head(data, FeatureMatrix{}, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
  c.learning_rate = -1;
  EXPECT_THROW(train_head(data, data, c), Error);
  c.learning_rate = 1e300;
  c.max_epochs = 50;
  FeatureMatrix big = data;
  for (double& v : big.data) v *= 1e200;
  try {
    train_head(big, big, c);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
  }
}

TEST(TrainHead, BackboneLearningRates) {
  EXPECT_EQ(backbone_learning_rate("alexnet"), 1e-4);
  EXPECT_EQ(backbone_learning_rate("vgg16"), 5e-5);
  EXPECT_EQ(backbone_learning_rate("vgg19"), 5e-5);
  EXPECT_EQ(backbone_learning_rate("inception_v3"), 6e-4);
  EXPECT_FALSE(backbone_learning_rate("resnet"));
}

TEST(MlpCheckpoint, JsonRoundTripIsExact) {
  auto m = randomized_head(9, 60);
  m.running_mean.setConstant(0.125);
  const auto back = mlp_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_TRUE(same_parameters(back, m));
  EXPECT_EQ(back.momentum, m.momentum);
  EXPECT_EQ(back.bn_eps, m.bn_eps);
}
