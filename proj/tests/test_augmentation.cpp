#include <gtest/gtest.h>

#include "lithopatch/augmentation.hpp"
#include "test_support.hpp"

using namespace lithopatch;

namespace {

PatchDataset small_dataset(std::size_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  PatchDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    PatchRecord r;
    r.id = "p" + std::to_string(i);
    r.patch = lptest::random_image8(rng, size, size, 3);
    r.label = static_cast<StoneClass>(i % kNumClasses);
    r.view = i % 2 ? View::section : View::surface;
    r.source_image_id = "img" + std::to_string(i / 3);
    r.origin = GridOrigin{static_cast<int>(i), 0};
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace

TEST(Flip, TwoByOneHorizontal) {
  const Image p(2, 1, 1, std::vector<double>{0.25, 0.75});
  const auto f = flip(p, FlipAxis::horizontal);
  EXPECT_EQ(f.at(0, 0), 0.75);
  EXPECT_EQ(f.at(1, 0), 0.25);
}

TEST(Flip, InvolutionAndSymmetricPatch) {
  Rng rng(1);
  const auto p = lptest::random_image(rng, 9, 7, 3);
  for (auto axis : {FlipAxis::horizontal, FlipAxis::vertical}) EXPECT_EQ(flip(flip(p, axis), axis), p);
  const Image sym(6, 6, 3, 0.3);
  EXPECT_EQ(flip(sym, FlipAxis::vertical), sym);
}

TEST(Flip, WarpWithFlipDescriptorMatchesFlip) {
  Rng rng(2);
  const auto p = lptest::random_image(rng, 8, 8, 3);
  for (auto axis : {FlipAxis::horizontal, FlipAxis::vertical})
    EXPECT_EQ(warp(p, TransformDescriptor::flip(axis)), flip(p, axis));
}

TEST(Warp, IdentityIsExact) {
  Rng rng(3);
  const auto p = lptest::random_image(rng, 12, 12, 3);
  EXPECT_EQ(warp(p, TransformDescriptor::affine({1, 0, 0, 0, 1, 0})), p);
  const auto p8 = lptest::random_image8(rng, 12, 12, 3);
  EXPECT_EQ(warp(p8, TransformDescriptor::affine({1, 0, 0, 0, 1, 0})), p8);
}

TEST(Warp, TranslationByOne) {
  const Image p(2, 2, 1, std::vector<double>{1, 2, 3, 4});
  const auto t = warp(p, TransformDescriptor::affine({1, 0, 1, 0, 1, 0}), 0.0);
  const std::vector<double> expected{0, 1, 0, 3};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(t.data()[i], expected[i]);
}

TEST(Warp, FourQuarterTurnsRestorePatch) {
  Rng rng(4);
  const auto p = lptest::random_image(rng, 16, 16, 3);
  const auto r = rotation_about_center(90.0, 16);
  Image q = p;
  for (int i = 0; i < 4; ++i) q = warp(q, r);
  for (std::size_t i = 0; i < p.data().size(); ++i) EXPECT_NEAR(q.data()[i], p.data()[i], 1e-6);
}

TEST(Warp, SingularTransformRejected) {
  const Image p(4, 4, 1, 0.5);
  try {
    warp(p, TransformDescriptor::affine({1, 2, 0, 2, 4, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularTransform);
  }
  EXPECT_THROW(warp(p, TransformDescriptor::perspective({1, 0, 0, 0, 1, 0, 0, 0, 0})), Error);
}

TEST(Warp, HomographyMapsCorners) {
  const std::array<std::array<double, 2>, 4> from{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}};
  const std::array<std::array<double, 2>, 4> to{{{1, 0.5}, {9, 1}, {10.5, 9}, {0, 10}}};
  const Mat3 h = homography_from_points(from, to);
  for (int i = 0; i < 4; ++i) {
    const double x = from[i][0], y = from[i][1];
    const double w = h[6] * x + h[7] * y + h[8];
    EXPECT_NEAR((h[0] * x + h[1] * y + h[2]) / w, to[i][0], 1e-9);
    EXPECT_NEAR((h[3] * x + h[4] * y + h[5]) / w, to[i][1], 1e-9);
  }
}

TEST(Transform, JsonRoundTrip) {
  Rng rng(5);
  const AugmentConfig cfg;
  for (int i = 0; i < 50; ++i) {
    const auto t = random_transform(rng, 64, cfg);
    EXPECT_EQ(transform_from_json(nlohmann::json::parse(to_json(t).dump())), t);
  }
}

TEST(AugmentConfig, JsonRoundTrip) {
  AugmentConfig c;
  c.rotation_min_deg = -3;
  c.perspective_probability = 0.25;
  c.fill = 0.5;
  EXPECT_EQ(augment_config_from_json(to_json(c)), c);
}

TEST(AugmentDataset, CountIsExactMultiple) {
  const auto ds = small_dataset(10, 8, 6);
  const auto out = augment_dataset(ds, 3, 42);
  ASSERT_EQ(out.records.size(), 30u);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& parent = ds.records[i / 3];
    const auto& r = out.records[i];
    EXPECT_EQ(r.label, parent.label);
    EXPECT_EQ(r.view, parent.view);
    EXPECT_EQ(r.source_image_id, parent.source_image_id);
    if (i % 3 == 0) {
      EXPECT_EQ(r, parent);
      ++identical;
    } else {
      const auto& o = std::get<AugmentedOrigin>(r.origin);
      EXPECT_EQ(o.parent_id, parent.id);
      EXPECT_EQ(o.copy_index, static_cast<int>(i % 3));
      EXPECT_EQ(r.patch, warp(parent.patch, o.transform));
    }
  }
  EXPECT_EQ(identical, 10u);
}

TEST(AugmentDataset, FactorOneIsIdentityOnRecords) {
  const auto ds = small_dataset(5, 8, 7);
  EXPECT_EQ(augment_dataset(ds, 1, 3).records, ds.records);
  EXPECT_THROW(augment_dataset(ds, 0, 3), Error);
}

TEST(AugmentDataset, SeededDeterminism) {
  const auto ds = small_dataset(6, 16, 8);
  const auto a = augment_dataset(ds, 4, 9), b = augment_dataset(ds, 4, 9), c = augment_dataset(ds, 4, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.records, c.records);
}

TEST(AugmentDataset, CopiesDependOnlyOnRecordCopyAndSeed) {
  const auto ds = small_dataset(6, 16, 8);
  const auto full = augment_dataset(ds, 4, 9);
  for (std::size_t r = 0; r < ds.records.size(); ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(augment_record(ds.records[r], r, c, 9, {}), full.records[r * 4 + c]);
}

TEST(RandomTransform, StaysInvertible) {
  Rng rng(10);
  AugmentConfig cfg;
  cfg.perspective_probability = 1.0;
  for (int i = 0; i < 500; ++i) EXPECT_NO_THROW(validate(random_transform(rng, 256, cfg)));
}
