#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dscene/error.hpp"
#include "dscene/lift_splat.hpp"
#include "test_support.hpp"

namespace dscene {
namespace {

CameraView small_camera() {
  CameraView v;
  v.intrinsics = {8.0, 8.0, 4.0, 3.0, 8, 6};
  v.extrinsics = gen_rig(1, {8.0, 8.0, 8, 6, 1.6})[0].extrinsics;
  return v;
}

ImageFeatureMap random_fmap(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t f, int bins) {
  ImageFeatureMap m;
  m.features = HwcArray(h, w, f);
  m.depth_dist = HwcArray(h, w, static_cast<std::size_t>(bins));
  m.features.data = testing::uniform_vec(rng, m.features.size(), 0.0, 1.0);
  m.depth_dist.data = testing::uniform_vec(rng, m.depth_dist.size(), 0.0, 1.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double s = 0;
      for (int k = 0; k < bins; ++k) s += m.depth_dist.at(i, j, k);
      for (int k = 0; k < bins; ++k) m.depth_dist.at(i, j, k) /= s;
    }
  return m;
}

TEST(Lift, OneHotDepthPlacesEachPixelOnce) {
  const DepthBinning bins{1.0, 11.0, 10};
  const auto cam = small_camera();
  ImageFeatureMap m;
  m.features = HwcArray(6, 8, 2, 1.0);
  m.depth_dist = HwcArray(6, 8, 10);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j) m.depth_dist.at(i, j, 3) = 1.0;
  const auto fr = lift(m, cam, bins);
  ASSERT_EQ(fr.size(), 6u * 8u * 10u);
  for (std::size_t px = 0; px < 48; ++px) {
    std::size_t nonzero = 0;
    for (std::size_t k = 0; k < 10; ++k) {
      const std::size_t n = px * 10 + k;
      if (fr.features[n * 2] != 0.0) {
        ++nonzero;
        EXPECT_EQ(k, 3u);
        // Camera depth of the point equals the bin center 4.5.
        EXPECT_NEAR(cam.extrinsics.apply(fr.points[n]).z(), 4.5, 1e-12);
      }
    }
    EXPECT_EQ(nonzero, 1u);
  }
}

TEST(Lift, BackProjectsPixelCenters) {
  const DepthBinning bins{1.0, 3.0, 2};
  const auto cam = small_camera();
  std::mt19937_64 rng(1);
  const auto fr = lift(random_fmap(rng, 6, 8, 1, 2), cam, bins);
  // Pixel (row 2, col 5), bin 1 (center 2.5).
  const auto p = project_point(cam, fr.points[(2 * 8 + 5) * 2 + 1]);
  EXPECT_NEAR(p.u, 5.5, 1e-9);
  EXPECT_NEAR(p.v, 2.5, 1e-9);
  EXPECT_NEAR(p.depth, 2.5, 1e-12);
}

TEST(Lift, UniformDepthSplitsFeature) {
  const DepthBinning bins{1.0, 5.0, 4};
  ImageFeatureMap m;
  m.features = HwcArray(6, 8, 1, 2.0);
  m.depth_dist = HwcArray(6, 8, 4, 0.25);
  for (double f : lift(m, small_camera(), bins).features) EXPECT_EQ(f, 0.5);
}

TEST(Lift, ZeroFeatures) {
  std::mt19937_64 rng(2);
  auto m = random_fmap(rng, 6, 8, 3, 5);
  std::fill(m.features.data.begin(), m.features.data.end(), 0.0);
  for (double f : lift(m, small_camera(), {1.0, 6.0, 5}).features) EXPECT_EQ(f, 0.0);
}

TEST(Lift, RenormalizationInvariance) {
  std::mt19937_64 rng(3);
  const DepthBinning bins{1.0, 6.0, 5};
  const auto m = random_fmap(rng, 6, 8, 2, 5);
  auto scaled = m;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const double c = 0.1 + 3.0 * static_cast<double>(i + j);
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += (scaled.depth_dist.at(i, j, k) *= c);
      for (std::size_t k = 0; k < 5; ++k) scaled.depth_dist.at(i, j, k) /= s;
    }
  const auto a = lift(m, small_camera(), bins);
  const auto b = lift(scaled, small_camera(), bins);
  for (std::size_t n = 0; n < a.features.size(); ++n) EXPECT_NEAR(a.features[n], b.features[n], 1e-9);
}

TEST(Lift, Validation) {
  std::mt19937_64 rng(4);
  auto m = random_fmap(rng, 6, 8, 2, 5);
  m.depth_dist.at(0, 0, 0) += 0.1;
  EXPECT_THROW(lift(m, small_camera(), {1.0, 6.0, 5}), ValidationError);
  EXPECT_THROW(lift(random_fmap(rng, 6, 8, 2, 4), small_camera(), {1.0, 6.0, 5}), ShapeError);
  EXPECT_THROW(DepthBinning({0.0, 6.0, 5}).validate(), ValidationError);
}

TEST(Splat, TwoPointsSameCell) {
  Frustum fr;
  fr.feature_dim = 1;
  fr.points = {Vec3(0.1, 0.1, 0.0), Vec3(0.2, 0.3, 1.0)};
  fr.features = {1.0, 2.0};
  const BevGridSpec spec;
  const auto bev = splat(fr, spec);
  EXPECT_EQ(bev.at(128, 128, 0), 3.0);
  EXPECT_EQ(bev.c, 1u);
}

TEST(Splat, OutOfVolumeDropped) {
  Frustum fr;
  fr.feature_dim = 2;
  fr.points = {Vec3(100, 0, 0), Vec3(0, 0, 10), Vec3(0, 0, -3.5)};
  fr.features = {1, 1, 2, 2, 3, 3};
  const auto bev = splat(fr, BevGridSpec{});
  for (double v : bev.data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(in_volume_feature_sum(fr, BevGridSpec{}), 0.0);
}

TEST(Splat, SinglePointConserved) {
  Frustum fr;
  fr.feature_dim = 1;
  fr.points = {Vec3(-7.3, 22.9, 1.0)};
  fr.features = {0.3125};
  double s = 0;
  for (double v : splat(fr, BevGridSpec{}).data) s += v;
  EXPECT_EQ(s, 0.3125);
}

TEST(Splat, ConservationAndLinearity) {
  std::mt19937_64 rng(5);
  BevGridSpec spec;
  spec.x_min = spec.y_min = -12.8;
  spec.x_max = spec.y_max = 12.8;
  const auto cam = small_camera();
  const DepthBinning bins{1.0, 30.0, 29};
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_fmap(rng, 6, 8, 3, 29);
    const auto fr = lift(m, cam, bins);
    const auto bev = splat(fr, spec);
    double s = 0;
    for (double v : bev.data) s += v;
    const double ref = in_volume_feature_sum(fr, spec);
    EXPECT_GT(ref, 0.0);
    EXPECT_LE(std::abs(s - ref), 1e-9 * std::abs(ref));
    auto scaled = m;
    for (auto& f : scaled.features.data) f *= 4.0;
    const auto bev4 = splat(lift(scaled, cam, bins), spec);
    for (std::size_t i = 0; i < bev.size(); ++i) EXPECT_EQ(bev4.data[i], 4.0 * bev.data[i]);
  }
}

TEST(Concat, ShapesAndBlocks) {
  std::mt19937_64 rng(6);
  HwcArray a(32, 32, 3), b(32, 32, 4);
  a.data = testing::uniform_vec(rng, a.size());
  b.data = testing::uniform_vec(rng, b.size());
  const auto c = concat_bev_conditions(a, b);
  EXPECT_EQ(c.c, 7u);
  double sa = 0, sb = 0, ca = 0, cb = 0;
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      for (std::size_t k = 0; k < 3; ++k) sa += a.at(i, j, k), ca += c.at(i, j, k);
      for (std::size_t k = 0; k < 4; ++k) sb += b.at(i, j, k), cb += c.at(i, j, 3 + k);
    }
  EXPECT_EQ(sa, ca);
  EXPECT_EQ(sb, cb);
  const auto z = concat_bev_conditions(HwcArray(32, 32, 3), b);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(z.at(i, i, k), 0.0);
  EXPECT_THROW(concat_bev_conditions(a, HwcArray(16, 32, 4)), ShapeError);
}

TEST(Concat, WithLayoutLatent) {
  LayoutLatent l{2, 4, 2, 2, std::vector<double>(32)};
  for (std::size_t i = 0; i < 32; ++i) l.values[i] = static_cast<double>(i);
  const auto c = concat_bev_conditions(HwcArray(2, 2, 1, 9.0), l, 1);
  // Frame 1, channel 2, pixel (1, 0): index ((1 * 4 + 2) * 2 + 1) * 2 + 0 = 26.
  EXPECT_EQ(c.at(1, 0, 1 + 2), 26.0);
  EXPECT_EQ(c.at(1, 0, 0), 9.0);
}

TEST(MeanPool, Averages) {
  HwcArray a(2, 4, 1);
  for (std::size_t i = 0; i < 8; ++i) a.data[i] = static_cast<double>(i);
  const auto p = mean_pool(a, 2);
  EXPECT_EQ(p.h, 1u);
  EXPECT_EQ(p.w, 2u);
  EXPECT_EQ(p.data[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_THROW(mean_pool(a, 3), ShapeError);
}

}  // namespace
}  // namespace dscene
