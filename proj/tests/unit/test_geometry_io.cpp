#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "dscene/error.hpp"
#include "dscene/geometry.hpp"
#include "dscene/io.hpp"
#include "test_support.hpp"

namespace dscene {
namespace {

CameraView simple_camera() {
  CameraView v;
  v.intrinsics = {100.0, 100.0, 50.0, 50.0, 100, 100};
  return v;
}

TEST(Project, PrincipalPoint) {
  const auto p = project_point(simple_camera(), Vec3(0, 0, 2));
  ASSERT_TRUE(p.valid);
  EXPECT_DOUBLE_EQ(p.u, 50.0);
  EXPECT_DOUBLE_EQ(p.v, 50.0);
  EXPECT_DOUBLE_EQ(p.depth, 2.0);
}

TEST(Project, OffsetPointLandsOnBoundaryAndIsInvalid) {
  // u = 100 * 1 / 2 + 50 = 100 = width, outside the half-open image.
  const auto p = project_point(simple_camera(), Vec3(1, 0, 2));
  EXPECT_DOUBLE_EQ(p.u, 100.0);
  EXPECT_DOUBLE_EQ(p.v, 50.0);
  EXPECT_DOUBLE_EQ(p.depth, 2.0);
  EXPECT_FALSE(p.valid);
  auto wide = simple_camera();
  wide.intrinsics.width = 101;
  EXPECT_TRUE(project_point(wide, Vec3(1, 0, 2)).valid);
}

TEST(Project, BehindCamera) { EXPECT_FALSE(project_point(simple_camera(), Vec3(0, 0, -1)).valid); }

TEST(Project, BatchMatchesSingle) {
  std::mt19937_64 rng(3);
  std::vector<Vec3> pts;
  for (int i = 0; i < 50; ++i) {
    const auto v = testing::uniform_vec(rng, 3, -2.0, 2.0);
    pts.emplace_back(v[0], v[1], v[2] + 3.0);
  }
  const auto cam = simple_camera();
  const auto batch = project_points(cam, pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto s = project_point(cam, pts[i]);
    EXPECT_EQ(batch[i].valid, s.valid);
    EXPECT_EQ(batch[i].u, s.u);
    EXPECT_EQ(batch[i].depth, s.depth);
  }
}

TEST(Project, BackProjectRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  for (int trial = 0; trial < 200; ++trial) {
    CameraView cam;
    cam.intrinsics = {120.0, 110.0, 80.0, 48.0, 160, 96};
    cam.extrinsics = Pose::from_euler_zyx(ang(rng), 0.3 * ang(rng), 0.2 * ang(rng),
                                          Vec3(ang(rng), ang(rng), ang(rng)));
    const auto c = testing::uniform_vec(rng, 3, -1.0, 1.0);
    const Vec3 pc(c[0] * 2.0, c[1] * 1.5, 2.0 + 20.0 * std::abs(c[2]));
    const Vec3 world = cam.extrinsics.inverse().apply(pc);
    const auto pr = project_point(cam, world);
    if (!pr.valid) continue;
    const Vec3 back = back_project(cam, pr.u, pr.v, pr.depth);
    EXPECT_LE((back - world).norm(), 1e-6);
  }
}

TEST(Transform, Identity) {
  const std::vector<Vec3> pts{Vec3(1, 2, 3), Vec3(-4, 5, 0.5)};
  const auto out = transform_points(Pose::identity(), pts);
  EXPECT_EQ(out, pts);
}

TEST(Transform, Translation) {
  const std::vector<Vec3> pts{Vec3::Zero()};
  const auto out = transform_points(Pose(Mat3::Identity(), Vec3(1, 0, 0)), pts);
  EXPECT_EQ(out[0], Vec3(1, 0, 0));
}

TEST(Transform, QuarterYaw) {
  const auto out = Pose::from_yaw(std::numbers::pi / 2).apply(Vec3(1, 0, 0));
  EXPECT_NEAR(out.x(), 0.0, 1e-12);
  EXPECT_NEAR(out.y(), 1.0, 1e-12);
  EXPECT_NEAR(out.z(), 0.0, 1e-12);
}

TEST(Transform, InverseRestores) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = testing::uniform_vec(rng, 6, -3.0, 3.0);
    const Pose pose = Pose::from_euler_zyx(a[0], a[1], a[2], Vec3(a[3], a[4], a[5]));
    const Vec3 p(a[5], a[3], a[1]);
    EXPECT_LE((pose.inverse().apply(pose.apply(p)) - p).norm(), 1e-9);
    EXPECT_LE((pose.compose(pose.inverse()).apply(p) - p).norm(), 1e-9);
  }
}

TEST(Pose, RejectsNonRotation) {
  Mat3 r = Mat3::Identity();
  r(0, 0) = -1.0;  // reflection
  EXPECT_THROW(Pose(r, Vec3::Zero()), ValidationError);
  r = Mat3::Identity() * 1.01;
  EXPECT_THROW(Pose(r, Vec3::Zero()), ValidationError);
}

TEST(Intrinsics, Validation) {
  CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  EXPECT_NO_THROW(k.validate());
  k.fx = 0;
  EXPECT_THROW(k.validate(), ValidationError);
  k = {100, 100, 100, 50, 100, 100};
  EXPECT_THROW(k.validate(), ValidationError);
}

TEST(PointCloud, Validation) {
  PointCloud c;
  c.push_back(Vec3(1, 2, 3));
  EXPECT_NO_THROW(c.validate());
  c.intensity.push_back(0.5f);
  EXPECT_THROW(c.validate(), ValidationError);
  c.intensity.pop_back();
  c.points[0].x() = std::nanf("");
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Io, CloudRoundTrip) {
  std::mt19937_64 rng(1);
  auto c = testing::random_cloud(rng, 37);
  c.intensity[3] = 0.25f;
  const auto bytes = io::encode_cloud(c);
  EXPECT_EQ(bytes.size(), 8u + 37u * 16u);
  EXPECT_EQ(bytes.substr(0, 4), "GPC1");
  const auto back = io::decode_cloud(bytes);
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.intensity, c.intensity);

  testing::TempDir dir("io");
  io::write_cloud(dir.path() / "a.gpc", c);
  EXPECT_EQ(io::read_cloud(dir.path() / "a.gpc").points, c.points);
}

TEST(Io, CloudRejectsMalformed) {
  EXPECT_THROW(io::decode_cloud("GPC2\0\0\0\0"), FormatError);
  std::mt19937_64 rng(2);
  auto bytes = io::encode_cloud(testing::random_cloud(rng, 4));
  bytes.pop_back();
  EXPECT_THROW(io::decode_cloud(bytes), FormatError);
  EXPECT_THROW(io::decode_cloud("GP"), FormatError);
}

TEST(Io, GridRoundTrip) {
  HwcArray g(3, 4, 2);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = 0.1 * static_cast<double>(i);
  const auto bytes = io::encode_grid(g);
  EXPECT_EQ(bytes.substr(0, 4), "GBV1");
  EXPECT_EQ(bytes.size(), 16u + 24u * 4u);
  const auto back = io::decode_grid(bytes);
  EXPECT_EQ(back, io::quantize_f32(g));
  EXPECT_EQ(io::decode_grid(io::encode_grid(back)), back);
  EXPECT_THROW(io::decode_grid(bytes.substr(0, bytes.size() - 1)), FormatError);
}

TEST(Io, CalibrationRoundTrip) {
  std::vector<CameraView> views(2);
  views[0].intrinsics = {80, 81, 79.5, 47.5, 160, 96};
  views[0].extrinsics = Pose::from_euler_zyx(0.3, -0.1, 0.05, Vec3(1, 2, 3));
  views[1].view_id = 4;
  views[1].intrinsics = {50, 50, 10, 10, 20, 20};
  const auto back = io::calibration_from_json(io::calibration_to_json(views));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].view_id, 4);
  EXPECT_EQ(back[0].intrinsics.fy, 81.0);
  EXPECT_EQ(back[0].extrinsics.rotation(), views[0].extrinsics.rotation());
  EXPECT_EQ(back[0].extrinsics.translation(), views[0].extrinsics.translation());
}

TEST(Io, CalibrationRejectsDuplicateIdsAndBadJson) {
  std::vector<CameraView> views(2);
  views[0].intrinsics = views[1].intrinsics = {50, 50, 10, 10, 20, 20};
  EXPECT_THROW(io::calibration_from_json(io::calibration_to_json(views)), ValidationError);
  EXPECT_THROW(io::calibration_from_json("{\"views\": ["), FormatError);
}

}  // namespace
}  // namespace dscene
