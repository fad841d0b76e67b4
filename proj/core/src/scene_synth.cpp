#include "dscene/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Geometry>

#include "dscene/error.hpp"
#include "json.hpp"

namespace dscene {

namespace {

using nlohmann::json;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;

// Standing pose in a person-local frame (x forward, y left, z up), 1.7 m tall.
const std::array<Vec3, kNumJoints> kPoseTemplate = {
    Vec3(0.10, 0.00, 1.60), Vec3(0.08, 0.03, 1.65), Vec3(0.08, -0.03, 1.65), Vec3(0.00, 0.07, 1.62),
    Vec3(0.00, -0.07, 1.62), Vec3(0.00, 0.20, 1.40), Vec3(0.00, -0.20, 1.40), Vec3(0.00, 0.25, 1.10),
    Vec3(0.00, -0.25, 1.10), Vec3(0.05, 0.25, 0.85), Vec3(0.05, -0.25, 0.85), Vec3(0.00, 0.10, 0.90),
    Vec3(0.00, -0.10, 0.90), Vec3(0.02, 0.10, 0.50), Vec3(0.02, -0.10, 0.50), Vec3(0.00, 0.10, 0.05),
    Vec3(0.00, -0.10, 0.05),
};

// Ego corridor kept free of obstacles so the sensor never starts inside a box.
constexpr double kCorridorHalfWidth = 2.5;

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

enum class Surface { kNone, kGround, kBox };

Surface nearest_hit(const SceneLayout& layout, const Vec3& origin, const Vec3& dir, double& t_best) {
  t_best = kInf;
  Surface surface = Surface::kNone;
  if (dir.z() < 0.0 && origin.z() > 0.0) {
    t_best = -origin.z() / dir.z();
    surface = Surface::kGround;
  }
  for (const auto& box : layout.boxes) {
    double t0 = 0.0;
    double t1 = 0.0;
    if (!intersect_box(box, origin, dir, t0, t1)) continue;
    const double t = t0 > 0.0 ? t0 : t1;
    if (t > 0.0 && t < t_best) {
      t_best = t;
      surface = Surface::kBox;
    }
  }
  return surface;
}

}  // namespace

std::string_view category_name(int category) {
  switch (category) {
    case 0: return "car";
    case 1: return "truck";
    case 2: return "cyclist";
    default: return "object";
  }
}

std::array<Vec3, 8> Box3::corners() const {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 h = size / 2.0;
  const std::array<Vec3, 8> local = {
      Vec3(h.x(), h.y(), -h.z()),  Vec3(-h.x(), h.y(), -h.z()),  Vec3(-h.x(), -h.y(), -h.z()),
      Vec3(h.x(), -h.y(), -h.z()), Vec3(h.x(), h.y(), h.z()),    Vec3(-h.x(), h.y(), h.z()),
      Vec3(-h.x(), -h.y(), h.z()), Vec3(h.x(), -h.y(), h.z()),
  };
  std::array<Vec3, 8> out;
  for (std::size_t i = 0; i < 8; ++i) out[i] = r * local[i] + center;
  return out;
}

void SceneLayout::validate() const {
  for (const auto& lane : lanes) {
    if (lane.size() < 2) throw ValidationError("layout: lane polyline needs at least 2 vertices");
    for (const auto& p : lane)
      if (!p.allFinite()) throw ValidationError("layout: non-finite lane vertex");
  }
  for (const auto& box : boxes) {
    if (!(box.size.minCoeff() > 0.0)) throw ValidationError("layout: box sizes must be positive");
    if (!box.center.allFinite() || !std::isfinite(box.yaw)) throw ValidationError("layout: non-finite box");
  }
  for (const auto& s : skeletons) {
    if (s.joints.size() != kNumJoints || s.visible.size() != kNumJoints) {
      throw ValidationError("layout: skeleton must have " + std::to_string(kNumJoints) + " joints");
    }
  }
}

void EgoTrajectory::validate() const {
  if (!(frame_period > 0.0)) throw ValidationError("trajectory: frame period must be positive");
  for (const auto& p : ego_to_world)
    if (!p.translation().allFinite()) throw ValidationError("trajectory: non-finite pose");
}

LidarPattern LidarPattern::standard() {
  LidarPattern p;
  p.azimuth_count = 1024;
  const int rings = 32;
  for (int i = 0; i < rings; ++i) {
    const double deg = -30.0 + 40.0 * i / (rings - 1);
    p.elevations.push_back(deg * kPi / 180.0);
  }
  p.max_range = 80.0;
  return p;
}

void LidarPattern::validate() const {
  if (azimuth_count < 1) throw ValidationError("lidar pattern: azimuth count must be >= 1");
  if (!(max_range > 0.0)) throw ValidationError("lidar pattern: max range must be positive");
  for (double e : elevations)
    if (!(std::abs(e) < kPi / 2)) throw ValidationError("lidar pattern: elevation outside (-90, 90) degrees");
}

Vec3 LidarPattern::direction(std::size_t ring, int azimuth) const {
  const double el = elevations[ring];
  const double az = 2.0 * kPi * azimuth / azimuth_count;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

void SceneParams::validate() const {
  if (n_lanes < 0 || n_lanes > 16) throw ValidationError("scene params: n_lanes must be in [0, 16]");
  if (n_boxes < 0 || n_boxes > 64) throw ValidationError("scene params: n_boxes must be in [0, 64]");
  if (n_pedestrians < 0 || n_pedestrians > 32) throw ValidationError("scene params: n_pedestrians must be in [0, 32]");
  if (n_lanes == 0 && n_boxes == 0) throw ValidationError("scene params: zero lanes and zero boxes");
  if (n_frames < 1 || n_frames > 1000) throw ValidationError("scene params: n_frames must be in [1, 1000]");
  if (!(extent >= 8.0 && extent <= 51.2)) throw ValidationError("scene params: extent must be in [8, 51.2]");
  if (!(frame_period > 0.0)) throw ValidationError("scene params: frame_period must be positive");
  if (!(ego_speed >= 0.0 && ego_speed <= 40.0)) throw ValidationError("scene params: ego_speed must be in [0, 40]");
}

Scene gen_scene(std::uint64_t seed, const SceneParams& params) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Scene scene;
  auto& layout = scene.layout;

  constexpr int kLaneVertices = 9;
  for (int k = 0; k < params.n_lanes; ++k) {
    const double offset = (k - (params.n_lanes - 1) / 2.0) * 3.5 + uniform(-0.3, 0.3);
    const double bend = uniform(-2e-3, 2e-3);
    std::vector<Vec3> lane;
    for (int i = 0; i < kLaneVertices; ++i) {
      const double x = -params.extent + 2.0 * params.extent * i / (kLaneVertices - 1);
      lane.emplace_back(x, offset + bend * x * x, 0.0);
    }
    layout.lanes.push_back(std::move(lane));
  }

  std::vector<std::pair<Vec3, double>> occupied;  // footprint circles (center, radius)
  auto free_spot = [&](const Vec3& c, double radius) {
    if (std::abs(c.y()) - radius < kCorridorHalfWidth) return false;
    for (const auto& [oc, orad] : occupied)
      if ((oc - c).head<2>().norm() < orad + radius + 0.5) return false;
    return true;
  };

  for (int b = 0; b < params.n_boxes; ++b) {
    Box3 box;
    const double pick = unit(rng);
    if (pick < 0.7) {
      box.category = static_cast<int>(BoxCategory::kCar);
      box.size = Vec3(uniform(4.0, 5.0), uniform(1.7, 2.0), uniform(1.4, 1.8));
    } else if (pick < 0.9) {
      box.category = static_cast<int>(BoxCategory::kTruck);
      box.size = Vec3(uniform(6.0, 9.0), uniform(2.3, 2.6), uniform(2.5, 3.5));
    } else {
      box.category = static_cast<int>(BoxCategory::kCyclist);
      box.size = Vec3(uniform(1.6, 1.9), uniform(0.5, 0.7), uniform(1.5, 1.8));
    }
    box.yaw = uniform(-kPi, kPi);
    const double radius = box.size.head<2>().norm() / 2.0;
    const double lim = params.extent - radius;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const Vec3 c(uniform(-lim, lim), uniform(-lim, lim), box.size.z() / 2.0);
      if (free_spot(c, radius)) {
        box.center = c;
        occupied.emplace_back(c, radius);
        placed = true;
      }
    }
    if (!placed) throw ValidationError("scene params: could not place all boxes inside the extent");
    layout.boxes.push_back(box);
  }

  for (int p = 0; p < params.n_pedestrians; ++p) {
    const double yaw = uniform(-kPi, kPi);
    Vec3 c;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      c = Vec3(uniform(-params.extent + 1, params.extent - 1), uniform(-params.extent + 1, params.extent - 1), 0.0);
      placed = free_spot(c, 0.4);
    }
    if (!placed) throw ValidationError("scene params: could not place all pedestrians inside the extent");
    occupied.emplace_back(c, 0.4);
    const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
    Skeleton s;
    for (const auto& j : kPoseTemplate) {
      s.joints.push_back(r * j + c);
      s.visible.push_back(unit(rng) < 0.9);
    }
    layout.skeletons.push_back(std::move(s));
  }

  auto& traj = scene.trajectory;
  traj.frame_period = params.frame_period;
  for (int f = 0; f < params.n_frames; ++f) {
    traj.ego_to_world.push_back(Pose::from_yaw(0.0, Vec3(params.ego_speed * params.frame_period * f, 0.0, 0.0)));
  }
  return scene;
}

bool intersect_box(const Box3& box, const Vec3& origin, const Vec3& dir, double& t_enter, double& t_exit) {
  const Eigen::Matrix3d to_local = Eigen::AngleAxisd(-box.yaw, Vec3::UnitZ()).toRotationMatrix();
  const Vec3 o = to_local * (origin - box.center);
  const Vec3 d = to_local * dir;
  const Vec3 half = box.size / 2.0;
  double lo = -kInf;
  double hi = kInf;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < -half[a] || o[a] > half[a]) return false;
      continue;
    }
    double t1 = (-half[a] - o[a]) / d[a];
    double t2 = (half[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
  }
  if (lo > hi || hi <= 0.0) return false;
  t_enter = lo;
  t_exit = hi;
  return true;
}

double intersect_scene(const SceneLayout& layout, const Vec3& origin, const Vec3& dir) {
  double t = kInf;
  nearest_hit(layout, origin, dir, t);
  return t;
}

Pose lidar_to_world(const Pose& ego_to_world) {
  return ego_to_world.compose(Pose::from_yaw(0.0, Vec3(0.0, 0.0, kLidarMountHeight)));
}

PointCloud cast_rays(const SceneLayout& layout, const Pose& sensor_to_world, const LidarPattern& pattern) {
  pattern.validate();
  PointCloud cloud;
  const Vec3 origin = sensor_to_world.translation();
  for (std::size_t ring = 0; ring < pattern.elevations.size(); ++ring) {
    for (int a = 0; a < pattern.azimuth_count; ++a) {
      const Vec3 dir = sensor_to_world.rotation() * pattern.direction(ring, a);
      double t = kInf;
      const Surface s = nearest_hit(layout, origin, dir, t);
      if (s == Surface::kNone || t > pattern.max_range) continue;
      cloud.push_back(origin + t * dir, s == Surface::kBox ? 0.8f : 0.2f);
    }
  }
  return cloud;
}

std::vector<CameraView> gen_rig(int n_views, const RigParams& params) {
  if (n_views < 1) throw ValidationError("rig: n_views must be >= 1");
  std::vector<CameraView> rig;
  const Vec3 center(0.0, 0.0, params.mount_height);
  for (int k = 0; k < n_views; ++k) {
    const double yaw = 2.0 * kPi * k / n_views;
    Mat3 cam_to_world;
    cam_to_world.col(0) = Vec3(std::sin(yaw), -std::cos(yaw), 0.0);
    cam_to_world.col(1) = Vec3(0.0, 0.0, -1.0);
    cam_to_world.col(2) = Vec3(std::cos(yaw), std::sin(yaw), 0.0);
    const Mat3 r = cam_to_world.transpose();
    CameraView view;
    view.view_id = k;
    view.intrinsics = {params.fx, params.fy, params.width / 2.0, params.height / 2.0, params.width, params.height};
    view.intrinsics.validate();
    view.extrinsics = Pose(r, -(r * center));
    rig.push_back(view);
  }
  return rig;
}

std::vector<CameraView> place_rig(const std::vector<CameraView>& rig, const Pose& ego_to_world) {
  std::vector<CameraView> out = rig;
  const Pose world_to_ego = ego_to_world.inverse();
  for (auto& v : out) v.extrinsics = v.extrinsics.compose(world_to_ego);
  return out;
}

std::string layout_to_json(const SceneLayout& layout) {
  json lanes = json::array();
  for (const auto& lane : layout.lanes) {
    json l = json::array();
    for (const auto& p : lane) l.push_back(vec_to_json(p));
    lanes.push_back(l);
  }
  json boxes = json::array();
  for (const auto& b : layout.boxes) {
    boxes.push_back({{"center", vec_to_json(b.center)},
                     {"size", vec_to_json(b.size)},
                     {"yaw", b.yaw},
                     {"category", b.category}});
  }
  json skeletons = json::array();
  for (const auto& s : layout.skeletons) {
    json joints = json::array();
    for (const auto& j : s.joints) joints.push_back(vec_to_json(j));
    json vis = json::array();
    for (bool v : s.visible) vis.push_back(v);
    skeletons.push_back({{"joints", joints}, {"visible", vis}});
  }
  return json{{"lanes", lanes}, {"boxes", boxes}, {"skeletons", skeletons}}.dump(2);
}

SceneLayout layout_from_json(std::string_view text) {
  SceneLayout layout;
  try {
    const json doc = json::parse(text);
    for (const auto& jl : doc.at("lanes")) {
      std::vector<Vec3> lane;
      for (const auto& p : jl) lane.push_back(vec_from_json(p));
      layout.lanes.push_back(std::move(lane));
    }
    for (const auto& jb : doc.at("boxes")) {
      Box3 b;
      b.center = vec_from_json(jb.at("center"));
      b.size = vec_from_json(jb.at("size"));
      b.yaw = jb.at("yaw").get<double>();
      b.category = jb.at("category").get<int>();
      layout.boxes.push_back(b);
    }
    for (const auto& js : doc.at("skeletons")) {
      Skeleton s;
      for (const auto& j : js.at("joints")) s.joints.push_back(vec_from_json(j));
      for (const auto& v : js.at("visible")) s.visible.push_back(v.get<bool>());
      layout.skeletons.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("layout JSON: ") + e.what());
  }
  layout.validate();
  return layout;
}

std::string trajectory_to_json(const EgoTrajectory& traj) {
  json poses = json::array();
  for (const auto& p : traj.ego_to_world) {
    const auto& r = p.rotation();
    poses.push_back({{"rotation", {{r(0, 0), r(0, 1), r(0, 2)}, {r(1, 0), r(1, 1), r(1, 2)}, {r(2, 0), r(2, 1), r(2, 2)}}},
                     {"translation", vec_to_json(p.translation())}});
  }
  return json{{"frame_period", traj.frame_period}, {"ego_to_world", poses}}.dump(2);
}

EgoTrajectory trajectory_from_json(std::string_view text) {
  EgoTrajectory traj;
  try {
    const json doc = json::parse(text);
    traj.frame_period = doc.at("frame_period").get<double>();
    for (const auto& jp : doc.at("ego_to_world")) {
      Mat3 r;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = jp.at("rotation").at(i).at(j).get<double>();
      traj.ego_to_world.emplace_back(r, vec_from_json(jp.at("translation")));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("trajectory JSON: ") + e.what());
  }
  traj.validate();
  return traj;
}

}  // namespace dscene
