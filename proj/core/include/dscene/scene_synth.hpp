#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dscene/geometry.hpp"

namespace dscene {

inline constexpr std::size_t kNumJoints = 17;

/// COCO-17 keypoint limbs (0-based joint indices).
inline constexpr std::array<std::array<int, 2>, 19> kSkeletonLimbs = {{
    {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12}, {5, 6}, {5, 7}, {6, 8},
    {7, 9}, {8, 10}, {1, 2}, {0, 1}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6},
}};

enum class BoxCategory : int { kCar = 0, kTruck = 1, kCyclist = 2 };
std::string_view category_name(int category);

struct Box3 {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // length (local x), width (local y), height
  double yaw = 0.0;
  int category = 0;

  /// Eight corners; bottom face first, counter-clockwise seen from above.
  std::array<Vec3, 8> corners() const;
};

struct Skeleton {
  std::vector<Vec3> joints;  // kNumJoints entries, world meters
  std::vector<bool> visible;
};

struct SceneLayout {
  std::vector<std::vector<Vec3>> lanes;
  std::vector<Skeleton> skeletons;
  std::vector<Box3> boxes;

  void validate() const;
};

struct EgoTrajectory {
  std::vector<Pose> ego_to_world;  // one per frame, ego origin on the ground
  double frame_period = 0.5;

  void validate() const;
};

struct LidarPattern {
  int azimuth_count = 1024;
  std::vector<double> elevations;  // radians
  double max_range = 80.0;

  /// 32 rings spread evenly over [-30, +10] degrees, 1024 azimuths.
  static LidarPattern standard();
  void validate() const;
  std::size_t ray_count() const { return static_cast<std::size_t>(azimuth_count) * elevations.size(); }
  /// Unit direction of ray (ring, azimuth index) in the sensor frame.
  Vec3 direction(std::size_t ring, int azimuth) const;
};

struct SceneParams {
  int n_lanes = 3;
  int n_boxes = 5;
  int n_pedestrians = 2;
  int n_frames = 7;
  double extent = 40.0;        // boxes and pedestrians within [-extent, extent]^2
  double frame_period = 0.5;   // seconds
  double ego_speed = 4.0;      // m/s along +x

  void validate() const;
};

struct Scene {
  SceneLayout layout;
  EgoTrajectory trajectory;
};

/// LiDAR mounting height above the ego ground origin.
inline constexpr double kLidarMountHeight = 1.84;

/// Sensor pose for an ego pose: the LiDAR sits kLidarMountHeight above the
/// ego origin with axes aligned to the ego frame.
Pose lidar_to_world(const Pose& ego_to_world);

Scene gen_scene(std::uint64_t seed, const SceneParams& params);

/// Returns world-frame hit points, in ray order (ring-major). `sensor_to_world`
/// places the sensor; rays without a hit within max_range produce no point.
PointCloud cast_rays(const SceneLayout& layout, const Pose& sensor_to_world, const LidarPattern& pattern);

/// Nearest hit distance along a unit ray against ground plane z=0 and boxes,
/// or +inf. Exposed for oracle checks.
double intersect_scene(const SceneLayout& layout, const Vec3& origin, const Vec3& dir);
/// Slab test against an oriented box; returns entry/exit distances or false.
bool intersect_box(const Box3& box, const Vec3& origin, const Vec3& dir, double& t_enter, double& t_exit);

struct RigParams {
  double fx = 80.0;
  double fy = 80.0;
  int width = 160;
  int height = 96;
  double mount_height = 1.6;
};

/// Views evenly spaced in yaw around the ego origin; view k looks along yaw
/// 2*pi*k/n. Extrinsics are world(ego)->camera.
std::vector<CameraView> gen_rig(int n_views, const RigParams& params = {});

/// Camera rig moved to an ego pose: world->camera = (ego->camera) * (world->ego).
std::vector<CameraView> place_rig(const std::vector<CameraView>& rig, const Pose& ego_to_world);

std::string layout_to_json(const SceneLayout& layout);
SceneLayout layout_from_json(std::string_view text);
std::string trajectory_to_json(const EgoTrajectory& traj);
EgoTrajectory trajectory_from_json(std::string_view text);

}  // namespace dscene
