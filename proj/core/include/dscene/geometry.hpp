#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace dscene {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec3f = Eigen::Vector3f;

/// Rigid transform p -> R p + t. Which frames it maps between is up to the
/// holder; camera extrinsics are world->camera.
class Pose {
 public:
  Pose() = default;
  /// Throws ValidationError unless R is orthonormal with det +1 (1e-9).
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  /// Rotation about +z by `yaw` radians followed by translation.
  static Pose from_yaw(double yaw, const Vec3& translation = Vec3::Zero());
  static Pose from_euler_zyx(double yaw, double pitch, double roll,
                             const Vec3& translation = Vec3::Zero());

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Pose inverse() const;
  /// (*this) after `rhs`: p -> this(rhs(p)).
  Pose compose(const Pose& rhs) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

struct CameraView {
  int view_id = 0;
  CameraIntrinsics intrinsics;
  Pose extrinsics;  // world -> camera
};

/// Timestamped LiDAR sweep. Coordinates are stored in single precision.
struct PointCloud {
  std::vector<Vec3f> points;
  std::vector<float> intensity;
  double timestamp = 0.0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push_back(const Vec3& p, float i = 1.0f);
  /// Throws ValidationError on non-finite coordinates or length mismatch.
  void validate() const;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  bool valid = false;
};

/// Pinhole projection through world->camera extrinsics. A point is valid when
/// its camera depth is positive and (u, v) lies in [0, width) x [0, height).
std::vector<Projection> project_points(const CameraView& view, std::span<const Vec3> pts);
Projection project_point(const CameraView& view, const Vec3& p);

/// Inverse of project_point for a known camera depth.
Vec3 back_project(const CameraView& view, double u, double v, double depth);

std::vector<Vec3> transform_points(const Pose& pose, std::span<const Vec3> pts);
PointCloud transform_cloud(const Pose& pose, const PointCloud& cloud);

}  // namespace dscene
