#include "dscene/geometry.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Geometry>

#include "dscene/error.hpp"

namespace dscene {

namespace {

constexpr double kOrthoTol = 1e-9;

}  // namespace

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("pose: non-finite rotation or translation");
  }
  const double ortho_err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > kOrthoTol) {
    std::ostringstream os;
    os << "pose: rotation is not orthonormal (max |R^T R - I| = " << ortho_err << ")";
    throw ValidationError(os.str());
  }
  if (std::abs(rotation.determinant() - 1.0) > kOrthoTol) {
    throw ValidationError("pose: rotation determinant is not +1");
  }
}

Pose Pose::from_yaw(double yaw, const Vec3& translation) {
  return Pose(Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), translation);
}

Pose Pose::from_euler_zyx(double yaw, double pitch, double roll, const Vec3& translation) {
  const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                  Eigen::AngleAxisd(roll, Vec3::UnitX()))
                     .toRotationMatrix();
  return Pose(r, translation);
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

Pose Pose::compose(const Pose& rhs) const {
  Pose out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ValidationError("intrinsics: principal point outside the image");
  }
}

void PointCloud::push_back(const Vec3& p, float i) {
  points.emplace_back(p.cast<float>());
  intensity.push_back(i);
}

void PointCloud::validate() const {
  if (points.size() != intensity.size()) {
    throw ValidationError("point cloud: intensity length differs from point count");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw ValidationError("point cloud: non-finite coordinate");
  }
}

Projection project_point(const CameraView& view, const Vec3& p) {
  const Vec3 pc = view.extrinsics.apply(p);
  const auto& k = view.intrinsics;
  Projection out;
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) return out;
  out.u = k.fx * pc.x() / pc.z() + k.cx;
  out.v = k.fy * pc.y() / pc.z() + k.cy;
  out.valid = out.u >= 0.0 && out.u < k.width && out.v >= 0.0 && out.v < k.height;
  return out;
}

std::vector<Projection> project_points(const CameraView& view, std::span<const Vec3> pts) {
  std::vector<Projection> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(project_point(view, p));
  return out;
}

Vec3 back_project(const CameraView& view, double u, double v, double depth) {
  const auto& k = view.intrinsics;
  const Vec3 pc((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
  return view.extrinsics.inverse().apply(pc);
}

std::vector<Vec3> transform_points(const Pose& pose, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(pose.apply(p));
  return out;
}

PointCloud transform_cloud(const Pose& pose, const PointCloud& cloud) {
  PointCloud out;
  out.timestamp = cloud.timestamp;
  out.intensity = cloud.intensity;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.emplace_back(pose.apply(p.cast<double>()).cast<float>());
  return out;
}

}  // namespace dscene
