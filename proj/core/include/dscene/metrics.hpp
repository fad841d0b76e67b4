#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dscene/geometry.hpp"

namespace dscene {

/// Closed axis-aligned box used to crop clouds before comparison.
struct CropVolume {
  double x_min = -51.2, x_max = 51.2;
  double y_min = -51.2, y_max = 51.2;
  double z_min = -3.0, z_max = 5.0;

  void validate() const;
  bool contains(const Vec3f& p) const;
  /// "default" or "x0,x1,y0,y1,z0,z1".
  static CropVolume parse(std::string_view text);
};

PointCloud crop_cloud(const PointCloud& cloud, const CropVolume& vol);

inline constexpr const char* kChamferConvention = "half-sum-of-directed-means-euclidean";

/// Half the sum of the two directed mean nearest-neighbor distances.
/// Throws EmptyCloudError if either cloud is empty.
double chamfer(const PointCloud& a, const PointCloud& b);
/// O(n*m) reference. Same per-point arithmetic and summation order as chamfer().
double chamfer_brute(const PointCloud& a, const PointCloud& b);

/// Nearest neighbor over an immutable point set. Ties go to the lowest index.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3f>& points);
  /// Returns the index of the nearest point; writes its squared distance.
  std::size_t nearest(const Vec3f& q, double* dist2 = nullptr) const;
  std::size_t size() const { return pts_.size(); }

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int axis;                // -1 for leaves
    double split;
    std::size_t left, right;
  };
  std::size_t build(std::size_t begin, std::size_t end);
  std::vector<Vec3f> pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct ChamferHorizons {
  double at_1s = 0.0;
  double at_2s = 0.0;
  double at_3s = 0.0;
};

/// Frame indices compared at 1, 2, 3 s. frame_rate_hz must be a positive integer.
std::array<std::size_t, 3> horizon_indices(double frame_rate_hz);

ChamferHorizons chamfer_horizons(const std::vector<PointCloud>& pred, const std::vector<PointCloud>& gt,
                                 double frame_rate_hz, const CropVolume& vol = {});

std::string chamfer_report_json(const ChamferHorizons& h);

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  void validate() const;
  /// Sample mean and (n-1)-normalized covariance of rows.
  static GaussianSummary from_samples(const Eigen::MatrixXd& rows);
};

double frechet_gaussian(const GaussianSummary& g1, const GaussianSummary& g2);

}  // namespace dscene
