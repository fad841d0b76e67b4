#pragma once

#include <cstddef>
#include <vector>

#include "dscene/array.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/geometry.hpp"
#include "dscene/layout_control.hpp"

namespace dscene {

struct DepthBinning {
  double d_min = 1.0;
  double d_max = 60.0;
  int n_bins = 59;

  void validate() const;
  double width() const { return (d_max - d_min) / n_bins; }
  double center(std::size_t k) const { return d_min + (static_cast<double>(k) + 0.5) * width(); }
};

struct ImageFeatureMap {
  int view_id = 0;
  HwcArray features;    // H x W x F
  HwcArray depth_dist;  // H x W x n_bins, rows nonnegative summing to 1

  void validate(const DepthBinning& binning) const;
};

/// Frustum points with per-point feature vectors (row-major M x F).
struct Frustum {
  std::size_t feature_dim = 0;
  std::vector<Vec3> points;
  std::vector<double> features;

  std::size_t size() const { return points.size(); }
};

/// One point per (pixel, bin), pixel-major then bin: the pixel center
/// back-projected to the bin-center depth, carrying feature x probability.
Frustum lift(const ImageFeatureMap& fmap, const CameraView& view, const DepthBinning& binning);

/// Sum-pools frustum features into BEV columns (nx x ny x F), dropping points
/// outside the grid volume.
HwcArray splat(const Frustum& frustum, const BevGridSpec& spec);

/// Sum of features of the frustum points inside the grid volume.
double in_volume_feature_sum(const Frustum& frustum, const BevGridSpec& spec);

/// Mean pooling over factor x factor windows.
HwcArray mean_pool(const HwcArray& a, std::size_t factor);

/// Channel-wise concatenation [img_bev | layout]; spatial dims must match.
HwcArray concat_bev_conditions(const HwcArray& img_bev, const HwcArray& layout_slice);
HwcArray concat_bev_conditions(const HwcArray& img_bev, const LayoutLatent& layout, std::size_t frame);

}  // namespace dscene
