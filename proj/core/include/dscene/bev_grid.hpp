#pragma once

#include <array>
#include <cstddef>
#include <optional>

#include "dscene/array.hpp"
#include "dscene/geometry.hpp"

namespace dscene {

struct BevGridSpec {
  double x_min = -51.2;
  double x_max = 51.2;
  double y_min = -51.2;
  double y_max = 51.2;
  double z_min = -3.0;
  double z_max = 5.0;
  double cell_size_xy = 0.4;
  int n_z_bins = 20;

  /// Throws ValidationError naming the first violated constraint.
  void validate() const;
  std::size_t nx() const;
  std::size_t ny() const;
  std::size_t nz() const { return static_cast<std::size_t>(n_z_bins); }
  double cell_size_z() const { return (z_max - z_min) / n_z_bins; }

  /// Cell (i, j, k) containing p under half-open bounds, or nullopt when p is
  /// outside the volume.
  std::optional<std::array<std::size_t, 3>> cell_of(const Vec3& p) const;
};

/// H x W x (n_z occupancy + min z + max z).
struct BevFeatureGrid {
  BevGridSpec spec;
  HwcArray values;

  std::size_t occupancy_channels() const { return spec.nz(); }
  /// The first n_z channels as a standalone occupancy volume.
  HwcArray occupancy() const;
};

BevFeatureGrid voxelize(const PointCloud& cloud, const BevGridSpec& spec);

/// Keeps the points whose containing cell has occupancy >= threshold. `occ`
/// is nx x ny x n_z.
PointCloud postprocess_filter(const PointCloud& cloud, const HwcArray& occ, const BevGridSpec& spec,
                              double threshold);

}  // namespace dscene
