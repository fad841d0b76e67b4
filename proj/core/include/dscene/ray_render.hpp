#pragma once

#include <cstdint>
#include <vector>

#include "dscene/array.hpp"
#include "dscene/bev_codec.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/geometry.hpp"
#include "dscene/scene_synth.hpp"

namespace dscene {

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;  // unit length
  double max_t = 80.0;

  std::size_t size() const { return origins.size(); }
  void validate() const;
};

/// Rays of `pattern` from a sensor placed by `sensor_to_grid`, in pattern order.
RayBatch rays_from_pattern(const Pose& sensor_to_grid, const LidarPattern& pattern);

struct RenderOptions {
  bool skip = true;
  double miss_threshold = 0.05;
  /// Cells with occupancy <= floor count as empty (alpha = 0).
  double empty_floor = 0.0;
  /// Edge length, in cells, of the cubic blocks used for empty-space skipping.
  int block = 4;
};

struct CellWeight {
  std::uint32_t cell;  // (i * ny + j) * nz + k
  double weight;
  double depth;  // midpoint of the ray segment inside the cell

  friend bool operator==(const CellWeight&, const CellWeight&) = default;
};

struct RayRender {
  double depth = 0.0;        // sum(w d) / sum(w); 0 when sum(w) = 0
  double termination = 0.0;  // sum(w)
  bool hit = false;          // termination >= miss threshold
  std::vector<CellWeight> weights;  // cells with nonzero alpha, in traversal order

  friend bool operator==(const RayRender&, const RayRender&) = default;
};

struct RenderResult {
  std::vector<RayRender> rays;
  std::uint64_t cells_visited = 0;  // cells whose occupancy was read
};

/// Volume rendering through an nx x ny x n_z occupancy volume by 3-D DDA.
/// Weights w_i = a_i prod_{j<i}(1 - a_j). With skip set, 3-D blocks whose
/// cells are all empty are crossed in one step; results are bitwise equal.
RenderResult render_rays(const HwcArray& occ, const BevGridSpec& spec, const RayBatch& rays,
                         const RenderOptions& opts = {});

/// Mean |pred - gt| over valid entries; 0 when none are valid.
double depth_l1_loss(const std::vector<double>& pred, const std::vector<double>& gt, const std::vector<bool>& valid);

/// Mean over rays with positive mass of the entropy of the normalized weights.
double surface_reg_loss(const std::vector<std::vector<double>>& weights);

/// Weight values of each rendered ray, for surface_reg_loss.
std::vector<std::vector<double>> weight_values(const RenderResult& r);

/// decode -> render rays of `pattern` from `sensor_to_grid` -> one point per
/// hitting ray at its expected depth -> postprocess_filter(threshold).
/// Cells below the threshold are treated as empty while rendering.
PointCloud reconstruct_cloud(const LatentCodec& codec, const BevLatent& latent, const BevGridSpec& spec,
                             const Pose& sensor_to_grid, const LidarPattern& pattern, double threshold,
                             bool skip = true);

/// Same pipeline starting from an already-decoded occupancy volume.
PointCloud reconstruct_from_occupancy(const HwcArray& occ, const BevGridSpec& spec, const Pose& sensor_to_grid,
                                      const LidarPattern& pattern, double threshold, bool skip = true);

}  // namespace dscene
