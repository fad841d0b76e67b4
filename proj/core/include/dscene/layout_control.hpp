#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dscene/array.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/geometry.hpp"
#include "dscene/params.hpp"
#include "dscene/scene_synth.hpp"
#include "dscene/strided_net.hpp"

namespace dscene {

enum ControlChannel : std::size_t { kLaneChannel = 0, kBoxChannel = 1, kSkeletonChannel = 2, kControlChannels = 3 };

inline constexpr double kNearPlane = 0.1;

/// Per-view semantic control map, H x W x {lane, box_mask, skeleton}.
struct ControlMap {
  int view_id = 0;
  int frame = 0;
  HwcArray channels;
};

ControlMap rasterize_layout(const SceneLayout& layout, const CameraView& view, int frame = 0);

/// Visible joints stamped 3x3, plus limbs whose endpoints are both visible.
/// Throws ValidationError when a skeleton does not have kNumJoints joints.
HwcArray pose_keypoints_channel(const std::vector<Skeleton>& skeletons, const CameraView& view);

/// Top-down raster of the layout on the BEV grid (nx x ny x 3): lanes as
/// anti-aliased lines, box footprints filled, joints stamped.
ControlMap rasterize_layout_bev(const SceneLayout& layout, const BevGridSpec& spec, int frame = 0);

/// f x c x h x w latent.
struct LayoutLatent {
  std::size_t f = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;

  double at(std::size_t fi, std::size_t ci, std::size_t i, std::size_t j) const {
    return values[((fi * c + ci) * h + i) * w + j];
  }
  /// One frame as an h x w x c array.
  HwcArray frame_slice(std::size_t fi) const;
};

/// Shared strided encoder applied per frame (no temporal mixing).
class LayoutEncoder {
 public:
  struct Config {
    std::size_t in_channels = kControlChannels;
    std::size_t hidden = 8;
    std::size_t latent_channels = 4;

    StridedEncoderConfig encoder() const { return {in_channels, hidden, latent_channels, 3}; }
  };

  LayoutEncoder(Config cfg, ParameterStore params);
  static LayoutEncoder random(const Config& cfg, std::uint64_t seed, bool zero_bias = true);

  const Config& config() const { return cfg_; }
  const ParameterStore& params() const { return params_; }

  /// Throws ShapeError on inconsistent frame shapes or H, W not divisible by 8.
  LayoutLatent encode(const std::vector<ControlMap>& frames) const;
  /// [F, H, W, C] -> [F, c, H/8, W/8].
  ad::Tensor encode(const BoundParams& p, const ad::Tensor& frames) const;

 private:
  Config cfg_;
  ParameterStore params_;
};

}  // namespace dscene
