#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "dscene/params.hpp"
#include "dscene/tensor.hpp"

namespace dscene {

/// [B, H, W, C] -> [B, H/2, W/2, 4C]; each output pixel holds its 2x2 window
/// in (di, dj, c) order.
ad::Tensor space_to_depth(const ad::Tensor& x);
/// Inverse of space_to_depth: [B, h, w, 4C] -> [B, 2h, 2w, C].
ad::Tensor depth_to_space(const ad::Tensor& x);
/// Affine map over the last axis: x [..., in] * w [in, out] + b [out].
ad::Tensor dense(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b);

/// Encoder: `levels` stride-2 windowed mixing layers (2x2 space-to-depth,
/// dense, ReLU) followed by a dense projection to `out_channels`.
struct StridedEncoderConfig {
  std::size_t in_channels = 1;
  std::size_t hidden = 16;
  std::size_t out_channels = 4;
  int levels = 3;

  std::size_t factor() const { return std::size_t{1} << levels; }
};

/// Decoder mirror: dense + ReLU from `in_channels` to `hidden`, then `levels`
/// dense + depth-to-space layers. The last layer emits `out_channels` and is
/// squashed by a sigmoid when `sigmoid_output` is set.
struct StridedDecoderConfig {
  std::size_t in_channels = 4;
  std::size_t hidden = 16;
  std::size_t out_channels = 1;
  int levels = 3;
  bool sigmoid_output = true;
};

/// Parameter names are `prefix` + "l{k}.w" / "l{k}.b" and "proj.w" / "proj.b".
void init_encoder(ParameterStore& store, const std::string& prefix, const StridedEncoderConfig& cfg,
                  std::mt19937_64& rng, bool zero_bias = true);
/// Parameter names are `prefix` + "in.w" / "in.b" and "l{k}.w" / "l{k}.b".
void init_decoder(ParameterStore& store, const std::string& prefix, const StridedDecoderConfig& cfg,
                  std::mt19937_64& rng, bool zero_bias = true);

/// x is [B, H, W, C] with H and W divisible by cfg.factor().
ad::Tensor run_encoder(const BoundParams& p, const std::string& prefix, const StridedEncoderConfig& cfg,
                       const ad::Tensor& x);
ad::Tensor run_decoder(const BoundParams& p, const std::string& prefix, const StridedDecoderConfig& cfg,
                       const ad::Tensor& z);

}  // namespace dscene
