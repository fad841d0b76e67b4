#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dscene/array.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/params.hpp"
#include "dscene/strided_net.hpp"

namespace dscene {

inline constexpr std::size_t kBevLatentChannels = 4;
inline constexpr std::size_t kBevDownsample = 8;

/// (H/8) x (W/8) x 4.
struct BevLatent {
  HwcArray values;
};

/// Maps H x W x C BEV grids to (H/8) x (W/8) x 4 latents and back to
/// H x W x n_z occupancy in [0, 1].
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual BevLatent encode(const HwcArray& grid) const = 0;
  virtual HwcArray decode(const BevLatent& latent) const = 0;
  virtual void save(const std::filesystem::path& manifest) const = 0;
  BevLatent encode(const BevFeatureGrid& grid) const { return encode(grid.values); }
};

/// Reads either codec kind from a parameter manifest.
std::unique_ptr<LatentCodec> load_codec(const std::filesystem::path& manifest);

struct BevCodecConfig {
  std::size_t in_channels = 22;  // n_z occupancy + 2 height channels
  std::size_t n_z = 20;
  std::size_t hidden = 16;

  static BevCodecConfig for_spec(const BevGridSpec& spec, std::size_t hidden = 16);
  StridedEncoderConfig encoder() const;
  StridedDecoderConfig decoder() const;
};

/// Strided encoder to a 4-channel latent at 1/8 resolution and a mirrored
/// decoder producing per-cell occupancy probabilities.
class BevCodec : public LatentCodec {
 public:
  BevCodec(BevCodecConfig cfg, ParameterStore params);

  /// Random weights, zero biases.
  static BevCodec random(const BevCodecConfig& cfg, std::uint64_t seed);
  /// All weights and biases zero: encodes everything to 0, decodes to 0.5.
  static BevCodec zeros(const BevCodecConfig& cfg);
  static BevCodec load(const std::filesystem::path& manifest);
  void save(const std::filesystem::path& manifest) const override;

  const BevCodecConfig& config() const { return cfg_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }

  /// Throws ShapeError unless H and W are divisible by 8 and C matches.
  BevLatent encode(const HwcArray& grid) const override;
  using LatentCodec::encode;
  /// H x W x n_z occupancy in [0, 1].
  HwcArray decode(const BevLatent& latent) const override;

  // Tape-level forms: grid [B, H, W, C] -> latent [B, H/8, W/8, 4] -> occ.
  ad::Tensor encode(const BoundParams& p, const ad::Tensor& grid) const;
  ad::Tensor decode(const BoundParams& p, const ad::Tensor& latent) const;

 private:
  BevCodecConfig cfg_;
  ParameterStore params_;
};

struct ColumnCodecConfig {
  BevGridSpec spec;
  double ground_z = -1.84;  // ground height in the grid frame
  double sharpness = 6.0;   // logistic slope per cell of distance

  void validate() const;
  std::size_t ground_bin() const;
};

/// Analytic codec summarizing each 8 x 8 block by the columns holding
/// anything above the ground bin. Latent channels:
///   0  fraction of such columns in the block
///   1  row centroid offset from the block center, in half-block units
///   2  column centroid offset, same units
///   3  highest point in the block, (z - z_min) / (z_max - z_min); 0 if empty
/// Decoding fills the ground bin of every non-empty block and a disc of the
/// same column count around the centroid from the ground up to the top
/// height, squashed through a logistic so values stay in (0, 1).
class ColumnCodec : public LatentCodec {
 public:
  explicit ColumnCodec(ColumnCodecConfig cfg);
  static ColumnCodec load(const std::filesystem::path& manifest);
  void save(const std::filesystem::path& manifest) const override;
  const ColumnCodecConfig& config() const { return cfg_; }

  /// Throws ShapeError unless the grid matches the grid spec (n_z + 2 channels).
  BevLatent encode(const HwcArray& grid) const override;
  using LatentCodec::encode;
  HwcArray decode(const BevLatent& latent) const override;

 private:
  ColumnCodecConfig cfg_;
};

struct CodecFitOptions {
  int steps = 200;
  double lr = 0.01;
  std::uint64_t seed = 0;
};

/// Fits encoder and decoder jointly by Adam on the occupancy loss of
/// decode(encode(grid)) against each grid's occupancy channels, cycling
/// through `grids`. Returns the loss per step.
std::vector<double> fit_codec(BevCodec& codec, const std::vector<HwcArray>& grids, const CodecFitOptions& opts);

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
double occupancy_loss(const HwcArray& pred, const HwcArray& target);
ad::Tensor occupancy_loss(const ad::Tensor& pred, const ad::Tensor& target);

}  // namespace dscene
