#include "dscene/bev_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dscene/error.hpp"

namespace dscene {

namespace {

constexpr const char* kEnc = "enc.";
constexpr const char* kDec = "dec.";

ad::Tensor as_batch(ad::Tape& tape, const HwcArray& a) { return tape.constant({1, a.h, a.w, a.c}, a.data); }

HwcArray to_hwc(const ad::Tensor& t) {
  HwcArray out(t.dim(1), t.dim(2), t.dim(3));
  std::copy(t.values().begin(), t.values().end(), out.data.begin());
  return out;
}

std::size_t meta_size(const ParameterStore& p, const char* key) {
  auto it = p.meta.find(key);
  if (it == p.meta.end()) throw FormatError(std::string("codec parameters lack meta field '") + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

BevCodecConfig BevCodecConfig::for_spec(const BevGridSpec& spec, std::size_t hidden) {
  return BevCodecConfig{spec.nz() + 2, spec.nz(), hidden};
}

StridedEncoderConfig BevCodecConfig::encoder() const {
  return StridedEncoderConfig{in_channels, hidden, kBevLatentChannels, 3};
}

StridedDecoderConfig BevCodecConfig::decoder() const {
  return StridedDecoderConfig{kBevLatentChannels, hidden, n_z, 3, true};
}

BevCodec::BevCodec(BevCodecConfig cfg, ParameterStore params) : cfg_(cfg), params_(std::move(params)) {
  params_.meta["model"] = "bev-codec";
  params_.meta["in_channels"] = std::to_string(cfg_.in_channels);
  params_.meta["n_z"] = std::to_string(cfg_.n_z);
  params_.meta["hidden"] = std::to_string(cfg_.hidden);
}

BevCodec BevCodec::random(const BevCodecConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterStore p;
  init_encoder(p, kEnc, cfg.encoder(), rng);
  init_decoder(p, kDec, cfg.decoder(), rng);
  return BevCodec(cfg, std::move(p));
}

BevCodec BevCodec::zeros(const BevCodecConfig& cfg) {
  BevCodec c = random(cfg, 0);
  for (auto& e : c.params_.entries_mut()) std::fill(e.values.begin(), e.values.end(), 0.0);
  return c;
}

BevCodec BevCodec::load(const std::filesystem::path& manifest) {
  ParameterStore p = load_params(manifest);
  BevCodecConfig cfg{meta_size(p, "in_channels"), meta_size(p, "n_z"), meta_size(p, "hidden")};
  // Probe that every expected tensor is present with the right shape.
  BevCodec reference = random(cfg, 0);
  for (const auto& e : reference.params().entries()) {
    if (!p.contains(e.name) || p.get(e.name).shape != e.shape) {
      throw FormatError(manifest.string() + ": codec tensor '" + e.name + "' missing or misshapen");
    }
  }
  return BevCodec(cfg, std::move(p));
}

void BevCodec::save(const std::filesystem::path& manifest) const { save_params(manifest, params_); }

ad::Tensor BevCodec::encode(const BoundParams& p, const ad::Tensor& grid) const {
  return run_encoder(p, kEnc, cfg_.encoder(), grid);
}

ad::Tensor BevCodec::decode(const BoundParams& p, const ad::Tensor& latent) const {
  return run_decoder(p, kDec, cfg_.decoder(), latent);
}

BevLatent BevCodec::encode(const HwcArray& grid) const {
  if (grid.h % kBevDownsample != 0 || grid.w % kBevDownsample != 0) {
    throw ShapeError("encode_bev: grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w) +
                     " is not divisible by 8");
  }
  ad::Tape tape;
  BoundParams p(params_, tape);
  return BevLatent{to_hwc(encode(p, as_batch(tape, grid)))};
}

HwcArray BevCodec::decode(const BevLatent& latent) const {
  if (latent.values.c != kBevLatentChannels) {
    throw ShapeError("decode_bev: latent has " + std::to_string(latent.values.c) + " channels, expected 4");
  }
  ad::Tape tape;
  BoundParams p(params_, tape);
  return to_hwc(decode(p, as_batch(tape, latent.values)));
}

std::vector<double> fit_codec(BevCodec& codec, const std::vector<HwcArray>& grids, const CodecFitOptions& opts) {
  if (grids.empty()) throw ValidationError("fit_codec: no training grids");
  const std::size_t nz = codec.config().n_z;
  std::vector<HwcArray> targets;
  for (const auto& g : grids) {
    if (g.c != codec.config().in_channels) throw ShapeError("fit_codec: grid channel count mismatch");
    HwcArray t(g.h, g.w, nz);
    for (std::size_t i = 0; i < g.h; ++i)
      for (std::size_t j = 0; j < g.w; ++j)
        for (std::size_t k = 0; k < nz; ++k) t.at(i, j, k) = g.at(i, j, k);
    targets.push_back(std::move(t));
  }
  Adam adam(opts.lr);
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(std::max(opts.steps, 0)));
  for (int s = 0; s < opts.steps; ++s) {
    const std::size_t n = static_cast<std::size_t>(s) % grids.size();
    ad::Tape tape;
    BoundParams p(codec.params(), tape);
    auto occ = codec.decode(p, codec.encode(p, as_batch(tape, grids[n])));
    auto loss = occupancy_loss(occ, as_batch(tape, targets[n]));
    tape.backward(loss);
    curve.push_back(loss.item());
    adam.step(codec.params(), p);
  }
  return curve;
}

double occupancy_loss(const HwcArray& pred, const HwcArray& target) {
  if (!pred.same_shape(target)) throw ShapeError("occupancy_loss: shape mismatch");
  ad::Tape tape;
  return occupancy_loss(as_batch(tape, pred), as_batch(tape, target)).item();
}

ad::Tensor occupancy_loss(const ad::Tensor& pred, const ad::Tensor& target) {
  return ad::binary_cross_entropy(pred, target, 1e-7);
}

}  // namespace dscene

namespace dscene {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double meta_double(const ParameterStore& p, const char* key) {
  auto it = p.meta.find(key);
  if (it == p.meta.end()) throw FormatError(std::string("codec parameters lack meta field '") + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw FormatError(std::string("codec meta field '") + key + "' is not a number");
  }
}

}  // namespace

void ColumnCodecConfig::validate() const {
  spec.validate();
  if (spec.nx() % kBevDownsample != 0 || spec.ny() % kBevDownsample != 0) {
    throw ValidationError("column codec: grid dimensions must be divisible by 8");
  }
  if (!(ground_z >= spec.z_min && ground_z < spec.z_max)) {
    throw ValidationError("column codec: ground_z outside the vertical extent");
  }
  if (!(sharpness > 0.0)) throw ValidationError("column codec: sharpness must be positive");
}

std::size_t ColumnCodecConfig::ground_bin() const {
  return static_cast<std::size_t>(std::floor((ground_z - spec.z_min) / spec.cell_size_z()));
}

ColumnCodec::ColumnCodec(ColumnCodecConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void ColumnCodec::save(const std::filesystem::path& manifest) const {
  ParameterStore p;
  p.meta["model"] = "column-codec";
  const auto& s = cfg_.spec;
  p.meta["x_min"] = fmt_double(s.x_min);
  p.meta["x_max"] = fmt_double(s.x_max);
  p.meta["y_min"] = fmt_double(s.y_min);
  p.meta["y_max"] = fmt_double(s.y_max);
  p.meta["z_min"] = fmt_double(s.z_min);
  p.meta["z_max"] = fmt_double(s.z_max);
  p.meta["cell_size_xy"] = fmt_double(s.cell_size_xy);
  p.meta["n_z_bins"] = std::to_string(s.n_z_bins);
  p.add("ground_z", {1}, {cfg_.ground_z});
  p.add("sharpness", {1}, {cfg_.sharpness});
  save_params(manifest, p);
}

ColumnCodec ColumnCodec::load(const std::filesystem::path& manifest) {
  const ParameterStore p = load_params(manifest);
  auto it = p.meta.find("model");
  if (it == p.meta.end() || it->second != "column-codec") throw FormatError("not a column codec manifest");
  ColumnCodecConfig cfg;
  cfg.spec.x_min = meta_double(p, "x_min");
  cfg.spec.x_max = meta_double(p, "x_max");
  cfg.spec.y_min = meta_double(p, "y_min");
  cfg.spec.y_max = meta_double(p, "y_max");
  cfg.spec.z_min = meta_double(p, "z_min");
  cfg.spec.z_max = meta_double(p, "z_max");
  cfg.spec.cell_size_xy = meta_double(p, "cell_size_xy");
  cfg.spec.n_z_bins = static_cast<int>(meta_double(p, "n_z_bins"));
  cfg.ground_z = p.get("ground_z").values.at(0);
  cfg.sharpness = p.get("sharpness").values.at(0);
  return ColumnCodec(cfg);
}

BevLatent ColumnCodec::encode(const HwcArray& grid) const {
  const auto& s = cfg_.spec;
  const std::size_t nz = s.nz();
  if (grid.h != s.nx() || grid.w != s.ny() || grid.c != nz + 2) {
    throw ShapeError("column codec: grid shape does not match the grid spec");
  }
  const std::size_t g = cfg_.ground_bin();
  const std::size_t b = kBevDownsample;
  const double half = static_cast<double>(b) / 2.0;
  HwcArray lat(grid.h / b, grid.w / b, kBevLatentChannels);
  for (std::size_t bi = 0; bi < lat.h; ++bi) {
    for (std::size_t bj = 0; bj < lat.w; ++bj) {
      double n = 0.0, si = 0.0, sj = 0.0;
      bool any = false;
      double top = s.z_min;
      for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t c = 0; c < b; ++c) {
          const std::size_t i = bi * b + a, j = bj * b + c;
          bool occupied = false, above = false;
          for (std::size_t k = 0; k < nz; ++k) {
            if (grid.at(i, j, k) >= 0.5) {
              occupied = true;
              above = above || k > g;
            }
          }
          if (occupied) {
            any = true;
            top = std::max(top, grid.at(i, j, nz + 1));
          }
          if (above) {
            n += 1.0;
            si += static_cast<double>(a) + 0.5;
            sj += static_cast<double>(c) + 0.5;
          }
        }
      }
      lat.at(bi, bj, 0) = n / static_cast<double>(b * b);
      lat.at(bi, bj, 1) = n > 0.0 ? (si / n - half) / half : 0.0;
      lat.at(bi, bj, 2) = n > 0.0 ? (sj / n - half) / half : 0.0;
      // Strictly positive for any non-empty block so the decoder can tell.
      lat.at(bi, bj, 3) = any ? std::max((top - s.z_min) / (s.z_max - s.z_min), 1e-6) : 0.0;
    }
  }
  return BevLatent{std::move(lat)};
}

HwcArray ColumnCodec::decode(const BevLatent& latent) const {
  const auto& s = cfg_.spec;
  const std::size_t b = kBevDownsample;
  const auto& lat = latent.values;
  if (lat.c != kBevLatentChannels || lat.h * b != s.nx() || lat.w * b != s.ny()) {
    throw ShapeError("column codec: latent shape does not match the grid spec");
  }
  const std::size_t nz = s.nz();
  const std::size_t g = cfg_.ground_bin();
  const double kappa = cfg_.sharpness;
  const double off = logistic(-kappa), on = logistic(kappa);
  const double half = static_cast<double>(b) / 2.0;
  HwcArray occ(s.nx(), s.ny(), nz, off);
  for (std::size_t bi = 0; bi < lat.h; ++bi) {
    for (std::size_t bj = 0; bj < lat.w; ++bj) {
      const double top = std::clamp(lat.at(bi, bj, 3), 0.0, 1.0);
      if (!(top > 0.0)) continue;
      const double count = std::clamp(lat.at(bi, bj, 0), 0.0, 1.0) * static_cast<double>(b * b);
      const double ci = half + half * std::clamp(lat.at(bi, bj, 1), -1.0, 1.0);
      const double cj = half + half * std::clamp(lat.at(bi, bj, 2), -1.0, 1.0);
      const double radius = std::sqrt(count / std::numbers::pi);
      const double top_z = s.z_min + top * (s.z_max - s.z_min);
      const auto top_bin = std::min(nz - 1, static_cast<std::size_t>(std::max(
                                                0.0, std::floor((top_z - s.z_min) / s.cell_size_z()))));
      for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t c = 0; c < b; ++c) {
          const std::size_t i = bi * b + a, j = bj * b + c;
          occ.at(i, j, g) = on;
          if (count < 0.5) continue;
          const double di = static_cast<double>(a) + 0.5 - ci, dj = static_cast<double>(c) + 0.5 - cj;
          const double v = logistic(kappa * (radius - std::sqrt(di * di + dj * dj)));
          for (std::size_t k = g + 1; k <= top_bin; ++k) occ.at(i, j, k) = v;
        }
      }
    }
  }
  return occ;
}

std::unique_ptr<LatentCodec> load_codec(const std::filesystem::path& manifest) {
  const ParameterStore p = load_params(manifest);
  auto it = p.meta.find("model");
  if (it == p.meta.end()) throw FormatError("codec manifest lacks a model field");
  if (it->second == "column-codec") return std::make_unique<ColumnCodec>(ColumnCodec::load(manifest));
  if (it->second == "bev-codec") return std::make_unique<BevCodec>(BevCodec::load(manifest));
  throw FormatError("unknown codec model '" + it->second + "'");
}

}  // namespace dscene
