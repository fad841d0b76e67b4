#include "dscene/strided_net.hpp"

#include <cmath>

#include "dscene/error.hpp"

namespace dscene {

namespace {

std::string layer(const std::string& prefix, int k, const char* what) {
  return prefix + "l" + std::to_string(k) + "." + what;
}

void add_dense(ParameterStore& store, const std::string& wname, const std::string& bname, std::size_t in,
               std::size_t out, std::mt19937_64& rng, bool zero_bias) {
  const double scale = std::sqrt(6.0 / static_cast<double>(in + out));
  store.add_uniform(wname, {in, out}, scale, rng);
  if (zero_bias) {
    store.add_zeros(bname, {out});
  } else {
    store.add_uniform(bname, {out}, 0.1, rng);
  }
}

}  // namespace

ad::Tensor space_to_depth(const ad::Tensor& x) {
  if (x.rank() != 4) throw ShapeError("space_to_depth: expected [B, H, W, C], got " + ad::shape_str(x.shape()));
  const auto& s = x.shape();
  if (s[1] % 2 != 0 || s[2] % 2 != 0) throw ShapeError("space_to_depth: odd spatial dims in " + ad::shape_str(s));
  auto y = ad::reshape(x, {s[0], s[1] / 2, 2, s[2] / 2, 2, s[3]});
  y = ad::permute(y, {0, 1, 3, 2, 4, 5});
  return ad::reshape(y, {s[0], s[1] / 2, s[2] / 2, 4 * s[3]});
}

ad::Tensor depth_to_space(const ad::Tensor& x) {
  if (x.rank() != 4) throw ShapeError("depth_to_space: expected [B, h, w, 4C], got " + ad::shape_str(x.shape()));
  const auto& s = x.shape();
  if (s[3] % 4 != 0) throw ShapeError("depth_to_space: channel count not divisible by 4 in " + ad::shape_str(s));
  const std::size_t c = s[3] / 4;
  auto y = ad::reshape(x, {s[0], s[1], s[2], 2, 2, c});
  y = ad::permute(y, {0, 1, 3, 2, 4, 5});
  return ad::reshape(y, {s[0], 2 * s[1], 2 * s[2], c});
}

ad::Tensor dense(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add_bias(ad::matmul(x, w), b);
}

void init_encoder(ParameterStore& store, const std::string& prefix, const StridedEncoderConfig& cfg,
                  std::mt19937_64& rng, bool zero_bias) {
  std::size_t c = cfg.in_channels;
  for (int k = 0; k < cfg.levels; ++k) {
    add_dense(store, layer(prefix, k, "w"), layer(prefix, k, "b"), 4 * c, cfg.hidden, rng, zero_bias);
    c = cfg.hidden;
  }
  add_dense(store, prefix + "proj.w", prefix + "proj.b", c, cfg.out_channels, rng, zero_bias);
}

void init_decoder(ParameterStore& store, const std::string& prefix, const StridedDecoderConfig& cfg,
                  std::mt19937_64& rng, bool zero_bias) {
  add_dense(store, prefix + "in.w", prefix + "in.b", cfg.in_channels, cfg.hidden, rng, zero_bias);
  for (int k = 0; k < cfg.levels; ++k) {
    const std::size_t out = (k + 1 == cfg.levels) ? cfg.out_channels : cfg.hidden;
    add_dense(store, layer(prefix, k, "w"), layer(prefix, k, "b"), cfg.hidden, 4 * out, rng, zero_bias);
  }
}

ad::Tensor run_encoder(const BoundParams& p, const std::string& prefix, const StridedEncoderConfig& cfg,
                       const ad::Tensor& x) {
  if (x.rank() != 4 || x.dim(3) != cfg.in_channels) {
    throw ShapeError("encoder: expected [B, H, W, " + std::to_string(cfg.in_channels) + "], got " +
                     ad::shape_str(x.shape()));
  }
  const std::size_t f = cfg.factor();
  if (x.dim(1) % f != 0 || x.dim(2) % f != 0) {
    throw ShapeError("encoder: spatial dims " + ad::shape_str(x.shape()) + " not divisible by " + std::to_string(f));
  }
  ad::Tensor h = x;
  for (int k = 0; k < cfg.levels; ++k) {
    h = ad::relu(dense(space_to_depth(h), p[layer(prefix, k, "w")], p[layer(prefix, k, "b")]));
  }
  return dense(h, p[prefix + "proj.w"], p[prefix + "proj.b"]);
}

ad::Tensor run_decoder(const BoundParams& p, const std::string& prefix, const StridedDecoderConfig& cfg,
                       const ad::Tensor& z) {
  if (z.rank() != 4 || z.dim(3) != cfg.in_channels) {
    throw ShapeError("decoder: expected [B, h, w, " + std::to_string(cfg.in_channels) + "], got " +
                     ad::shape_str(z.shape()));
  }
  ad::Tensor h = ad::relu(dense(z, p[prefix + "in.w"], p[prefix + "in.b"]));
  for (int k = 0; k < cfg.levels; ++k) {
    h = depth_to_space(dense(h, p[layer(prefix, k, "w")], p[layer(prefix, k, "b")]));
    if (k + 1 < cfg.levels) h = ad::relu(h);
  }
  return cfg.sigmoid_output ? ad::sigmoid(h) : h;
}

}  // namespace dscene
