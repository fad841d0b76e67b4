#include "dscene/stdit.hpp"

#include <cmath>
#include <numbers>

#include "dscene/error.hpp"
#include "dscene/flow.hpp"
#include "dscene/strided_net.hpp"

namespace dscene {

namespace {

std::string block_prefix(std::size_t i) { return "blk" + std::to_string(i) + "."; }

void add_linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
                bool zero) {
  if (zero) {
    store.add_zeros(name, {in, out});
  } else {
    store.add_uniform(name, {in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng);
  }
}

ad::Tensor split_heads(const ad::Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t d = x.dim(2);
  auto y = ad::reshape(x, {b, n, heads, d / heads});
  y = ad::permute(y, {0, 2, 1, 3});
  return ad::reshape(y, {b * heads, n, d / heads});
}

ad::Tensor merge_heads(const ad::Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0) / heads;
  const std::size_t n = x.dim(1);
  const std::size_t dh = x.dim(2);
  auto y = ad::reshape(x, {b, heads, n, dh});
  y = ad::permute(y, {0, 2, 1, 3});
  return ad::reshape(y, {b, n, heads * dh});
}

/// [1, D] token repeated over a batch: [B, 1, D].
ad::Tensor tile_rows(const ad::Tensor& row, std::size_t batch) {
  const std::size_t n = row.size();
  const auto ones = row.tape().filled({batch, 1}, 1.0);
  return ad::matmul(ones, ad::reshape(row, {1, n}));
}

void require_rank(const ad::Tensor& t, std::size_t rank, const char* what) {
  if (!t.valid() || t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     (t.valid() ? ad::shape_str(t.shape()) : std::string("<absent>")));
  }
}

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(got) + ", expected " + std::to_string(want));
  }
}

ad::Tensor self_attention_residual(const BoundParams& p, const std::string& prefix, std::size_t heads,
                                   const ad::Tensor& x) {
  const auto n = layer_norm(p, prefix + "ln.", x);
  return ad::add(x, attention(p, prefix, n, n, heads));
}

}  // namespace

void init_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t kv_dim,
                    std::mt19937_64& rng, bool zero_output) {
  add_linear(store, prefix + "wq", dim, dim, rng, false);
  add_linear(store, prefix + "wk", kv_dim, dim, rng, false);
  add_linear(store, prefix + "wv", kv_dim, dim, rng, false);
  add_linear(store, prefix + "wo", dim, dim, rng, zero_output);
  store.add_zeros(prefix + "bo", {dim});
}

void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + "g", {dim}, std::vector<double>(dim, 1.0));
  store.add_zeros(prefix + "b", {dim});
}

ad::Tensor layer_norm(const BoundParams& p, const std::string& prefix, const ad::Tensor& x) {
  return ad::layer_norm_lastdim(x, p[prefix + "g"], p[prefix + "b"]);
}

ad::Tensor attention(const BoundParams& p, const std::string& prefix, const ad::Tensor& q_in, const ad::Tensor& kv_in,
                     std::size_t heads, ad::Tensor* probs) {
  require_rank(q_in, 3, "attention queries");
  require_rank(kv_in, 3, "attention keys");
  require_dim(kv_in.dim(0), q_in.dim(0), "attention batch");
  const std::size_t dim = p[prefix + "wq"].dim(1);
  if (heads == 0 || dim % heads != 0) throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by heads");
  const auto q = split_heads(ad::matmul(q_in, p[prefix + "wq"]), heads);
  const auto k = split_heads(ad::matmul(kv_in, p[prefix + "wk"]), heads);
  const auto v = split_heads(ad::matmul(kv_in, p[prefix + "wv"]), heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim / heads));
  const auto a = ad::softmax_lastdim(ad::mul_scalar(ad::matmul(q, ad::transpose(k)), scale));
  if (probs) *probs = a;
  const auto o = merge_heads(ad::matmul(a, v), heads);
  return dense(o, p[prefix + "wo"], p[prefix + "bo"]);
}

void init_cam_block(ParameterStore& store, const std::string& prefix, const CamBlockConfig& cfg, std::mt19937_64& rng) {
  for (const char* s : {"spatial.", "view.", "temporal."}) {
    init_layer_norm(store, prefix + s + "ln.", cfg.dim);
    init_attention(store, prefix + s, cfg.dim, cfg.dim, rng, false);
  }
  add_linear(store, prefix + "mv.proj", cfg.control_dim, cfg.dim, rng, false);
  init_layer_norm(store, prefix + "mv.ln.", cfg.dim);
  init_attention(store, prefix + "mv.", cfg.dim, cfg.dim, rng, true);
  add_linear(store, prefix + "cond.cap", cfg.cap_dim, cfg.dim, rng, false);
  add_linear(store, prefix + "cond.zs", cfg.layout_dim, cfg.dim, rng, false);
  init_layer_norm(store, prefix + "cond.ln.", cfg.dim);
  init_attention(store, prefix + "cond.", cfg.dim, cfg.dim, rng, true);
  init_attention(store, prefix + "ctrl.", cfg.dim, cfg.dim, rng, true);
}

ad::Tensor stdit_block_cam_base(const BoundParams& p, const std::string& prefix, const CamBlockConfig& cfg,
                                const ad::Tensor& z) {
  require_rank(z, 4, "camera block input");
  require_dim(z.dim(3), cfg.dim, "camera block channels");
  const std::size_t f = z.dim(0);
  const std::size_t v = z.dim(1);
  const std::size_t t = z.dim(2);
  const std::size_t d = z.dim(3);
  // Spatial: sequences over T for each (f, v).
  auto x = ad::reshape(z, {f * v, t, d});
  x = self_attention_residual(p, prefix + "spatial.", cfg.heads, x);
  // Cross-view: sequences over V for each (f, t).
  auto y = ad::permute(ad::reshape(x, {f, v, t, d}), {0, 2, 1, 3});
  y = self_attention_residual(p, prefix + "view.", cfg.heads, ad::reshape(y, {f * t, v, d}));
  y = ad::permute(ad::reshape(y, {f, t, v, d}), {0, 2, 1, 3});
  // Temporal: sequences over F for each (v, t).
  auto w = ad::permute(y, {1, 2, 0, 3});
  w = self_attention_residual(p, prefix + "temporal.", cfg.heads, ad::reshape(w, {v * t, f, d}));
  return ad::permute(ad::reshape(w, {v, t, f, d}), {2, 0, 1, 3});
}

ad::Tensor stdit_block_cam(const BoundParams& p, const std::string& prefix, const CamBlockConfig& cfg,
                           const ad::Tensor& z, const ad::Tensor& m_v, const ConditionBundle& bundle) {
  const auto h_base = stdit_block_cam_base(p, prefix, cfg, z);
  const std::size_t f = z.dim(0);
  const std::size_t v = z.dim(1);
  const std::size_t t = z.dim(2);
  const std::size_t d = z.dim(3);
  const std::size_t fv = f * v;

  require_rank(m_v, 4, "control map embedding");
  require_dim(m_v.dim(0), f, "control map frames");
  require_dim(m_v.dim(1), v, "control map views");
  require_dim(m_v.dim(3), cfg.control_dim, "control map channels");
  require_rank(bundle.z_s, 4, "layout latent");
  require_dim(bundle.z_s.dim(0), f, "layout latent frames");
  require_dim(bundle.z_s.dim(1), v, "layout latent views");
  require_dim(bundle.z_s.dim(3), cfg.layout_dim, "layout latent channels");
  require_rank(bundle.e_cap, 1, "caption embedding");
  require_dim(bundle.e_cap.dim(0), cfg.cap_dim, "caption embedding");

  const auto zq = ad::reshape(z, {fv, t, d});
  const auto hq = ad::reshape(h_base, {fv, t, d});

  // Control-map modulation CrossAttn(z, M_v).
  const auto m_tok = ad::matmul(ad::reshape(m_v, {fv, m_v.dim(2), cfg.control_dim}), p[prefix + "mv.proj"]);
  const auto r_map = attention(p, prefix + "mv.", layer_norm(p, prefix + "mv.ln.", zq), m_tok, cfg.heads);

  // Caption / layout cross-attention with keys [e_cap, z_s].
  const auto cap = ad::matmul(ad::reshape(bundle.e_cap, {1, cfg.cap_dim}), p[prefix + "cond.cap"]);
  const auto cap_tok = ad::reshape(tile_rows(cap, fv), {fv, 1, d});
  const auto zs_tok =
      ad::matmul(ad::reshape(bundle.z_s, {fv, bundle.z_s.dim(2), cfg.layout_dim}), p[prefix + "cond.zs"]);
  const auto kv = ad::concat(cap_tok, zs_tok, 1);
  const auto r_cond = attention(p, prefix + "cond.", layer_norm(p, prefix + "cond.ln.", hq), kv, cfg.heads);

  // Control attention Attn(h_base, z_s).
  const auto r_ctrl = attention(p, prefix + "ctrl.", hq, zs_tok, cfg.heads);

  auto out = ad::add(ad::add(ad::add(hq, r_map), r_cond), r_ctrl);
  return ad::reshape(out, {f, v, t, d});
}

void init_lidar_block(ParameterStore& store, const std::string& prefix, const LidarBlockConfig& cfg,
                      std::mt19937_64& rng) {
  add_linear(store, prefix + "cross.cap", cfg.cap_dim, cfg.dim, rng, false);
  add_linear(store, prefix + "cross.box", cfg.box_dim, cfg.dim, rng, false);
  init_layer_norm(store, prefix + "cross.ln.", cfg.dim);
  init_attention(store, prefix + "cross.", cfg.dim, cfg.dim, rng, true);
  init_attention(store, prefix + "mhsa.", cfg.dim, cfg.dim, rng, false);
}

ad::Tensor temporal_mhsa(const BoundParams& p, const std::string& prefix, std::size_t heads, const ad::Tensor& z,
                         ad::Tensor* probs) {
  require_rank(z, 3, "temporal attention input");
  const auto x = ad::permute(z, {1, 0, 2});
  return ad::permute(attention(p, prefix, x, x, heads, probs), {1, 0, 2});
}

ad::Tensor stdit_block_lidar_base(const BoundParams& p, const std::string& prefix, const LidarBlockConfig& cfg,
                                  const ad::Tensor& z) {
  require_rank(z, 3, "lidar block input");
  require_dim(z.dim(2), cfg.dim, "lidar block channels");
  return ad::add(temporal_mhsa(p, prefix + "mhsa.", cfg.heads, z), z);
}

ad::Tensor stdit_block_lidar(const BoundParams& p, const std::string& prefix, const LidarBlockConfig& cfg,
                             const ad::Tensor& z, const ConditionBundle& bundle, const ad::Tensor& control) {
  require_rank(z, 3, "lidar block input");
  require_dim(z.dim(2), cfg.dim, "lidar block channels");
  require_rank(bundle.e_cap, 1, "caption embedding");
  require_dim(bundle.e_cap.dim(0), cfg.cap_dim, "caption embedding");
  const std::size_t f = z.dim(0);
  const std::size_t d = cfg.dim;

  const auto cap = ad::matmul(ad::reshape(bundle.e_cap, {1, cfg.cap_dim}), p[prefix + "cross.cap"]);
  auto kv = ad::reshape(tile_rows(cap, f), {f, 1, d});
  if (bundle.e_box.valid()) {
    require_rank(bundle.e_box, 2, "box embeddings");
    require_dim(bundle.e_box.dim(1), cfg.box_dim, "box embedding");
    const std::size_t nb = bundle.e_box.dim(0);
    if (nb > 0) {
      const auto boxes = ad::matmul(bundle.e_box, p[prefix + "cross.box"]);
      kv = ad::concat(kv, ad::reshape(tile_rows(boxes, f), {f, nb, d}), 1);
    }
  }
  const auto z1 = ad::add(z, attention(p, prefix + "cross.", layer_norm(p, prefix + "cross.ln.", z), kv, cfg.heads));
  auto out = ad::add(temporal_mhsa(p, prefix + "mhsa.", cfg.heads, z1), z1);
  if (control.valid()) {
    if (control.shape() != out.shape()) {
      throw ShapeError("lidar block: control residual " + ad::shape_str(control.shape()) + " vs hidden " +
                       ad::shape_str(out.shape()));
    }
    out = ad::add(out, control);
  }
  return out;
}

void init_controlnet(ParameterStore& store, const std::string& prefix, const ControlNetConfig& cfg,
                     std::mt19937_64& rng) {
  add_linear(store, prefix + "in.w", cfg.cond_dim, cfg.hidden, rng, false);
  store.add_zeros(prefix + "in.b", {cfg.hidden});
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    store.add_zeros(prefix + "out" + std::to_string(i) + ".w", {cfg.hidden, cfg.dim});
    store.add_zeros(prefix + "out" + std::to_string(i) + ".b", {cfg.dim});
  }
}

std::vector<ad::Tensor> controlnet_residuals(const BoundParams& p, const std::string& prefix,
                                             const ControlNetConfig& cfg, const ad::Tensor& cond) {
  require_rank(cond, 3, "control condition");
  require_dim(cond.dim(2), cfg.cond_dim, "control condition channels");
  const auto h = ad::relu(dense(cond, p[prefix + "in.w"], p[prefix + "in.b"]));
  std::vector<ad::Tensor> out;
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string o = prefix + "out" + std::to_string(i);
    out.push_back(dense(h, p[o + ".w"], p[o + ".b"]));
  }
  return out;
}

std::vector<double> time_embedding(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ValidationError("time embedding: dim must be even and positive");
  const std::size_t half = dim / 2;
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(100.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(2.0 * std::numbers::pi * t * freq * 10.0);
    e[half + i] = std::cos(2.0 * std::numbers::pi * t * freq * 10.0);
  }
  return e;
}

LidarDenoiser::LidarDenoiser(Config cfg, ParameterStore params) : cfg_(cfg), params_(std::move(params)) {
  params_.meta["model"] = "lidar-denoiser";
  params_.meta["latent_channels"] = std::to_string(cfg_.latent_channels);
  params_.meta["dim"] = std::to_string(cfg_.dim);
  params_.meta["heads"] = std::to_string(cfg_.heads);
  params_.meta["cap_dim"] = std::to_string(cfg_.cap_dim);
  params_.meta["box_dim"] = std::to_string(cfg_.box_dim);
  params_.meta["cond_dim"] = std::to_string(cfg_.cond_dim);
  params_.meta["n_blocks"] = std::to_string(cfg_.n_blocks);
}

LidarDenoiser LidarDenoiser::init(const Config& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterStore p;
  add_linear(p, "in.w", cfg.latent_channels, cfg.dim, rng, false);
  p.add_zeros("in.b", {cfg.dim});
  add_linear(p, "time.w", cfg.dim, cfg.dim, rng, false);
  p.add_zeros("time.b", {cfg.dim});
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) init_lidar_block(p, block_prefix(i), cfg.block(), rng);
  init_controlnet(p, "ctrl.", cfg.control(), rng);
  p.add_uniform("out.w", {cfg.dim, cfg.latent_channels}, 0.1, rng);
  p.add_zeros("out.b", {cfg.latent_channels});
  return LidarDenoiser(cfg, std::move(p));
}

LidarDenoiser LidarDenoiser::load(const std::filesystem::path& manifest) {
  ParameterStore p = load_params(manifest);
  const auto get = [&](const char* key) -> std::size_t {
    auto it = p.meta.find(key);
    if (it == p.meta.end()) throw FormatError(std::string("denoiser parameters lack meta field '") + key + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  if (p.meta.count("model") == 0 || p.meta.at("model") != "lidar-denoiser") {
    throw FormatError(manifest.string() + ": not a lidar-denoiser parameter file");
  }
  Config cfg{get("latent_channels"), get("dim"), get("heads"), get("cap_dim"),
             get("box_dim"),         get("cond_dim"), get("n_blocks")};
  const LidarDenoiser reference = init(cfg, 0);
  for (const auto& e : reference.params().entries()) {
    if (!p.contains(e.name) || p.get(e.name).shape != e.shape) {
      throw FormatError(manifest.string() + ": denoiser tensor '" + e.name + "' missing or misshapen");
    }
  }
  return LidarDenoiser(cfg, std::move(p));
}

void LidarDenoiser::save(const std::filesystem::path& manifest) const { save_params(manifest, params_); }

ad::Tensor LidarDenoiser::velocity(const BoundParams& p, const ad::Tensor& z, double t,
                                   const ConditionBundle& bundle) const {
  require_rank(z, 3, "denoiser input");
  require_dim(z.dim(2), cfg_.latent_channels, "denoiser input channels");
  auto h = dense(z, p["in.w"], p["in.b"]);
  const auto temb = z.tape().constant({1, cfg_.dim}, time_embedding(t, cfg_.dim));
  h = ad::add_bias(h, ad::reshape(dense(temb, p["time.w"], p["time.b"]), {cfg_.dim}));
  std::vector<ad::Tensor> residuals;
  if (bundle.bev_cond.valid()) residuals = controlnet_residuals(p, "ctrl.", cfg_.control(), bundle.bev_cond);
  for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
    h = stdit_block_lidar(p, block_prefix(i), cfg_.block(), h, bundle,
                          residuals.empty() ? ad::Tensor{} : residuals[i]);
  }
  return dense(h, p["out.w"], p["out.b"]);
}

std::vector<double> LidarDenoiser::sample(std::size_t frames, std::size_t tokens, int steps, std::uint64_t seed,
                                          const std::vector<double>& e_cap, const std::vector<double>& e_box,
                                          std::size_t n_box, const std::vector<double>& bev_cond) const {
  const std::size_t c = cfg_.latent_channels;
  if (e_cap.size() != cfg_.cap_dim) throw ShapeError("sample: caption embedding size mismatch");
  if (e_box.size() != n_box * cfg_.box_dim) throw ShapeError("sample: box embedding size mismatch");
  if (!bev_cond.empty() && bev_cond.size() != frames * tokens * cfg_.cond_dim) {
    throw ShapeError("sample: BEV condition size mismatch");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z1(frames * tokens * c);
  for (auto& v : z1) v = normal(rng);
  const VelocityFn fn = [&](const std::vector<double>& z, double t) {
    ad::Tape tape;
    const BoundParams p(params_, tape);
    ConditionBundle b;
    b.e_cap = tape.constant({cfg_.cap_dim}, e_cap);
    if (n_box > 0) b.e_box = tape.constant({n_box, cfg_.box_dim}, e_box);
    if (!bev_cond.empty()) b.bev_cond = tape.constant({frames, tokens, cfg_.cond_dim}, bev_cond);
    const auto v = velocity(p, tape.constant({frames, tokens, c}, z), t, b);
    return std::vector<double>(v.values().begin(), v.values().end());
  };
  return euler_sample(fn, std::move(z1), steps);
}

}  // namespace dscene
