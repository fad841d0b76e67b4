#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dscene/params.hpp"
#include "dscene/tensor.hpp"

namespace dscene {

/// Multi-head attention. q_in [B, Nq, D], kv_in [B, Nk, Dkv] -> [B, Nq, D].
/// Parameters under `prefix`: wq [D, D], wk [Dkv, D], wv [Dkv, D], wo [D, D],
/// bo [D]. When `probs` is given it receives the [B * heads, Nq, Nk]
/// attention probabilities.
ad::Tensor attention(const BoundParams& p, const std::string& prefix, const ad::Tensor& q_in, const ad::Tensor& kv_in,
                     std::size_t heads, ad::Tensor* probs = nullptr);
void init_attention(ParameterStore& store, const std::string& prefix, std::size_t dim, std::size_t kv_dim,
                    std::mt19937_64& rng, bool zero_output);
void init_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim);
ad::Tensor layer_norm(const BoundParams& p, const std::string& prefix, const ad::Tensor& x);

/// Conditioning inputs. Absent members are default-constructed (invalid)
/// tensors.
struct ConditionBundle {
  ad::Tensor e_cap;     // [cap_dim]
  ad::Tensor z_s;       // camera: [F, V, Ts, layout_dim]
  ad::Tensor e_box;     // lidar: [Nb, box_dim]
  ad::Tensor bev_cond;  // lidar control input: [F, T, cond_dim]
};

struct CamBlockConfig {
  std::size_t dim = 8;
  std::size_t heads = 2;
  std::size_t cap_dim = 16;
  std::size_t layout_dim = 4;
  std::size_t control_dim = 3;
};

/// Camera block on z [F, V, T, D]. Unconditioned path: pre-norm residual
/// self-attention over T (spatial), over V (cross-view, no positional terms)
/// and over F (temporal), giving h_base. Conditioning adds three residuals,
/// each with a zero-initialized output projection:
///   CrossAttn(z, M_v)                          control-map modulation
///   CrossAttn(q = LN(h_base), kv = [e_cap, z_s])
///   Attn(h_base, z_s)                          control attention
/// m_v is [F, V, Tm, control_dim].
void init_cam_block(ParameterStore& store, const std::string& prefix, const CamBlockConfig& cfg, std::mt19937_64& rng);
ad::Tensor stdit_block_cam(const BoundParams& p, const std::string& prefix, const CamBlockConfig& cfg,
                           const ad::Tensor& z, const ad::Tensor& m_v, const ConditionBundle& bundle);
ad::Tensor stdit_block_cam_base(const BoundParams& p, const std::string& prefix, const CamBlockConfig& cfg,
                                const ad::Tensor& z);

struct LidarBlockConfig {
  std::size_t dim = 8;
  std::size_t heads = 2;
  std::size_t cap_dim = 16;
  std::size_t box_dim = 8;
};

/// LiDAR block on z [F, T, D]:
///   z'   = z + CrossAttn(q = LN(z), kv = [e_cap, e_box])   (zero-init output)
///   zbar = MHSA_F(z') + z'                                  (attention over F per token)
/// plus `control` ([F, T, D]) when valid.
void init_lidar_block(ParameterStore& store, const std::string& prefix, const LidarBlockConfig& cfg,
                      std::mt19937_64& rng);
ad::Tensor stdit_block_lidar(const BoundParams& p, const std::string& prefix, const LidarBlockConfig& cfg,
                             const ad::Tensor& z, const ConditionBundle& bundle, const ad::Tensor& control = {});
/// The block without caption/box conditioning or control residual.
ad::Tensor stdit_block_lidar_base(const BoundParams& p, const std::string& prefix, const LidarBlockConfig& cfg,
                                  const ad::Tensor& z);
/// Temporal MHSA over F for z [F, T, D], without the residual.
ad::Tensor temporal_mhsa(const BoundParams& p, const std::string& prefix, std::size_t heads, const ad::Tensor& z,
                         ad::Tensor* probs = nullptr);

struct ControlNetConfig {
  std::size_t cond_dim = 8;
  std::size_t hidden = 8;
  std::size_t dim = 8;
  std::size_t n_blocks = 1;
};

/// residual_i = ReLU(cond W_in + b_in) W_out_i + b_out_i with W_out_i, b_out_i
/// zero-initialized. cond [F, T, cond_dim] -> n_blocks tensors [F, T, dim].
void init_controlnet(ParameterStore& store, const std::string& prefix, const ControlNetConfig& cfg,
                     std::mt19937_64& rng);
std::vector<ad::Tensor> controlnet_residuals(const BoundParams& p, const std::string& prefix,
                                             const ControlNetConfig& cfg, const ad::Tensor& cond);

/// Velocity network for BEV latents: tokens [F, T, 4] -> [F, T, 4], built
/// from an input projection, a sinusoidal time embedding, LiDAR blocks with
/// control residuals and a zero-initialized output projection.
class LidarDenoiser {
 public:
  struct Config {
    std::size_t latent_channels = 4;
    std::size_t dim = 16;
    std::size_t heads = 2;
    std::size_t cap_dim = 64;
    std::size_t box_dim = 8;
    std::size_t cond_dim = 7;
    std::size_t n_blocks = 2;

    LidarBlockConfig block() const { return {dim, heads, cap_dim, box_dim}; }
    ControlNetConfig control() const { return {cond_dim, dim, dim, n_blocks}; }
  };

  LidarDenoiser(Config cfg, ParameterStore params);
  static LidarDenoiser init(const Config& cfg, std::uint64_t seed);
  static LidarDenoiser load(const std::filesystem::path& manifest);
  void save(const std::filesystem::path& manifest) const;

  const Config& config() const { return cfg_; }
  const ParameterStore& params() const { return params_; }

  ad::Tensor velocity(const BoundParams& p, const ad::Tensor& z, double t, const ConditionBundle& bundle) const;
  /// Euler sampling from Gaussian noise with the given seed; cond tensors are
  /// plain arrays matching the bundle shapes (bev_cond may be empty).
  std::vector<double> sample(std::size_t frames, std::size_t tokens, int steps, std::uint64_t seed,
                             const std::vector<double>& e_cap, const std::vector<double>& e_box, std::size_t n_box,
                             const std::vector<double>& bev_cond) const;

 private:
  Config cfg_;
  ParameterStore params_;
};

/// Sinusoidal embedding of t in [0, 1], length dim (dim even).
std::vector<double> time_embedding(double t, std::size_t dim);

}  // namespace dscene
