#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dscene/params.hpp"
#include "dscene/tensor.hpp"

namespace dscene {

/// z_t = (1 - t) x0 + t eps.
ad::Tensor rf_interpolate(const ad::Tensor& x0, const ad::Tensor& eps, double t);
/// v = eps - x0.
ad::Tensor rf_velocity_target(const ad::Tensor& x0, const ad::Tensor& eps);

using VelocityFn = std::function<std::vector<double>(const std::vector<double>& z, double t)>;

/// Uniform Euler steps from t = 1 to t = 0: z <- z - h v(z, t), h = 1/n,
/// t_k = (n - k) / n.
std::vector<double> euler_sample(const VelocityFn& velocity, std::vector<double> z1, int n_steps);

/// Velocity model linear in its parameters:
///   v_d(z, t) = sum_{k<=degree} P_k(2t - 1) (a_kd z_d + b_kd) + (a_Kd z_d + b_Kd) / t
/// with P_k the Legendre polynomials and K = degree + 1. The 1/t row matches
/// the exact field of a point-mass target, (z - x0) / t; the polynomial rows
/// cover targets with spread, whose field stays bounded as t -> 0.
class ToyVelocityModel {
 public:
  ToyVelocityModel(std::size_t dim, int degree = 6);
  ToyVelocityModel(ParameterStore params);

  std::size_t dim() const { return dim_; }
  int degree() const { return degree_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }

  /// Rows of z (batch x dim) at per-row times t -> batch x dim velocities.
  ad::Tensor velocity(const BoundParams& p, const ad::Tensor& z, const std::vector<double>& t) const;
  /// Single state, for sampling.
  std::vector<double> velocity(const std::vector<double>& z, double t) const;

  /// Basis row P_0(2t - 1), ..., P_degree(2t - 1), 1 / t.
  std::vector<double> basis(double t) const;

 private:
  std::size_t dim_;
  int degree_;
  ParameterStore params_;
};

struct ToyFlowOptions {
  int steps = 2000;
  double lr = 0.1;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
};

/// Minimizes the mean squared error between model velocity and eps - x0 at
/// z_t, with x0 drawn from `dataset`, eps ~ N(0, I) and t ~ U[0.01, 1).
/// Adam with cosine learning-rate decay.
/// Returns the per-step loss.
std::vector<double> train_toy_flow(ToyVelocityModel& model, const std::vector<std::vector<double>>& dataset,
                                   const ToyFlowOptions& opts);

}  // namespace dscene
