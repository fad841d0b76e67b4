#include "dscene/flow.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dscene/error.hpp"

namespace dscene {

ad::Tensor rf_interpolate(const ad::Tensor& x0, const ad::Tensor& eps, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("rf_interpolate: t must lie in [0, 1]");
  if (x0.shape() != eps.shape()) {
    throw ShapeError("rf_interpolate: " + ad::shape_str(x0.shape()) + " vs " + ad::shape_str(eps.shape()));
  }
  return ad::add(ad::mul_scalar(x0, 1.0 - t), ad::mul_scalar(eps, t));
}

ad::Tensor rf_velocity_target(const ad::Tensor& x0, const ad::Tensor& eps) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("rf_velocity_target: " + ad::shape_str(x0.shape()) + " vs " + ad::shape_str(eps.shape()));
  }
  return ad::sub(eps, x0);
}

std::vector<double> euler_sample(const VelocityFn& velocity, std::vector<double> z, int n_steps) {
  if (n_steps < 1) throw ValidationError("euler_sample: n_steps must be >= 1");
  const double n = static_cast<double>(n_steps);
  const double h = 1.0 / n;
  for (int k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(n_steps - k) / n;
    const auto v = velocity(z, t);
    if (v.size() != z.size()) throw ShapeError("euler_sample: velocity size differs from state size");
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = z[i] - h * v[i];
  }
  return z;
}

ToyVelocityModel::ToyVelocityModel(std::size_t dim, int degree) : dim_(dim), degree_(degree) {
  if (dim == 0) throw ValidationError("toy flow: dim must be positive");
  if (degree < 0) throw ValidationError("toy flow: degree must be >= 0");
  const std::size_t k = static_cast<std::size_t>(degree) + 2;
  params_.add_zeros("a", {k, dim});
  params_.add_zeros("b", {k, dim});
  params_.meta["model"] = "toy-flow";
  params_.meta["dim"] = std::to_string(dim);
  params_.meta["degree"] = std::to_string(degree);
}

ToyVelocityModel::ToyVelocityModel(ParameterStore params)
    : dim_(params.get("a").shape.at(1)),
      degree_(static_cast<int>(params.get("a").shape.at(0)) - 2),
      params_(std::move(params)) {
  if (params_.get("b").shape != params_.get("a").shape) throw FormatError("toy flow: a and b shapes differ");
  if (degree_ < 0) throw FormatError("toy flow: parameter tensors need at least two rows");
}

std::vector<double> ToyVelocityModel::basis(double t) const {
  const double x = 2.0 * t - 1.0;
  std::vector<double> p(static_cast<std::size_t>(degree_) + 2);
  p[0] = 1.0;
  if (degree_ >= 1) p[1] = x;
  for (int n = 1; n < degree_; ++n) {
    const auto u = static_cast<std::size_t>(n);
    p[u + 1] = ((2.0 * n + 1.0) * x * p[u] - n * p[u - 1]) / (n + 1.0);
  }
  p.back() = 1.0 / t;
  return p;
}

ad::Tensor ToyVelocityModel::velocity(const BoundParams& p, const ad::Tensor& z, const std::vector<double>& t) const {
  if (z.rank() != 2 || z.dim(1) != dim_ || z.dim(0) != t.size()) {
    throw ShapeError("toy flow: state " + ad::shape_str(z.shape()) + " vs dim " + std::to_string(dim_) + " and " +
                     std::to_string(t.size()) + " times");
  }
  const std::size_t k = static_cast<std::size_t>(degree_) + 2;
  std::vector<double> rows;
  rows.reserve(t.size() * k);
  for (double ti : t) {
    const auto b = basis(ti);
    rows.insert(rows.end(), b.begin(), b.end());
  }
  const auto phi = z.tape().constant({t.size(), k}, std::move(rows));
  return ad::add(ad::mul(ad::matmul(phi, p["a"]), z), ad::matmul(phi, p["b"]));
}

std::vector<double> ToyVelocityModel::velocity(const std::vector<double>& z, double t) const {
  if (z.size() != dim_) throw ShapeError("toy flow: state size differs from model dim");
  const auto phi = basis(t);
  const auto& a = params_.get("a").values;
  const auto& b = params_.get("b").values;
  std::vector<double> v(dim_, 0.0);
  for (std::size_t d = 0; d < dim_; ++d) {
    double sa = 0.0;
    double sb = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) {
      sa += phi[k] * a[k * dim_ + d];
      sb += phi[k] * b[k * dim_ + d];
    }
    v[d] = sa * z[d] + sb;
  }
  return v;
}

std::vector<double> train_toy_flow(ToyVelocityModel& model, const std::vector<std::vector<double>>& dataset,
                                   const ToyFlowOptions& opts) {
  if (dataset.empty()) throw ValidationError("train_toy_flow: empty dataset");
  for (const auto& x : dataset)
    if (x.size() != model.dim()) throw ShapeError("train_toy_flow: sample size differs from model dim");
  if (opts.batch == 0) throw ValidationError("train_toy_flow: batch must be positive");
  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Adam adam(opts.lr);
  const std::size_t dim = model.dim();
  std::vector<double> curve;
  for (int s = 0; s < opts.steps; ++s) {
    std::vector<double> x0(opts.batch * dim);
    std::vector<double> eps(opts.batch * dim);
    std::vector<double> t(opts.batch);
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const auto& x = dataset[pick(rng)];
      for (std::size_t d = 0; d < dim; ++d) x0[b * dim + d] = x[d];
      for (std::size_t d = 0; d < dim; ++d) eps[b * dim + d] = normal(rng);
      t[b] = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    }
    ad::Tape tape;
    BoundParams p(model.params(), tape);
    const auto x0t = tape.constant({opts.batch, dim}, std::move(x0));
    const auto epst = tape.constant({opts.batch, dim}, std::move(eps));
    // Per-row interpolation z = (1 - t) x0 + t eps, written out since t varies by row.
    std::vector<double> zv(opts.batch * dim);
    for (std::size_t b = 0; b < opts.batch; ++b)
      for (std::size_t d = 0; d < dim; ++d)
        zv[b * dim + d] = (1.0 - t[b]) * x0t.values()[b * dim + d] + t[b] * epst.values()[b * dim + d];
    const auto z = tape.constant({opts.batch, dim}, std::move(zv));
    const auto v = model.velocity(p, z, t);
    const auto loss = ad::mean(ad::square(ad::sub(v, rf_velocity_target(x0t, epst))));
    tape.backward(loss);
    curve.push_back(loss.item());
    adam.set_lr(opts.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * s / std::max(opts.steps, 1))));
    adam.step(model.params(), p);
  }
  return curve;
}

}  // namespace dscene
