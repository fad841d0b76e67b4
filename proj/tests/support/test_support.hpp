#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dscene/array.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/geometry.hpp"
#include "dscene/ray_render.hpp"
#include "dscene/scene_synth.hpp"
#include "dscene/tensor.hpp"

namespace dscene::testing {

struct GradInput {
  ad::Shape shape;
  std::vector<double> values;
};

struct GradCheckResult {
  bool ok = true;
  double worst_ratio = 0.0;  // |analytic - numeric| / allowed, maximized
  std::string worst;
};

using GradBuilder = std::function<ad::Tensor(ad::Tape&, const std::vector<ad::Tensor>&)>;

/// Compares tape gradients of a scalar-valued builder against central finite
/// differences. Allowed error per entry: max(rel * max(|a|, |n|), abs_floor).
inline GradCheckResult gradcheck(const GradBuilder& build, const std::vector<GradInput>& inputs, double rel = 1e-4,
                                 double abs_floor = 1e-7, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Tensor> xs;
    for (const auto& in : inputs) xs.push_back(tape.leaf(in.shape, in.values));
    const ad::Tensor y = build(tape, xs);
    tape.backward(y);
    for (const auto& x : xs) analytic.emplace_back(x.grad().begin(), x.grad().end());
  }
  const auto eval = [&](std::size_t which, std::size_t idx, double delta) {
    ad::Tape tape;
    std::vector<ad::Tensor> xs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto v = inputs[k].values;
      if (k == which) v[idx] += delta;
      xs.push_back(tape.constant(inputs[k].shape, std::move(v)));
    }
    return build(tape, xs).item();
  };
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].values.size(); ++i) {
      const double num = (eval(k, i, h) - eval(k, i, -h)) / (2.0 * h);
      const double a = analytic[k][i];
      const double allowed = std::max(rel * std::max(std::abs(a), std::abs(num)), abs_floor);
      const double ratio = std::abs(a - num) / allowed;
      if (ratio > r.worst_ratio) {
        r.worst_ratio = ratio;
        r.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]: analytic " + std::to_string(a) +
                  " numeric " + std::to_string(num);
      }
      if (ratio > 1.0) r.ok = false;
    }
  }
  return r;
}

inline std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Values in [-hi, -lo] U [lo, hi]; keeps ReLU inputs away from the kink.
inline std::vector<double> away_from_zero(std::mt19937_64& rng, std::size_t n, double lo = 0.05, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(n);
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return v;
}

inline PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double extent = 10.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(Vec3(u(rng), u(rng), u(rng)));
  return c;
}

/// Small random grid spec: 8..24 cells per horizontal axis, 4..12 z bins.
inline BevGridSpec random_small_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(1, 3);
  std::uniform_int_distribution<int> nz(4, 12);
  std::uniform_real_distribution<double> off(-5.0, 5.0);
  BevGridSpec s;
  s.cell_size_xy = 0.5;
  s.x_min = std::round(off(rng));
  s.x_max = s.x_min + 4.0 * n(rng);
  s.y_min = std::round(off(rng));
  s.y_max = s.y_min + 4.0 * n(rng);
  s.z_min = -2.0;
  s.z_max = 2.0;
  s.n_z_bins = nz(rng);
  return s;
}

/// Occupancy with a few random boxes of nonzero cells; values in (0, 1],
/// roughly a third of them exactly 1.
inline HwcArray random_occupancy(std::mt19937_64& rng, const BevGridSpec& spec, int blobs = 4) {
  HwcArray occ(spec.nx(), spec.ny(), spec.nz());
  std::uniform_real_distribution<double> val(0.05, 1.0);
  std::bernoulli_distribution saturate(0.33);
  for (int b = 0; b < blobs; ++b) {
    std::uniform_int_distribution<std::size_t> pi(0, occ.h - 1), pj(0, occ.w - 1), pk(0, occ.c - 1);
    std::uniform_int_distribution<std::size_t> ext(1, 3);
    const std::size_t i0 = pi(rng), j0 = pj(rng), k0 = pk(rng);
    const std::size_t di = ext(rng), dj = ext(rng), dk = ext(rng);
    for (std::size_t i = i0; i < std::min(occ.h, i0 + di); ++i)
      for (std::size_t j = j0; j < std::min(occ.w, j0 + dj); ++j)
        for (std::size_t k = k0; k < std::min(occ.c, k0 + dk); ++k) occ.at(i, j, k) = saturate(rng) ? 1.0 : val(rng);
  }
  return occ;
}

/// Rays from inside or around the volume. About one in eight directions is
/// axis-aligned or lies in a coordinate plane.
inline RayBatch random_rays(std::mt19937_64& rng, const BevGridSpec& spec, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> axis(0, 2);
  RayBatch rays;
  rays.max_t = 100.0;
  const Vec3 lo(spec.x_min - 2, spec.y_min - 2, spec.z_min - 1);
  const Vec3 hi(spec.x_max + 2, spec.y_max + 2, spec.z_max + 1);
  for (std::size_t r = 0; r < n; ++r) {
    Vec3 o;
    for (int a = 0; a < 3; ++a) o[a] = lo[a] + (hi[a] - lo[a]) * u(rng);
    Vec3 d(g(rng), g(rng), g(rng));
    if (u(rng) < 0.125) {
      d[axis(rng)] = 0.0;
      if (u(rng) < 0.5) d[axis(rng)] = 0.0;
      if (d.norm() == 0.0) d = Vec3::UnitX();
    }
    rays.origins.push_back(o);
    rays.directions.push_back(d.normalized());
  }
  return rays;
}

/// Layout moved by the rigid motion p -> from_yaw(yaw, t) p. Boxes only carry
/// a yaw, so the motion is restricted to rotations about z.
inline SceneLayout transform_layout(const SceneLayout& layout, double yaw, const Vec3& t) {
  const Pose g = Pose::from_yaw(yaw, t);
  SceneLayout out = layout;
  for (auto& lane : out.lanes)
    for (auto& v : lane) v = g.apply(v);
  for (auto& s : out.skeletons)
    for (auto& j : s.joints) j = g.apply(j);
  for (auto& b : out.boxes) {
    b.center = g.apply(b.center);
    b.yaw += yaw;
  }
  return out;
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dscene_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dscene::testing
