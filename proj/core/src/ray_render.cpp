#include "dscene/ray_render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "dscene/error.hpp"

namespace dscene {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Volume {
  std::array<double, 3> lo;
  std::array<double, 3> hi;
  std::array<double, 3> cell;
  std::array<long, 3> n;
};

Volume volume_of(const BevGridSpec& spec) {
  return Volume{{spec.x_min, spec.y_min, spec.z_min},
                {spec.x_max, spec.y_max, spec.z_max},
                {spec.cell_size_xy, spec.cell_size_xy, spec.cell_size_z()},
                {static_cast<long>(spec.nx()), static_cast<long>(spec.ny()), static_cast<long>(spec.nz())}};
}

/// Per-block flag: true when every cell is at or below the empty floor.
class BlockMask {
 public:
  BlockMask(const HwcArray& occ, const Volume& v, int block, double floor) : b_(block) {
    for (int a = 0; a < 3; ++a) nb_[a] = (v.n[a] + b_ - 1) / b_;
    empty_.assign(static_cast<std::size_t>(nb_[0] * nb_[1] * nb_[2]), 1);
    for (long i = 0; i < v.n[0]; ++i)
      for (long j = 0; j < v.n[1]; ++j)
        for (long k = 0; k < v.n[2]; ++k)
          if (occ.at(i, j, k) > floor) empty_[index({i, j, k})] = 0;
  }
  bool empty(const std::array<long, 3>& idx) const { return empty_[index(idx)] != 0; }

 private:
  std::size_t index(const std::array<long, 3>& idx) const {
    return static_cast<std::size_t>(((idx[0] / b_) * nb_[1] + idx[1] / b_) * nb_[2] + idx[2] / b_);
  }
  long b_;
  std::array<long, 3> nb_{};
  std::vector<char> empty_;
};

class Marcher {
 public:
  Marcher(const HwcArray& occ, const Volume& v, const BlockMask* mask, const RenderOptions& opts)
      : occ_(occ), v_(v), mask_(mask), opts_(opts) {}

  RayRender march(const Vec3& o, const Vec3& d, double max_t, std::uint64_t& visited) const {
    RayRender out;
    double t0 = 0.0;
    double t1 = max_t;
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 0.0) {
        if (o[a] < v_.lo[a] || o[a] >= v_.hi[a]) return out;
        continue;
      }
      double ta = (v_.lo[a] - o[a]) / d[a];
      double tb = (v_.hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (!(t0 < t1)) return out;

    std::array<long, 3> c0{};
    std::array<long, 3> idx{};
    std::array<long, 3> step{};
    std::array<long, 3> m{};
    std::array<double, 3> t_next{};
    for (int a = 0; a < 3; ++a) {
      const double p = o[a] + t0 * d[a];
      const double f = std::floor((p - v_.lo[a]) / v_.cell[a]);
      c0[a] = std::clamp(static_cast<long>(std::clamp(f, -1.0, static_cast<double>(v_.n[a]))), 0L, v_.n[a] - 1);
      idx[a] = c0[a];
      step[a] = d[a] > 0.0 ? 1 : (d[a] < 0.0 ? -1 : 0);
      t_next[a] = boundary(o, d, c0, step, a, 1);
    }

    double t_prev = t0;
    double trans = 1.0;
    double mass = 0.0;
    double moment = 0.0;
    const auto inside = [&] {
      for (int a = 0; a < 3; ++a)
        if (idx[a] < 0 || idx[a] >= v_.n[a]) return false;
      return true;
    };

    for (;;) {
      if (mask_ && mask_->empty(idx)) {
        // Jump to the event that carries the ray out of this block.
        int ea = -1;
        double te = kInf;
        long me = 0;
        for (int a = 0; a < 3; ++a) {
          if (step[a] == 0) continue;
          const long b = mask_block();
          const long blk = idx[a] / b;
          const long mx = step[a] > 0 ? std::min((blk + 1) * b, v_.n[a]) - c0[a] : c0[a] - blk * b + 1;
          const double t = boundary(o, d, c0, step, a, mx);
          if (t < te) {
            te = t;
            ea = a;
            me = mx;
          }
        }
        if (ea < 0 || te >= t1) break;
        for (int a = 0; a < 3; ++a) {
          if (step[a] == 0) continue;
          if (a == ea) {
            m[a] = me;
          } else {
            while (true) {
              const double t = boundary(o, d, c0, step, a, m[a] + 1);
              if (t < te || (t == te && a < ea)) {
                ++m[a];
              } else {
                break;
              }
            }
          }
          idx[a] = c0[a] + step[a] * m[a];
          t_next[a] = boundary(o, d, c0, step, a, m[a] + 1);
        }
        t_prev = std::max(t_prev, te);
        if (!inside()) break;
        continue;
      }

      ++visited;
      const double alpha = occ_.at(static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                                   static_cast<std::size_t>(idx[2]));
      int ea = 0;
      for (int a = 1; a < 3; ++a)
        if (t_next[a] < t_next[ea]) ea = a;
      const double te = t_next[ea];
      const double t_out = std::min(te, t1);
      if (alpha > opts_.empty_floor && t_out > t_prev) {
        const double w = alpha * trans;
        const double depth = 0.5 * (t_prev + t_out);
        const auto cell = static_cast<std::uint32_t>((idx[0] * v_.n[1] + idx[1]) * v_.n[2] + idx[2]);
        out.weights.push_back(CellWeight{cell, w, depth});
        mass += w;
        moment += w * depth;
        trans *= 1.0 - alpha;
        if (trans == 0.0) break;
      }
      if (te >= t1) break;
      ++m[ea];
      idx[ea] = c0[ea] + step[ea] * m[ea];
      t_next[ea] = boundary(o, d, c0, step, ea, m[ea] + 1);
      t_prev = std::max(t_prev, te);
      if (!inside()) break;
    }

    out.termination = mass;
    out.depth = mass > 0.0 ? moment / mass : 0.0;
    out.hit = mass >= opts_.miss_threshold;
    return out;
  }

 private:
  long mask_block() const { return opts_.block; }

  /// Time of the k-th boundary crossing (k >= 1) along axis a, in closed form
  /// so that every code path evaluates identical expressions.
  double boundary(const Vec3& o, const Vec3& d, const std::array<long, 3>& c0, const std::array<long, 3>& step, int a,
                  long k) const {
    if (step[a] == 0) return kInf;
    const long plane = step[a] > 0 ? c0[a] + k : c0[a] - k + 1;
    return (v_.lo[a] + static_cast<double>(plane) * v_.cell[a] - o[a]) / d[a];
  }

  const HwcArray& occ_;
  const Volume& v_;
  const BlockMask* mask_;
  const RenderOptions& opts_;
};

}  // namespace

void RayBatch::validate() const {
  if (origins.size() != directions.size()) throw ValidationError("ray batch: origin/direction count mismatch");
  if (!(max_t > 0.0)) throw ValidationError("ray batch: max_t must be positive");
  for (std::size_t n = 0; n < origins.size(); ++n) {
    if (!origins[n].allFinite() || !directions[n].allFinite()) throw ValidationError("ray batch: non-finite ray");
    if (std::abs(directions[n].norm() - 1.0) > 1e-9) throw ValidationError("ray batch: direction is not unit length");
  }
}

RayBatch rays_from_pattern(const Pose& sensor_to_grid, const LidarPattern& pattern) {
  pattern.validate();
  RayBatch rays;
  rays.max_t = pattern.max_range;
  rays.origins.reserve(pattern.ray_count());
  rays.directions.reserve(pattern.ray_count());
  for (std::size_t ring = 0; ring < pattern.elevations.size(); ++ring) {
    for (int a = 0; a < pattern.azimuth_count; ++a) {
      rays.origins.push_back(sensor_to_grid.translation());
      rays.directions.push_back(sensor_to_grid.rotation() * pattern.direction(ring, a));
    }
  }
  return rays;
}

RenderResult render_rays(const HwcArray& occ, const BevGridSpec& spec, const RayBatch& rays,
                         const RenderOptions& opts) {
  spec.validate();
  rays.validate();
  if (occ.h != spec.nx() || occ.w != spec.ny() || occ.c != spec.nz()) {
    throw ShapeError("render_rays: occupancy shape does not match grid spec");
  }
  if (opts.block < 1) throw ValidationError("render_rays: block size must be >= 1");
  const Volume v = volume_of(spec);
  std::optional<BlockMask> mask;
  if (opts.skip) mask.emplace(occ, v, opts.block, opts.empty_floor);
  const Marcher marcher(occ, v, mask ? &*mask : nullptr, opts);
  RenderResult res;
  res.rays.reserve(rays.size());
  for (std::size_t n = 0; n < rays.size(); ++n) {
    res.rays.push_back(marcher.march(rays.origins[n], rays.directions[n], rays.max_t, res.cells_visited));
  }
  return res;
}

double depth_l1_loss(const std::vector<double>& pred, const std::vector<double>& gt, const std::vector<bool>& valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size()) {
    throw ShapeError("depth_l1_loss: length mismatch");
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    acc += std::abs(pred[i] - gt[i]);
    ++n;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

double surface_reg_loss(const std::vector<std::vector<double>>& weights) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& ray : weights) {
    double mass = 0.0;
    for (double w : ray) {
      if (!(w >= 0.0)) throw ValidationError("surface_reg_loss: negative weight");
      mass += w;
    }
    if (mass <= 0.0) continue;
    double h = 0.0;
    for (double w : ray) {
      if (w > 0.0) {
        const double p = w / mass;
        h -= p * std::log(p);
      }
    }
    acc += std::max(h, 0.0);
    ++n;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

std::vector<std::vector<double>> weight_values(const RenderResult& r) {
  std::vector<std::vector<double>> out;
  out.reserve(r.rays.size());
  for (const auto& ray : r.rays) {
    std::vector<double> w;
    w.reserve(ray.weights.size());
    for (const auto& cw : ray.weights) w.push_back(cw.weight);
    out.push_back(std::move(w));
  }
  return out;
}

PointCloud reconstruct_from_occupancy(const HwcArray& occ, const BevGridSpec& spec, const Pose& sensor_to_grid,
                                      const LidarPattern& pattern, double threshold, bool skip) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("post-filter threshold must lie in [0, 1]");
  const RayBatch rays = rays_from_pattern(sensor_to_grid, pattern);
  RenderOptions opts;
  opts.skip = skip;
  opts.empty_floor = threshold;
  const RenderResult r = render_rays(occ, spec, rays, opts);
  PointCloud raw;
  for (std::size_t n = 0; n < rays.size(); ++n) {
    const auto& ray = r.rays[n];
    if (!ray.hit) continue;
    raw.push_back(rays.origins[n] + ray.depth * rays.directions[n], static_cast<float>(std::min(1.0, ray.termination)));
  }
  return postprocess_filter(raw, occ, spec, threshold);
}

PointCloud reconstruct_cloud(const LatentCodec& codec, const BevLatent& latent, const BevGridSpec& spec,
                             const Pose& sensor_to_grid, const LidarPattern& pattern, double threshold, bool skip) {
  return reconstruct_from_occupancy(codec.decode(latent), spec, sensor_to_grid, pattern, threshold, skip);
}

}  // namespace dscene
