#include "dscene/bev_grid.hpp"

#include <cmath>
#include <string>

#include "dscene/error.hpp"

namespace dscene {

namespace {

std::size_t cell_count(double lo, double hi, double cell, const char* axis) {
  const double n = (hi - lo) / cell;
  const double r = std::round(n);
  if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, r)) {
    throw ValidationError(std::string("grid spec: ") + axis + " extent is not a whole number of cells");
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

void BevGridSpec::validate() const {
  for (double v : {x_min, x_max, y_min, y_max, z_min, z_max, cell_size_xy}) {
    if (!std::isfinite(v)) throw ValidationError("grid spec: non-finite bound");
  }
  if (!(x_min < x_max) || !(y_min < y_max) || !(z_min < z_max)) {
    throw ValidationError("grid spec: extents must be strictly ordered");
  }
  if (!(cell_size_xy > 0.0)) throw ValidationError("grid spec: cell_size_xy must be positive");
  if (n_z_bins < 1) throw ValidationError("grid spec: n_z_bins must be >= 1");
  cell_count(x_min, x_max, cell_size_xy, "x");
  cell_count(y_min, y_max, cell_size_xy, "y");
}

std::size_t BevGridSpec::nx() const { return cell_count(x_min, x_max, cell_size_xy, "x"); }
std::size_t BevGridSpec::ny() const { return cell_count(y_min, y_max, cell_size_xy, "y"); }

std::optional<std::array<std::size_t, 3>> BevGridSpec::cell_of(const Vec3& p) const {
  if (!(p.x() >= x_min && p.x() < x_max && p.y() >= y_min && p.y() < y_max && p.z() >= z_min && p.z() < z_max)) {
    return std::nullopt;
  }
  const double fi = std::floor((p.x() - x_min) / cell_size_xy);
  const double fj = std::floor((p.y() - y_min) / cell_size_xy);
  const double fk = std::floor((p.z() - z_min) / cell_size_z());
  // Division rounding can land a point just below the upper bound on index n.
  const auto clampi = [](double f, std::size_t n) {
    return std::min(static_cast<std::size_t>(std::max(f, 0.0)), n - 1);
  };
  return std::array<std::size_t, 3>{clampi(fi, nx()), clampi(fj, ny()), clampi(fk, nz())};
}

HwcArray BevFeatureGrid::occupancy() const {
  const std::size_t nz = spec.nz();
  HwcArray occ(values.h, values.w, nz);
  for (std::size_t i = 0; i < values.h; ++i)
    for (std::size_t j = 0; j < values.w; ++j)
      for (std::size_t k = 0; k < nz; ++k) occ.at(i, j, k) = values.at(i, j, k);
  return occ;
}

BevFeatureGrid voxelize(const PointCloud& cloud, const BevGridSpec& spec) {
  spec.validate();
  const std::size_t nz = spec.nz();
  BevFeatureGrid grid{spec, HwcArray(spec.nx(), spec.ny(), nz + 2)};
  std::vector<bool> seen(grid.values.h * grid.values.w, false);
  for (const auto& pf : cloud.points) {
    const Vec3 p = pf.cast<double>();
    const auto cell = spec.cell_of(p);
    if (!cell) continue;
    const auto [i, j, k] = *cell;
    grid.values.at(i, j, k) = 1.0;
    double& zlo = grid.values.at(i, j, nz);
    double& zhi = grid.values.at(i, j, nz + 1);
    const std::size_t col = i * grid.values.w + j;
    if (!seen[col]) {
      seen[col] = true;
      zlo = zhi = p.z();
    } else {
      zlo = std::min(zlo, p.z());
      zhi = std::max(zhi, p.z());
    }
  }
  return grid;
}

PointCloud postprocess_filter(const PointCloud& cloud, const HwcArray& occ, const BevGridSpec& spec,
                              double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("post-filter threshold must lie in [0, 1]");
  spec.validate();
  if (occ.h != spec.nx() || occ.w != spec.ny() || occ.c != spec.nz()) {
    throw ShapeError("post-filter: occupancy shape does not match grid spec");
  }
  PointCloud out;
  out.timestamp = cloud.timestamp;
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const auto cell = spec.cell_of(cloud.points[n].cast<double>());
    if (!cell) continue;
    if (occ.at((*cell)[0], (*cell)[1], (*cell)[2]) >= threshold) {
      out.points.push_back(cloud.points[n]);
      out.intensity.push_back(cloud.intensity[n]);
    }
  }
  return out;
}

}  // namespace dscene
