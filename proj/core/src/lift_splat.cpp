#include "dscene/lift_splat.hpp"

#include <cmath>
#include <string>

#include "dscene/error.hpp"

namespace dscene {

void DepthBinning::validate() const {
  if (!(d_min > 0.0 && d_min < d_max)) throw ValidationError("depth binning: need 0 < d_min < d_max");
  if (n_bins < 1) throw ValidationError("depth binning: n_bins must be >= 1");
}

void ImageFeatureMap::validate(const DepthBinning& binning) const {
  binning.validate();
  if (features.h != depth_dist.h || features.w != depth_dist.w) {
    throw ShapeError("feature map: features and depth distribution differ in spatial size");
  }
  if (depth_dist.c != static_cast<std::size_t>(binning.n_bins)) {
    throw ShapeError("feature map: depth distribution has " + std::to_string(depth_dist.c) + " bins, binning has " +
                     std::to_string(binning.n_bins));
  }
  for (std::size_t i = 0; i < depth_dist.h; ++i) {
    for (std::size_t j = 0; j < depth_dist.w; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < depth_dist.c; ++k) {
        const double p = depth_dist.at(i, j, k);
        if (!(p >= 0.0)) throw ValidationError("feature map: negative depth probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-6) throw ValidationError("feature map: depth distribution does not sum to 1");
    }
  }
}

Frustum lift(const ImageFeatureMap& fmap, const CameraView& view, const DepthBinning& binning) {
  fmap.validate(binning);
  view.intrinsics.validate();
  const std::size_t nb = fmap.depth_dist.c;
  const std::size_t nf = fmap.features.c;
  Frustum out;
  out.feature_dim = nf;
  out.points.reserve(fmap.features.h * fmap.features.w * nb);
  out.features.reserve(fmap.features.h * fmap.features.w * nb * nf);
  for (std::size_t py = 0; py < fmap.features.h; ++py) {
    for (std::size_t px = 0; px < fmap.features.w; ++px) {
      const double u = static_cast<double>(px) + 0.5;
      const double v = static_cast<double>(py) + 0.5;
      for (std::size_t k = 0; k < nb; ++k) {
        out.points.push_back(back_project(view, u, v, binning.center(k)));
        const double p = fmap.depth_dist.at(py, px, k);
        for (std::size_t f = 0; f < nf; ++f) out.features.push_back(fmap.features.at(py, px, f) * p);
      }
    }
  }
  return out;
}

HwcArray splat(const Frustum& frustum, const BevGridSpec& spec) {
  spec.validate();
  const std::size_t nf = frustum.feature_dim;
  if (frustum.features.size() != frustum.points.size() * nf) throw ShapeError("splat: feature buffer size mismatch");
  HwcArray out(spec.nx(), spec.ny(), nf);
  for (std::size_t n = 0; n < frustum.size(); ++n) {
    const auto cell = spec.cell_of(frustum.points[n]);
    if (!cell) continue;
    for (std::size_t f = 0; f < nf; ++f) out.at((*cell)[0], (*cell)[1], f) += frustum.features[n * nf + f];
  }
  return out;
}

double in_volume_feature_sum(const Frustum& frustum, const BevGridSpec& spec) {
  const std::size_t nf = frustum.feature_dim;
  double s = 0.0;
  for (std::size_t n = 0; n < frustum.size(); ++n) {
    if (!spec.cell_of(frustum.points[n])) continue;
    for (std::size_t f = 0; f < nf; ++f) s += frustum.features[n * nf + f];
  }
  return s;
}

HwcArray mean_pool(const HwcArray& a, std::size_t factor) {
  if (factor == 0 || a.h % factor != 0 || a.w % factor != 0) {
    throw ShapeError("mean_pool: " + std::to_string(a.h) + "x" + std::to_string(a.w) + " not divisible by " +
                     std::to_string(factor));
  }
  HwcArray out(a.h / factor, a.w / factor, a.c);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t i = 0; i < a.h; ++i)
    for (std::size_t j = 0; j < a.w; ++j)
      for (std::size_t k = 0; k < a.c; ++k) out.at(i / factor, j / factor, k) += a.at(i, j, k);
  for (auto& v : out.data) v *= inv;
  return out;
}

HwcArray concat_bev_conditions(const HwcArray& img_bev, const HwcArray& layout_slice) {
  if (img_bev.h != layout_slice.h || img_bev.w != layout_slice.w) {
    throw ShapeError("concat_bev_conditions: spatial dims " + std::to_string(img_bev.h) + "x" +
                     std::to_string(img_bev.w) + " vs " + std::to_string(layout_slice.h) + "x" +
                     std::to_string(layout_slice.w));
  }
  HwcArray out(img_bev.h, img_bev.w, img_bev.c + layout_slice.c);
  for (std::size_t i = 0; i < out.h; ++i) {
    for (std::size_t j = 0; j < out.w; ++j) {
      for (std::size_t k = 0; k < img_bev.c; ++k) out.at(i, j, k) = img_bev.at(i, j, k);
      for (std::size_t k = 0; k < layout_slice.c; ++k) out.at(i, j, img_bev.c + k) = layout_slice.at(i, j, k);
    }
  }
  return out;
}

HwcArray concat_bev_conditions(const HwcArray& img_bev, const LayoutLatent& layout, std::size_t frame) {
  return concat_bev_conditions(img_bev, layout.frame_slice(frame));
}

}  // namespace dscene
