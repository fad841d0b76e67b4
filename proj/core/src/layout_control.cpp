#include "dscene/layout_control.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "dscene/error.hpp"

namespace dscene {

namespace {

using Vec2 = Eigen::Vector2d;

constexpr const char* kPrefix = "layout.";

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void put_max(HwcArray& img, long x, long y, std::size_t ch, double v) {
  if (x < 0 || y < 0 || x >= static_cast<long>(img.w) || y >= static_cast<long>(img.h)) return;
  double& dst = img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
  dst = std::max(dst, v);
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double s = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return (a + s * ab - p).norm();
}

/// One-pixel-wide anti-aliased segment in pixel coordinates (pixel (x, y)
/// covers [x, x+1) x [y, y+1)); coverage falls off linearly with the distance
/// from the pixel center and is quantized to 1/255.
void draw_segment(HwcArray& img, std::size_t ch, Vec2 a, Vec2 b) {
  // Clip to the image rectangle grown by one pixel (Liang-Barsky).
  const double lo[2] = {-1.0, -1.0};
  const double hi[2] = {static_cast<double>(img.w) + 1.0, static_cast<double>(img.h) + 1.0};
  double s0 = 0.0;
  double s1 = 1.0;
  const Vec2 d = b - a;
  for (int k = 0; k < 2; ++k) {
    if (d[k] == 0.0) {
      if (a[k] < lo[k] || a[k] > hi[k]) return;
      continue;
    }
    double ta = (lo[k] - a[k]) / d[k];
    double tb = (hi[k] - a[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    s0 = std::max(s0, ta);
    s1 = std::min(s1, tb);
  }
  if (s0 > s1) return;
  const Vec2 p0 = a + s0 * d;
  const Vec2 p1 = a + s1 * d;
  const long x0 = static_cast<long>(std::floor(std::min(p0.x(), p1.x()) - 1.0));
  const long x1 = static_cast<long>(std::ceil(std::max(p0.x(), p1.x()) + 1.0));
  const long y0 = static_cast<long>(std::floor(std::min(p0.y(), p1.y()) - 1.0));
  const long y1 = static_cast<long>(std::ceil(std::max(p0.y(), p1.y()) + 1.0));
  for (long y = std::max(y0, 0L); y <= std::min(y1, static_cast<long>(img.h) - 1); ++y) {
    for (long x = std::max(x0, 0L); x <= std::min(x1, static_cast<long>(img.w) - 1); ++x) {
      const double dist = segment_distance(Vec2(x + 0.5, y + 0.5), p0, p1);
      if (dist < 1.0) put_max(img, x, y, ch, quantize(1.0 - dist));
    }
  }
}

Vec2 to_pixel(const CameraIntrinsics& k, const Vec3& pc) {
  return Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
}

/// Camera-frame segment clipped to z >= near; nullopt when fully behind.
std::optional<std::array<Vec3, 2>> clip_near(Vec3 a, Vec3 b) {
  if (a.z() < kNearPlane && b.z() < kNearPlane) return std::nullopt;
  if (a.z() < kNearPlane) a = a + (kNearPlane - a.z()) / (b.z() - a.z()) * (b - a);
  if (b.z() < kNearPlane) b = b + (kNearPlane - b.z()) / (a.z() - b.z()) * (a - b);
  return std::array<Vec3, 2>{a, b};
}

void draw_world_segment(HwcArray& img, std::size_t ch, const CameraView& view, const Vec3& a, const Vec3& b) {
  const auto seg = clip_near(view.extrinsics.apply(a), view.extrinsics.apply(b));
  if (!seg) return;
  draw_segment(img, ch, to_pixel(view.intrinsics, (*seg)[0]), to_pixel(view.intrinsics, (*seg)[1]));
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

void fill_convex(HwcArray& img, std::size_t ch, const std::vector<Vec2>& hull) {
  if (hull.size() < 3) return;
  double xmin = hull[0].x();
  double xmax = xmin;
  double ymin = hull[0].y();
  double ymax = ymin;
  for (const auto& p : hull) {
    xmin = std::min(xmin, p.x());
    xmax = std::max(xmax, p.x());
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  const long x0 = std::max(0L, static_cast<long>(std::floor(std::max(xmin, -1.0))));
  const long x1 = std::min(static_cast<long>(img.w) - 1, static_cast<long>(std::ceil(std::min(xmax, 1e7))));
  const long y0 = std::max(0L, static_cast<long>(std::floor(std::max(ymin, -1.0))));
  const long y1 = std::min(static_cast<long>(img.h) - 1, static_cast<long>(std::ceil(std::min(ymax, 1e7))));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const Vec2 c(x + 0.5, y + 0.5);
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        inside = cross(hull[i], hull[(i + 1) % hull.size()], c) >= 0.0;
      }
      if (inside) put_max(img, x, y, ch, 1.0);
    }
  }
}

constexpr std::array<std::array<int, 2>, 12> kBoxEdges = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

void draw_box(HwcArray& img, const CameraView& view, const Box3& box) {
  std::array<Vec3, 8> cam;
  const auto corners = box.corners();
  for (std::size_t i = 0; i < 8; ++i) cam[i] = view.extrinsics.apply(corners[i]);
  // Vertices of the box clipped to z >= near: kept corners plus edge crossings.
  std::vector<Vec2> pts;
  for (const auto& c : cam)
    if (c.z() >= kNearPlane) pts.push_back(to_pixel(view.intrinsics, c));
  for (const auto& e : kBoxEdges) {
    const Vec3& a = cam[static_cast<std::size_t>(e[0])];
    const Vec3& b = cam[static_cast<std::size_t>(e[1])];
    if ((a.z() < kNearPlane) != (b.z() < kNearPlane)) {
      const Vec3 p = a + (kNearPlane - a.z()) / (b.z() - a.z()) * (b - a);
      pts.push_back(to_pixel(view.intrinsics, Vec3(p.x(), p.y(), kNearPlane)));
    }
  }
  fill_convex(img, kBoxChannel, convex_hull(std::move(pts)));
}

void check_skeleton(const Skeleton& s) {
  if (s.joints.size() != kNumJoints || s.visible.size() != kNumJoints) {
    throw ValidationError("skeleton has " + std::to_string(s.joints.size()) + " joints, expected " +
                          std::to_string(kNumJoints));
  }
}

void draw_skeletons(HwcArray& img, std::size_t ch, const std::vector<Skeleton>& skeletons, const CameraView& view) {
  for (const auto& s : skeletons) check_skeleton(s);
  for (const auto& s : skeletons) {
    for (const auto& limb : kSkeletonLimbs) {
      const auto a = static_cast<std::size_t>(limb[0]);
      const auto b = static_cast<std::size_t>(limb[1]);
      if (s.visible[a] && s.visible[b]) draw_world_segment(img, ch, view, s.joints[a], s.joints[b]);
    }
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      if (!s.visible[j]) continue;
      const Vec3 pc = view.extrinsics.apply(s.joints[j]);
      if (pc.z() < kNearPlane) continue;
      const Vec2 px = to_pixel(view.intrinsics, pc);
      if (!(std::abs(px.x()) < 1e7 && std::abs(px.y()) < 1e7)) continue;
      const long x = static_cast<long>(std::floor(px.x()));
      const long y = static_cast<long>(std::floor(px.y()));
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) put_max(img, x + dx, y + dy, ch, 1.0);
    }
  }
}

}  // namespace

ControlMap rasterize_layout(const SceneLayout& layout, const CameraView& view, int frame) {
  view.intrinsics.validate();
  ControlMap map{view.view_id, frame,
                 HwcArray(static_cast<std::size_t>(view.intrinsics.height),
                          static_cast<std::size_t>(view.intrinsics.width), kControlChannels)};
  for (const auto& lane : layout.lanes)
    for (std::size_t i = 0; i + 1 < lane.size(); ++i) draw_world_segment(map.channels, kLaneChannel, view, lane[i], lane[i + 1]);
  for (const auto& box : layout.boxes) draw_box(map.channels, view, box);
  draw_skeletons(map.channels, kSkeletonChannel, layout.skeletons, view);
  return map;
}

HwcArray pose_keypoints_channel(const std::vector<Skeleton>& skeletons, const CameraView& view) {
  view.intrinsics.validate();
  HwcArray img(static_cast<std::size_t>(view.intrinsics.height), static_cast<std::size_t>(view.intrinsics.width), 1);
  draw_skeletons(img, 0, skeletons, view);
  return img;
}

ControlMap rasterize_layout_bev(const SceneLayout& layout, const BevGridSpec& spec, int frame) {
  spec.validate();
  // Image row = x index, column = y index, matching the BEV grid layout.
  ControlMap map{-1, frame, HwcArray(spec.nx(), spec.ny(), kControlChannels)};
  const auto to_grid = [&](const Vec3& p) {
    return Vec2((p.y() - spec.y_min) / spec.cell_size_xy, (p.x() - spec.x_min) / spec.cell_size_xy);
  };
  for (const auto& lane : layout.lanes)
    for (std::size_t i = 0; i + 1 < lane.size(); ++i)
      draw_segment(map.channels, kLaneChannel, to_grid(lane[i]), to_grid(lane[i + 1]));
  for (const auto& box : layout.boxes) {
    const auto c = box.corners();
    fill_convex(map.channels, kBoxChannel, convex_hull({to_grid(c[0]), to_grid(c[1]), to_grid(c[2]), to_grid(c[3])}));
  }
  for (const auto& s : layout.skeletons) {
    check_skeleton(s);
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      if (!s.visible[j]) continue;
      const Vec2 g = to_grid(s.joints[j]);
      if (!(std::abs(g.x()) < 1e7 && std::abs(g.y()) < 1e7)) continue;
      put_max(map.channels, static_cast<long>(std::floor(g.x())), static_cast<long>(std::floor(g.y())),
              kSkeletonChannel, 1.0);
    }
  }
  return map;
}

HwcArray LayoutLatent::frame_slice(std::size_t fi) const {
  if (fi >= f) throw ValidationError("layout latent: frame " + std::to_string(fi) + " out of range");
  HwcArray out(h, w, c);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, j, ci) = at(fi, ci, i, j);
  return out;
}

LayoutEncoder::LayoutEncoder(Config cfg, ParameterStore params) : cfg_(cfg), params_(std::move(params)) {}

LayoutEncoder LayoutEncoder::random(const Config& cfg, std::uint64_t seed, bool zero_bias) {
  std::mt19937_64 rng(seed);
  ParameterStore p;
  init_encoder(p, kPrefix, cfg.encoder(), rng, zero_bias);
  return LayoutEncoder(cfg, std::move(p));
}

ad::Tensor LayoutEncoder::encode(const BoundParams& p, const ad::Tensor& frames) const {
  const auto z = run_encoder(p, kPrefix, cfg_.encoder(), frames);
  return ad::permute(z, {0, 3, 1, 2});
}

LayoutLatent LayoutEncoder::encode(const std::vector<ControlMap>& frames) const {
  if (frames.empty()) throw ValidationError("encode_layout: no frames");
  const HwcArray& first = frames.front().channels;
  std::vector<double> stacked;
  stacked.reserve(first.size() * frames.size());
  for (const auto& f : frames) {
    if (!f.channels.same_shape(first)) throw ShapeError("encode_layout: frames have inconsistent shapes");
    stacked.insert(stacked.end(), f.channels.data.begin(), f.channels.data.end());
  }
  ad::Tape tape;
  BoundParams p(params_, tape);
  const auto z = encode(p, tape.constant({frames.size(), first.h, first.w, first.c}, std::move(stacked)));
  LayoutLatent out{z.dim(0), z.dim(1), z.dim(2), z.dim(3), {}};
  out.values.assign(z.values().begin(), z.values().end());
  return out;
}

}  // namespace dscene
