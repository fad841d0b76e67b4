#include "dscene/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "dscene/bev_codec.hpp"
#include "dscene/datacrafter.hpp"
#include "dscene/error.hpp"
#include "dscene/io.hpp"
#include "dscene/layout_control.hpp"
#include "dscene/ray_render.hpp"
#include "dscene/stdit.hpp"
#include "json.hpp"

namespace dscene {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Each setter returns an error message, or nothing on success.
using Setter = std::function<std::optional<std::string>(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

std::optional<double> to_double(const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) return std::nullopt;
    return d;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<long long> to_int(const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) return std::nullopt;
    return i;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

template <class T>
Field int_field(std::string key, T RunConfig::*member, long long lo, long long hi) {
  return {key,
          [=](RunConfig& c, const std::string& v) -> std::optional<std::string> {
            const auto i = to_int(v);
            if (!i) return key + ": expected an integer, got '" + v + "'";
            if (*i < lo || *i > hi) {
              return key + ": " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
            }
            c.*member = static_cast<T>(*i);
            return std::nullopt;
          },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

// Nested members are reached through an accessor returning a reference.
template <class T, class Access>
Field nested_int(std::string key, Access access, long long lo, long long hi) {
  return {key,
          [=](RunConfig& c, const std::string& v) -> std::optional<std::string> {
            const auto i = to_int(v);
            if (!i) return key + ": expected an integer, got '" + v + "'";
            if (*i < lo || *i > hi) {
              return key + ": " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]";
            }
            access(c) = static_cast<T>(*i);
            return std::nullopt;
          },
          [=](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

enum class Bound { kClosed, kOpenLow, kAny };

template <class Access>
Field nested_double(std::string key, Access access, double lo, double hi, Bound bound = Bound::kClosed) {
  return {key,
          [=](RunConfig& c, const std::string& v) -> std::optional<std::string> {
            const auto d = to_double(v);
            if (!d) return key + ": expected a finite number, got '" + v + "'";
            const bool low_ok = bound == Bound::kAny || (bound == Bound::kOpenLow ? *d > lo : *d >= lo);
            const bool high_ok = bound == Bound::kAny || *d <= hi;
            if (!low_ok || !high_ok) {
              return key + ": " + v + " outside " + (bound == Bound::kOpenLow ? "(" : "[") + fmt(lo) + ", " + fmt(hi) +
                     "]";
            }
            access(c) = *d;
            return std::nullopt;
          },
          [=](const RunConfig& c) { return fmt(access(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   try {
                     std::size_t used = 0;
                     if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
                     c.seed = std::stoull(v, &used);
                     if (used != v.size()) throw std::invalid_argument(v);
                   } catch (const std::exception&) {
                     return "seed: expected a nonnegative integer, got '" + v + "'";
                   }
                   return std::nullopt;
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back(nested_int<int>("n_frames", [](RunConfig& c) -> int& { return c.scene.n_frames; }, 1, 1000));
    f.push_back(nested_int<int>("n_boxes", [](RunConfig& c) -> int& { return c.scene.n_boxes; }, 0, 64));
    f.push_back(nested_int<int>("n_lanes", [](RunConfig& c) -> int& { return c.scene.n_lanes; }, 0, 16));
    f.push_back(nested_int<int>("n_pedestrians", [](RunConfig& c) -> int& { return c.scene.n_pedestrians; }, 0, 32));
    f.push_back(nested_double("extent", [](RunConfig& c) -> double& { return c.scene.extent; }, 8.0, 51.2));
    f.push_back(nested_double("frame_period", [](RunConfig& c) -> double& { return c.scene.frame_period; }, 0.0, 10.0,
                              Bound::kOpenLow));
    f.push_back(nested_double("ego_speed", [](RunConfig& c) -> double& { return c.scene.ego_speed; }, 0.0, 40.0));
    f.push_back(nested_double("grid.x_min", [](RunConfig& c) -> double& { return c.grid.x_min; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.x_max", [](RunConfig& c) -> double& { return c.grid.x_max; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.y_min", [](RunConfig& c) -> double& { return c.grid.y_min; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.y_max", [](RunConfig& c) -> double& { return c.grid.y_max; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.z_min", [](RunConfig& c) -> double& { return c.grid.z_min; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.z_max", [](RunConfig& c) -> double& { return c.grid.z_max; }, 0, 0, Bound::kAny));
    f.push_back(nested_double("grid.cell_size", [](RunConfig& c) -> double& { return c.grid.cell_size_xy; }, 0.0, 100.0,
                              Bound::kOpenLow));
    f.push_back(nested_int<int>("grid.n_z", [](RunConfig& c) -> int& { return c.grid.n_z_bins; }, 1, 256));
    f.push_back(nested_int<int>("lidar.azimuths", [](RunConfig& c) -> int& { return c.lidar.azimuths; }, 1, 65536));
    f.push_back(nested_int<int>("lidar.rings", [](RunConfig& c) -> int& { return c.lidar.rings; }, 1, 512));
    f.push_back(nested_double("lidar.elev_min", [](RunConfig& c) -> double& { return c.lidar.elev_min_deg; }, -89.0, 89.0));
    f.push_back(nested_double("lidar.elev_max", [](RunConfig& c) -> double& { return c.lidar.elev_max_deg; }, -89.0, 89.0));
    f.push_back(nested_double("lidar.max_range", [](RunConfig& c) -> double& { return c.lidar.max_range; }, 0.0, 1000.0,
                              Bound::kOpenLow));
    f.push_back(int_field("rig.views", &RunConfig::n_views, 1, 16));
    f.push_back(nested_int<int>("rig.width", [](RunConfig& c) -> int& { return c.rig.width; }, 8, 4096));
    f.push_back(nested_int<int>("rig.height", [](RunConfig& c) -> int& { return c.rig.height; }, 8, 4096));
    f.push_back(nested_double("rig.fx", [](RunConfig& c) -> double& { return c.rig.fx; }, 0.0, 1e5, Bound::kOpenLow));
    f.push_back(nested_double("rig.fy", [](RunConfig& c) -> double& { return c.rig.fy; }, 0.0, 1e5, Bound::kOpenLow));
    f.push_back(nested_double("rig.mount_height", [](RunConfig& c) -> double& { return c.rig.mount_height; }, 0.0, 10.0));
    f.push_back(int_field("rig.feature_stride", &RunConfig::feature_stride, 1, 64));
    f.push_back(nested_double("depth.min", [](RunConfig& c) -> double& { return c.depth.d_min; }, 0.0, 1000.0,
                              Bound::kOpenLow));
    f.push_back(nested_double("depth.max", [](RunConfig& c) -> double& { return c.depth.d_max; }, 0.0, 1000.0,
                              Bound::kOpenLow));
    f.push_back(nested_int<int>("depth.bins", [](RunConfig& c) -> int& { return c.depth.n_bins; }, 1, 1024));
    f.push_back(int_field("flow.steps", &RunConfig::flow_steps, 1, 10000));
    f.push_back(nested_double("threshold.postfilter", [](RunConfig& c) -> double& { return c.postfilter_threshold; },
                              0.0, 1.0));
    f.push_back(nested_double("threshold.clip", [](RunConfig& c) -> double& { return c.clip_threshold; }, 0.0, 1.0));
    f.push_back(int_field("caption.dim", &RunConfig::caption_dim, 8, 4096));
    f.push_back({"codec",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   if (v.empty()) return "codec: expected 'column' or a codec manifest path";
                   c.codec = v;
                   return std::nullopt;
                 },
                 [](const RunConfig& c) { return c.codec; }});
    f.push_back({"model",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   c.model = v;
                   return std::nullopt;
                 },
                 [](const RunConfig& c) { return c.model; }});
    f.push_back({"out",
                 [](RunConfig& c, const std::string& v) -> std::optional<std::string> {
                   if (v.empty()) return "out: output directory must not be empty";
                   c.out = v;
                   return std::nullopt;
                 },
                 [](const RunConfig& c) { return c.out.string(); }});
    return f;
  }();
  return table;
}

void cross_checks(const RunConfig& c, std::vector<std::string>& errors) {
  const auto guard = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      errors.emplace_back(e.what());
    }
  };
  guard([&] {
    c.grid.validate();
    if (c.grid.nx() % kBevDownsample != 0 || c.grid.ny() % kBevDownsample != 0) {
      throw ValidationError("grid spec: cell counts must be divisible by 8");
    }
    ColumnCodecConfig{c.grid, -kLidarMountHeight}.validate();
  });
  guard([&] { c.scene.validate(); });
  if (c.lidar.rings > 1 && !(c.lidar.elev_min_deg < c.lidar.elev_max_deg)) {
    errors.emplace_back("lidar: elev_min must be below elev_max");
  }
  if (c.rig.width % c.feature_stride != 0 || c.rig.height % c.feature_stride != 0) {
    errors.emplace_back("rig: width and height must be divisible by rig.feature_stride");
  }
  guard([&] { c.depth.validate(); });
  const double rate = 1.0 / c.scene.frame_period;
  if (std::abs(rate - std::round(rate)) > 1e-9) {
    errors.emplace_back("frame_period: 1 / frame_period must be a whole number of Hz");
  } else if (c.scene.n_frames < 3 * static_cast<int>(std::round(rate)) + 1) {
    errors.emplace_back("n_frames: the 3 s horizon needs at least " +
                        std::to_string(3 * static_cast<int>(std::round(rate)) + 1) + " frames");
  }
}

// --- stage helpers ---------------------------------------------------------

std::string frame_name(const char* stem, std::size_t f, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, f, ext);
  return buf;
}

SceneLayout transform_layout(const SceneLayout& in, const Pose& pose) {
  const double dyaw = std::atan2(pose.rotation()(1, 0), pose.rotation()(0, 0));
  SceneLayout out = in;
  for (auto& lane : out.lanes)
    for (auto& p : lane) p = pose.apply(p);
  for (auto& s : out.skeletons)
    for (auto& j : s.joints) j = pose.apply(j);
  for (auto& b : out.boxes) {
    b.center = pose.apply(b.center);
    b.yaw += dyaw;
  }
  return out;
}

/// Soft one-bin-wide Gaussian around the true depth, or uniform if the pixel
/// sees nothing inside the binning range.
std::vector<double> depth_distribution(double depth, const DepthBinning& bins) {
  const auto n = static_cast<std::size_t>(bins.n_bins);
  std::vector<double> d(n, 1.0 / static_cast<double>(n));
  if (!std::isfinite(depth) || depth < bins.d_min || depth >= bins.d_max) return d;
  const double mu = (depth - bins.d_min) / bins.width() - 0.5;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = static_cast<double>(k) - mu;
    d[k] = std::exp(-0.5 * x * x);
    sum += d[k];
  }
  for (auto& v : d) v /= sum;
  return d;
}

ImageFeatureMap make_feature_map(const SceneLayout& world_layout, const CameraView& world_view,
                                 const ControlMap& control, int stride, const DepthBinning& bins) {
  const CameraView fview = downscale_view(world_view, stride);
  const auto h = static_cast<std::size_t>(fview.intrinsics.height);
  const auto w = static_cast<std::size_t>(fview.intrinsics.width);
  const auto s = static_cast<std::size_t>(stride);
  ImageFeatureMap fmap;
  fmap.view_id = world_view.view_id;
  fmap.features = HwcArray(h, w, kControlChannels);
  fmap.depth_dist = HwcArray(h, w, static_cast<std::size_t>(bins.n_bins));
  const double inv_area = 1.0 / static_cast<double>(s * s);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < kControlChannels; ++c) {
        double acc = 0.0;
        for (std::size_t a = 0; a < s; ++a)
          for (std::size_t b = 0; b < s; ++b) acc += control.channels.at(i * s + a, j * s + b, c);
        fmap.features.at(i, j, c) = acc * inv_area;
      }
      const double u = static_cast<double>(j) + 0.5, v = static_cast<double>(i) + 0.5;
      const Vec3 p0 = back_project(fview, u, v, 0.0);
      const Vec3 p1 = back_project(fview, u, v, 1.0);
      const double len = (p1 - p0).norm();
      const double t = intersect_scene(world_layout, p0, (p1 - p0) / len);
      const auto dist = depth_distribution(t / len, bins);
      for (std::size_t k = 0; k < dist.size(); ++k) fmap.depth_dist.at(i, j, k) = dist[k];
    }
  }
  return fmap;
}

std::vector<ViewCaption> caption_views(const SceneLayout& world_layout, const std::vector<CameraView>& views,
                                       const Pose& world_to_ego, const RunConfig& cfg) {
  static const char* kWeather[] = {"Sunny", "Cloudy", "Overcast"};
  SceneRecord scene;
  scene.time = "Daytime";
  scene.weather = kWeather[cfg.seed % 3];
  scene.road_type = "Urban Road";
  scene.road_surface = "Asphalt";
  const int lanes = cfg.scene.n_lanes;
  scene.lane = lanes == 0 ? "No visible sign" : lanes == 1 ? "Single Lane" : lanes == 2 ? "Dual Lane" : "Multi-Lane";
  scene.environment_type = "Urban Road";
  scene.surroundings = "open road with " + std::to_string(cfg.scene.n_lanes) + " lane markings";
  const int n = cfg.scene.n_boxes;
  scene.traffic = n == 0 ? "no vehicles" : n < 4 ? "light traffic" : n < 10 ? "moderate traffic" : "heavy traffic";

  const auto describe = [&](std::string_view what, const Vec3& world) {
    const Vec3 e = world_to_ego.apply(world);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s at (%.1f, %.1f) m from ego", std::string(what).c_str(), e.x(), e.y());
    return std::string(buf);
  };
  const auto bbox_of = [](const CameraView& view, const std::vector<Vec3>& pts) -> std::optional<std::array<double, 4>> {
    const double W = view.intrinsics.width, H = view.intrinsics.height;
    double x1 = 1e300, y1 = 1e300, x2 = -1e300, y2 = -1e300;
    const Mat3& r = view.extrinsics.rotation();
    const Vec3& t = view.extrinsics.translation();
    for (const auto& p : pts) {
      const Vec3 c = r * p + t;
      if (c.z() <= kNearPlane) return std::nullopt;
      const double u = view.intrinsics.fx * c.x() / c.z() + view.intrinsics.cx;
      const double v = view.intrinsics.fy * c.y() / c.z() + view.intrinsics.cy;
      x1 = std::min(x1, u);
      x2 = std::max(x2, u);
      y1 = std::min(y1, v);
      y2 = std::max(y2, v);
    }
    x1 = std::clamp(x1, 0.0, W);
    x2 = std::clamp(x2, 0.0, W);
    y1 = std::clamp(y1, 0.0, H);
    y2 = std::clamp(y2, 0.0, H);
    if (!(x1 < x2) || !(y1 < y2)) return std::nullopt;
    return std::array<double, 4>{x1, y1, x2, y2};
  };

  std::vector<ViewCaption> out;
  for (const auto& view : views) {
    std::vector<CaptionObject> objects;
    for (const auto& box : world_layout.boxes) {
      const auto corners = box.corners();
      if (auto bb = bbox_of(view, std::vector<Vec3>(corners.begin(), corners.end()))) {
        objects.push_back({std::string(category_name(box.category)), *bb, describe(category_name(box.category), box.center)});
      }
    }
    for (const auto& sk : world_layout.skeletons) {
      std::vector<Vec3> joints;
      for (std::size_t k = 0; k < sk.joints.size(); ++k)
        if (sk.visible.empty() || sk.visible[k]) joints.push_back(sk.joints[k]);
      if (joints.empty()) continue;
      if (auto bb = bbox_of(view, joints)) objects.push_back({"pedestrian", *bb, describe("pedestrian", joints.front())});
    }
    out.push_back({view.view_id, build_structured_caption(scene, std::move(objects))});
  }
  return out;
}

std::vector<double> box_embeddings(const SceneLayout& sensor_layout, std::size_t box_dim) {
  std::vector<double> e;
  for (const auto& b : sensor_layout.boxes) {
    const double feats[8] = {b.center.x() / 51.2, b.center.y() / 51.2, b.center.z() / 5.0, b.size.x() / 10.0,
                             b.size.y() / 10.0,   b.size.z() / 5.0,    std::sin(b.yaw),    std::cos(b.yaw)};
    for (std::size_t k = 0; k < box_dim; ++k) e.push_back(k < 8 ? feats[k] : 0.0);
  }
  return e;
}

HwcArray stack_rows(const std::vector<HwcArray>& frames) {
  const auto& first = frames.front();
  HwcArray out(first.h * frames.size(), first.w, first.c);
  std::size_t off = 0;
  for (const auto& f : frames) {
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += f.data.size();
  }
  return out;
}

HwcArray row_block(const HwcArray& stacked, std::size_t index, std::size_t h) {
  HwcArray out(h, stacked.w, stacked.c);
  const std::size_t n = out.data.size();
  std::copy(stacked.data.begin() + static_cast<std::ptrdiff_t>(index * n),
            stacked.data.begin() + static_cast<std::ptrdiff_t>((index + 1) * n), out.data.begin());
  return out;
}

std::unique_ptr<LatentCodec> make_codec(const RunConfig& cfg) {
  if (cfg.codec == "column") return std::make_unique<ColumnCodec>(ColumnCodecConfig{cfg.grid, -kLidarMountHeight});
  return load_codec(cfg.codec);
}

}  // namespace

LidarPattern LidarConfig::pattern() const {
  LidarPattern p;
  p.azimuth_count = azimuths;
  p.max_range = max_range;
  for (int i = 0; i < rings; ++i) {
    const double deg = rings == 1 ? elev_min_deg : elev_min_deg + (elev_max_deg - elev_min_deg) * i / (rings - 1);
    p.elevations.push_back(deg * kDegToRad);
  }
  p.validate();
  return p;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& f : fields()) s += f.key + " = " + f.get(*this) + "\n";
  return s;
}

ConfigResult validate_config(std::string_view text) {
  ConfigResult r;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      r.errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      r.warnings.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "' ignored");
      continue;
    }
    if (auto err = it->second->set(r.config, value)) r.errors.push_back(*err);
  }
  cross_checks(r.config, r.errors);
  return r;
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) j["artifacts"].push_back({{"stage", a.stage}, {"path", a.path}});
  j["metrics"] = {{"chamfer_1s", chamfer.at_1s},
                  {"chamfer_2s", chamfer.at_2s},
                  {"chamfer_3s", chamfer.at_3s},
                  {"convention", kChamferConvention}};
  j["metrics_path"] = metrics_path;
  return j.dump(2) + "\n";
}

// --- formats ---------------------------------------------------------------

std::string grid_spec_to_json(const BevGridSpec& s) {
  nlohmann::ordered_json j{{"x_min", s.x_min}, {"x_max", s.x_max}, {"y_min", s.y_min},
                           {"y_max", s.y_max}, {"z_min", s.z_min}, {"z_max", s.z_max},
                           {"cell_size_xy", s.cell_size_xy}, {"n_z_bins", s.n_z_bins}};
  return j.dump(2) + "\n";
}

BevGridSpec grid_spec_from_json(std::string_view text) {
  BevGridSpec s;
  try {
    const json j = json::parse(text);
    s.x_min = j.value("x_min", s.x_min);
    s.x_max = j.value("x_max", s.x_max);
    s.y_min = j.value("y_min", s.y_min);
    s.y_max = j.value("y_max", s.y_max);
    s.z_min = j.value("z_min", s.z_min);
    s.z_max = j.value("z_max", s.z_max);
    s.cell_size_xy = j.value("cell_size_xy", s.cell_size_xy);
    s.n_z_bins = j.value("n_z_bins", s.n_z_bins);
  } catch (const json::exception& e) {
    throw FormatError(std::string("grid spec JSON: ") + e.what());
  }
  s.validate();
  return s;
}

std::string pattern_to_json(const LidarPattern& p) {
  nlohmann::ordered_json j;
  j["azimuth_count"] = p.azimuth_count;
  j["elevations_deg"] = nlohmann::ordered_json::array();
  for (double e : p.elevations) j["elevations_deg"].push_back(e / kDegToRad);
  j["max_range"] = p.max_range;
  return j.dump(2) + "\n";
}

LidarPattern pattern_from_json(std::string_view text) {
  LidarPattern p;
  try {
    const json j = json::parse(text);
    p.azimuth_count = j.at("azimuth_count").get<int>();
    for (const auto& e : j.at("elevations_deg")) p.elevations.push_back(e.get<double>() * kDegToRad);
    p.max_range = j.at("max_range").get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("lidar pattern JSON: ") + e.what());
  }
  p.validate();
  return p;
}

void write_feature_map(const fs::path& manifest, const ImageFeatureMap& fmap, const DepthBinning& binning) {
  const std::string stem = manifest.stem().string();
  io::write_grid(manifest.parent_path() / (stem + "_features.gbv"), fmap.features);
  io::write_grid(manifest.parent_path() / (stem + "_depth.gbv"), fmap.depth_dist);
  nlohmann::ordered_json j;
  j["view_id"] = fmap.view_id;
  j["features"] = stem + "_features.gbv";
  j["depth_dist"] = stem + "_depth.gbv";
  j["depth_binning"] = {{"d_min", binning.d_min}, {"d_max", binning.d_max}, {"n_bins", binning.n_bins}};
  io::write_text(manifest, j.dump(2) + "\n");
}

ImageFeatureMap read_feature_map(const fs::path& manifest, DepthBinning* binning) {
  ImageFeatureMap fmap;
  DepthBinning b;
  try {
    const json j = json::parse(io::read_text(manifest));
    fmap.view_id = j.at("view_id").get<int>();
    const auto& db = j.at("depth_binning");
    b.d_min = db.at("d_min").get<double>();
    b.d_max = db.at("d_max").get<double>();
    b.n_bins = db.at("n_bins").get<int>();
    fmap.features = io::read_grid(manifest.parent_path() / j.at("features").get<std::string>());
    fmap.depth_dist = io::read_grid(manifest.parent_path() / j.at("depth_dist").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("feature map manifest: ") + e.what());
  }
  b.validate();
  // Stored as f32; renormalize so rows sum to 1 in double precision.
  const std::size_t n = fmap.depth_dist.c;
  for (std::size_t p = 0; p * n < fmap.depth_dist.data.size(); ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += fmap.depth_dist.data[p * n + k];
    if (s > 0.0)
      for (std::size_t k = 0; k < n; ++k) fmap.depth_dist.data[p * n + k] /= s;
  }
  fmap.validate(b);
  if (binning) *binning = b;
  return fmap;
}

void write_condition(const fs::path& dir, const SampleCondition& c) {
  fs::create_directories(dir);
  nlohmann::ordered_json j{{"frames", c.frames}, {"height", c.height}, {"width", c.width},
                           {"n_box", c.n_box},   {"box_dim", c.box_dim}};
  io::write_text(dir / "cond.json", j.dump(2) + "\n");
  HwcArray cap(1, c.e_cap.size(), 1);
  cap.data = c.e_cap;
  io::write_grid(dir / "e_cap.gbv", cap);
  HwcArray box(c.n_box, c.box_dim, 1);
  box.data = c.e_box;
  io::write_grid(dir / "e_box.gbv", box);
  io::write_grid(dir / "bev_cond.gbv", c.bev_cond);
}

SampleCondition read_condition(const fs::path& dir) {
  SampleCondition c;
  try {
    const json j = json::parse(io::read_text(dir / "cond.json"));
    c.frames = j.at("frames").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.n_box = j.at("n_box").get<std::size_t>();
    c.box_dim = j.value("box_dim", std::size_t{8});
  } catch (const json::exception& e) {
    throw FormatError(std::string("condition manifest: ") + e.what());
  }
  c.e_cap = io::read_grid(dir / "e_cap.gbv").data;
  c.e_box = io::read_grid(dir / "e_box.gbv").data;
  c.bev_cond = io::read_grid(dir / "bev_cond.gbv");
  if (c.e_box.size() != c.n_box * c.box_dim) throw ShapeError("condition: e_box size does not match n_box");
  if (c.bev_cond.size() != 0 && (c.bev_cond.h != c.frames * c.height || c.bev_cond.w != c.width)) {
    throw ShapeError("condition: bev_cond shape does not match frames x height x width");
  }
  return c;
}

std::vector<PointCloud> read_cloud_sequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".gpc") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<PointCloud> out;
  for (const auto& f : files) out.push_back(io::read_cloud(f));
  return out;
}

CameraView reframe_view(const CameraView& view, const Pose& frame_to_world) {
  CameraView out = view;
  out.extrinsics = view.extrinsics.compose(frame_to_world);
  return out;
}

CameraView downscale_view(const CameraView& view, int stride) {
  if (stride < 1) throw ValidationError("feature stride must be >= 1");
  auto& k = view.intrinsics;
  if (k.width % stride != 0 || k.height % stride != 0) {
    throw ValidationError("feature stride must divide the image size");
  }
  CameraView out = view;
  const double s = stride;
  out.intrinsics = {k.fx / s, k.fy / s, k.cx / s, k.cy / s, k.width / stride, k.height / stride};
  return out;
}

// --- pipeline --------------------------------------------------------------

RunManifest run_pipeline(const RunConfig& cfg, std::ostream* log) {
  {
    const ConfigResult check = validate_config(cfg.to_text());
    if (!check.ok()) {
      std::string msg = check.errors.front();
      for (std::size_t i = 1; i < check.errors.size(); ++i) msg += "; " + check.errors[i];
      throw ValidationError(msg);
    }
  }
  const fs::path out = cfg.out;
  RunManifest manifest;
  const auto record = [&](const char* stage, const fs::path& rel) {
    manifest.artifacts.push_back({stage, rel.generic_string()});
  };
  const auto write_grid = [&](const char* stage, const fs::path& rel, const HwcArray& g) {
    fs::create_directories((out / rel).parent_path());
    io::write_grid(out / rel, g);
    record(stage, rel);
  };
  const auto write_cloud = [&](const char* stage, const fs::path& rel, const PointCloud& c) {
    fs::create_directories((out / rel).parent_path());
    io::write_cloud(out / rel, c);
    record(stage, rel);
  };
  const auto write_text = [&](const char* stage, const fs::path& rel, const std::string& text) {
    fs::create_directories((out / rel).parent_path());
    io::write_text(out / rel, text);
    record(stage, rel);
  };
  const auto run_stage = [&](const char* name, auto&& body) {
    if (log) *log << "[stage] " << name << "\n";
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };

  try {
    fs::create_directories(out);
  } catch (const std::exception& e) {
    throw StageError("setup", e.what());
  }
  run_stage("setup", [&] { write_text("setup", "config.txt", cfg.to_text()); });

  const auto n_frames = static_cast<std::size_t>(cfg.scene.n_frames);
  const auto rate = static_cast<double>(std::lround(1.0 / cfg.scene.frame_period));
  const LidarPattern pattern = cfg.lidar.pattern();

  Scene scene;
  std::vector<CameraView> rig;
  std::vector<Pose> sensor_to_world;
  std::vector<PointCloud> gt;
  run_stage("synth", [&] {
    scene = gen_scene(cfg.seed, cfg.scene);
    rig = gen_rig(cfg.n_views, cfg.rig);
    write_text("synth", "synth/layout.json", layout_to_json(scene.layout));
    write_text("synth", "synth/trajectory.json", trajectory_to_json(scene.trajectory));
    write_text("synth", "synth/calibration.json", io::calibration_to_json(rig));
    write_text("synth", "synth/pattern.json", pattern_to_json(pattern));
    write_text("synth", "synth/grid_spec.json", grid_spec_to_json(cfg.grid));
    for (std::size_t f = 0; f < n_frames; ++f) {
      const Pose s2w = lidar_to_world(scene.trajectory.ego_to_world[f]);
      sensor_to_world.push_back(s2w);
      PointCloud c = transform_cloud(s2w.inverse(), cast_rays(scene.layout, s2w, pattern));
      c.timestamp = static_cast<double>(f) * cfg.scene.frame_period;
      write_cloud("synth", fs::path("synth/frames") / frame_name("gt", f, ".gpc"), c);
      gt.push_back(std::move(c));
    }
  });

  std::vector<HwcArray> grids;
  run_stage("voxelize", [&] {
    for (std::size_t f = 0; f < n_frames; ++f) {
      grids.push_back(io::quantize_f32(voxelize(gt[f], cfg.grid).values));
      write_grid("voxelize", fs::path("voxelize") / frame_name("grid", f, ".gbv"), grids.back());
    }
  });

  std::unique_ptr<LatentCodec> codec;
  std::vector<BevLatent> latents;
  run_stage("encode", [&] {
    codec = make_codec(cfg);
    codec->save(out / "encode/codec.json");
    record("encode", "encode/codec.json");
    record("encode", "encode/codec.gbv");
    for (std::size_t f = 0; f < n_frames; ++f) {
      latents.push_back(BevLatent{io::quantize_f32(codec->encode(grids[f]).values)});
      write_grid("encode", fs::path("encode") / frame_name("latent", f, ".gbv"), latents.back().values);
    }
  });

  std::vector<std::vector<CameraView>> placed(n_frames);
  std::vector<std::vector<ControlMap>> controls(n_frames);
  std::vector<ControlMap> bev_layouts;
  std::vector<SceneLayout> sensor_layouts;
  run_stage("project", [&] {
    for (std::size_t f = 0; f < n_frames; ++f) {
      placed[f] = place_rig(rig, scene.trajectory.ego_to_world[f]);
      const fs::path dir = fs::path("project") / frame_name("frame", f, "");
      for (const auto& view : placed[f]) {
        controls[f].push_back(rasterize_layout(scene.layout, view, static_cast<int>(f)));
        write_grid("project", dir / ("view_" + std::to_string(view.view_id) + ".gbv"), controls[f].back().channels);
      }
      sensor_layouts.push_back(transform_layout(scene.layout, sensor_to_world[f].inverse()));
      bev_layouts.push_back(rasterize_layout_bev(sensor_layouts.back(), cfg.grid, static_cast<int>(f)));
      write_grid("project", fs::path("project") / frame_name("bev", f, ".gbv"), bev_layouts.back().channels);
    }
  });

  std::vector<HwcArray> img_bev;
  run_stage("splat", [&] {
    for (std::size_t f = 0; f < n_frames; ++f) {
      HwcArray acc(cfg.grid.nx(), cfg.grid.ny(), kControlChannels);
      const fs::path dir = fs::path("splat") / frame_name("frame", f, "");
      for (std::size_t v = 0; v < placed[f].size(); ++v) {
        const ImageFeatureMap fmap =
            make_feature_map(scene.layout, placed[f][v], controls[f][v], cfg.feature_stride, cfg.depth);
        const fs::path rel = dir / ("fmap_view_" + std::to_string(fmap.view_id) + ".json");
        fs::create_directories((out / rel).parent_path());
        write_feature_map(out / rel, fmap, cfg.depth);
        record("splat", rel);
        const CameraView sensor_view = downscale_view(reframe_view(placed[f][v], sensor_to_world[f]), cfg.feature_stride);
        const HwcArray bev = splat(lift(fmap, sensor_view, cfg.depth), cfg.grid);
        for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += bev.data[i];
      }
      img_bev.push_back(io::quantize_f32(mean_pool(acc, kBevDownsample)));
      write_grid("splat", fs::path("splat") / frame_name("img_bev", f, ".gbv"), img_bev.back());
    }
  });

  std::vector<double> e_cap;
  run_stage("caption", [&] {
    const auto views = caption_views(scene.layout, placed[0], scene.trajectory.ego_to_world[0].inverse(), cfg);
    json jv = json::array();
    for (const auto& v : views) jv.push_back({{"view_id", v.view_id}, {"caption", json::parse(caption_to_json(v.caption))}});
    write_text("caption", "caption/views.json", jv.dump(2) + "\n");
    const StructuredCaption fused = fuse_captions(views);
    write_text("caption", "caption/caption.json", caption_to_json(fused));
    e_cap = caption_embed(fused, cfg.caption_dim);

    double sharp = 0.0, lit = 0.0;
    for (const auto& cm : controls[0]) {
      sharp += sharpness_score(cm.channels);
      lit += std::any_of(cm.channels.data.begin(), cm.channels.data.end(), [](double x) { return x > 0.0; }) ? 1.0 : 0.0;
    }
    sharp /= static_cast<double>(controls[0].size());
    lit /= static_cast<double>(controls[0].size());
    const double structure = std::min(1.0, static_cast<double>(fused.objects.size()) / 8.0);
    const ClipScore score = score_clip({sharp, structure, lit});
    const std::string id = "clip_" + std::to_string(cfg.seed);
    const bool kept = !filter_clips({{id, score}}, cfg.clip_threshold).empty();
    nlohmann::ordered_json js{{"id", id},
                              {"q", {score.q_clarity, score.q_structure, score.q_aesthetics}},
                              {"lambdas", score.lambdas},
                              {"s", score.s},
                              {"tau", cfg.clip_threshold},
                              {"kept", kept}};
    write_text("caption", "caption/clip_score.json", js.dump(2) + "\n");
  });

  std::vector<BevLatent> sampled;
  run_stage("sample", [&] {
    const LayoutEncoder layout_enc = LayoutEncoder::random({}, cfg.seed ^ 0x6c61796f7574ULL);
    fs::create_directories(out / "sample");
    save_params(out / "sample/layout_encoder.json", layout_enc.params());
    record("sample", "sample/layout_encoder.json");
    record("sample", "sample/layout_encoder.gbv");
    const LayoutLatent z_s = layout_enc.encode(bev_layouts);

    LidarDenoiser::Config dcfg;
    dcfg.cap_dim = cfg.caption_dim;
    dcfg.cond_dim = kControlChannels + layout_enc.config().latent_channels;
    const LidarDenoiser denoiser =
        cfg.model.empty() ? LidarDenoiser::init(dcfg, cfg.seed ^ 0x64656e6f697365ULL) : LidarDenoiser::load(cfg.model);
    if (denoiser.config().cap_dim != cfg.caption_dim || denoiser.config().cond_dim != dcfg.cond_dim) {
      throw ShapeError("denoiser conditioning dimensions do not match the run config");
    }
    denoiser.save(out / "sample/denoiser.json");
    record("sample", "sample/denoiser.json");
    record("sample", "sample/denoiser.gbv");

    SampleCondition cond;
    cond.frames = n_frames;
    cond.height = cfg.grid.nx() / kBevDownsample;
    cond.width = cfg.grid.ny() / kBevDownsample;
    cond.box_dim = denoiser.config().box_dim;
    cond.n_box = sensor_layouts[0].boxes.size();
    cond.e_cap = e_cap;
    cond.e_box = box_embeddings(sensor_layouts[0], cond.box_dim);
    std::vector<HwcArray> per_frame;
    for (std::size_t f = 0; f < n_frames; ++f) per_frame.push_back(concat_bev_conditions(img_bev[f], z_s, f));
    cond.bev_cond = io::quantize_f32(stack_rows(per_frame));
    write_condition(out / "sample/cond", cond);
    for (const char* name : {"cond.json", "e_cap.gbv", "e_box.gbv", "bev_cond.gbv"}) {
      record("sample", fs::path("sample/cond") / name);
    }

    // Read back so the sampler sees exactly what a standalone run would.
    const SampleCondition c = read_condition(out / "sample/cond");
    const std::vector<double> z =
        denoiser.sample(c.frames, c.height * c.width, cfg.flow_steps, cfg.seed ^ 0x73616d706c65ULL, c.e_cap, c.e_box,
                        c.n_box, c.bev_cond.data);
    HwcArray stacked(c.frames * c.height, c.width, kBevLatentChannels);
    stacked.data = z;
    stacked = io::quantize_f32(std::move(stacked));
    write_grid("sample", "sample/latents.gbv", stacked);
    for (std::size_t f = 0; f < n_frames; ++f) sampled.push_back(BevLatent{row_block(stacked, f, c.height)});
  });

  std::vector<PointCloud> recon;
  run_stage("reconstruct", [&] {
    for (std::size_t f = 0; f < n_frames; ++f) {
      recon.push_back(
          reconstruct_cloud(*codec, latents[f], cfg.grid, Pose::identity(), pattern, cfg.postfilter_threshold));
      write_cloud("reconstruct", fs::path("reconstruct") / frame_name("recon", f, ".gpc"), recon.back());
      const PointCloud s =
          reconstruct_cloud(*codec, sampled[f], cfg.grid, Pose::identity(), pattern, cfg.postfilter_threshold);
      write_cloud("reconstruct", fs::path("reconstruct/sampled") / frame_name("sample", f, ".gpc"), s);
    }
  });

  run_stage("eval", [&] {
    manifest.chamfer = chamfer_horizons(recon, gt, rate, CropVolume{});
    write_text("eval", "eval/metrics.json", chamfer_report_json(manifest.chamfer));
    manifest.metrics_path = "eval/metrics.json";
  });

  run_stage("manifest", [&] { io::write_text(out / "manifest.json", manifest.to_json()); });
  return manifest;
}

}  // namespace dscene
