#include "dscene/datacrafter.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>

#include "dscene/error.hpp"
#include "json.hpp"

namespace dscene {

namespace {

using nlohmann::json;

const std::map<std::string, std::vector<std::string>, std::less<>>& option_table() {
  static const std::map<std::string, std::vector<std::string>, std::less<>> table = {
      {"time", {"Daytime", "Night", "Indoor", "No visible sign"}},
      {"weather", {"Sunny", "Cloudy", "Overcast", "Rain", "Snow", "Night with no visible sign"}},
      {"road_type", {"Highway", "Urban Road", "Rural Road", "Tunnel", "Bridge", "No visible sign"}},
      {"road_surface", {"Asphalt", "Concrete", "Gravel", "resin (Indoor)"}},
      {"lane", {"No visible sign", "Single Lane", "Dual Lane", "Multi-Lane", "Other"}},
      {"environment_type",
       {"Highway", "Roundabout", "Intersection", "Ramp", "Tunnel", "Parking Lot", "Urban Road", "Rural Road", "Bridge",
        "Other"}},
  };
  return table;
}

const std::vector<std::string> kSceneFields = {"time", "weather", "road_type", "road_surface", "lane",
                                               "environment_type", "surroundings", "traffic"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

json to_json(const StructuredCaption& c) {
  json scene = json::object();
  for (const auto& f : kSceneFields) scene[f] = scene_field(c.scene, f);
  json objects = json::array();
  for (const auto& o : c.objects) {
    objects.push_back({{"category", o.category}, {"bbox", o.bbox}, {"description", o.description}});
  }
  return json{{"scene", scene}, {"objects", objects}};
}

}  // namespace

ClipScore score_clip(const std::array<double, 3>& q, const std::array<double, 3>& lambdas) {
  for (double v : q) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("score_clip: subscore outside [0, 1]");
  }
  double sum = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ValidationError("score_clip: negative weight");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("score_clip: weights do not sum to 1");
  ClipScore s{q[0], q[1], q[2], lambdas, 0.0};
  s.s = lambdas[0] * q[0] + lambdas[1] * q[1] + lambdas[2] * q[2];
  return s;
}

std::vector<ScoredClip> filter_clips(const std::vector<ScoredClip>& clips, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("filter_clips: tau must lie in [0, 1]");
  std::vector<ScoredClip> out;
  std::copy_if(clips.begin(), clips.end(), std::back_inserter(out), [tau](const ScoredClip& c) { return c.score.s >= tau; });
  return out;
}

double sharpness_score(const HwcArray& image, double k) {
  if (!(k > 0.0)) throw ValidationError("sharpness_score: k must be positive");
  if (image.h < 2 || image.w < 2 || image.c == 0) return 0.0;
  const auto gray = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < image.c; ++c) s += image.at(i, j, c);
    return s / static_cast<double>(image.c);
  };
  double e = 0.0;
  for (std::size_t i = 0; i + 1 < image.h; ++i) {
    for (std::size_t j = 0; j + 1 < image.w; ++j) {
      const double g = gray(i, j);
      const double dx = gray(i, j + 1) - g;
      const double dy = gray(i + 1, j) - g;
      e += dx * dx + dy * dy;
    }
  }
  e /= static_cast<double>((image.h - 1) * (image.w - 1));
  return e / (e + k);
}

const std::vector<std::string>& caption_options(std::string_view field) {
  const auto& t = option_table();
  auto it = t.find(field);
  if (it == t.end()) throw ValidationError("caption: '" + std::string(field) + "' is not an enumerated field");
  return it->second;
}

const std::vector<std::string>& enum_fields() {
  static const std::vector<std::string> f(kSceneFields.begin(), kSceneFields.begin() + 6);
  return f;
}

const std::string& scene_field(const SceneRecord& r, std::string_view field) {
  return scene_field(const_cast<SceneRecord&>(r), field);
}

std::string& scene_field(SceneRecord& r, std::string_view field) {
  if (field == "time") return r.time;
  if (field == "weather") return r.weather;
  if (field == "road_type") return r.road_type;
  if (field == "road_surface") return r.road_surface;
  if (field == "lane") return r.lane;
  if (field == "environment_type") return r.environment_type;
  if (field == "surroundings") return r.surroundings;
  if (field == "traffic") return r.traffic;
  throw ValidationError("caption: unknown scene field '" + std::string(field) + "'");
}

void StructuredCaption::validate() const {
  for (const auto& f : enum_fields()) {
    const auto& opts = caption_options(f);
    const auto& v = scene_field(scene, f);
    if (std::find(opts.begin(), opts.end(), v) == opts.end()) {
      throw ValidationError("caption: scene." + f + " = \"" + v + "\" is not an allowed option");
    }
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    const std::string where = "caption: objects[" + std::to_string(i) + "]";
    if (o.category.empty()) throw ValidationError(where + ".category is empty");
    for (double v : o.bbox)
      if (!std::isfinite(v)) throw ValidationError(where + ".bbox has a non-finite coordinate");
    if (!(o.bbox[0] < o.bbox[2])) throw ValidationError(where + ".bbox has x1 >= x2");
    if (!(o.bbox[1] < o.bbox[3])) throw ValidationError(where + ".bbox has y1 >= y2");
  }
}

StructuredCaption build_structured_caption(SceneRecord scene, std::vector<CaptionObject> objects) {
  StructuredCaption c{std::move(scene), std::move(objects)};
  c.validate();
  return c;
}

StructuredCaption fuse_captions(std::vector<ViewCaption> views) {
  if (views.empty()) throw ValidationError("fuse_captions: no views");
  std::sort(views.begin(), views.end(), [](const ViewCaption& a, const ViewCaption& b) { return a.view_id < b.view_id; });
  for (std::size_t i = 1; i < views.size(); ++i) {
    if (views[i].view_id == views[i - 1].view_id) {
      throw ValidationError("fuse_captions: duplicate view_id " + std::to_string(views[i].view_id));
    }
  }
  StructuredCaption out;
  for (const auto& f : kSceneFields) {
    // Values in order of first appearance (lowest view_id first) with counts.
    std::vector<std::pair<std::string, int>> tally;
    for (const auto& v : views) {
      const auto& val = scene_field(v.caption.scene, f);
      auto it = std::find_if(tally.begin(), tally.end(), [&](const auto& p) { return p.first == val; });
      if (it == tally.end()) {
        tally.emplace_back(val, 1);
      } else {
        ++it->second;
      }
    }
    const auto best = std::max_element(tally.begin(), tally.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    scene_field(out.scene, f) = best->first;
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& v : views) {
    for (const auto& o : v.caption.objects) {
      if (seen.emplace(o.category, o.description).second) out.objects.push_back(o);
    }
  }
  out.validate();
  return out;
}

std::string caption_to_json(const StructuredCaption& caption) { return to_json(caption).dump(2) + "\n"; }

StructuredCaption caption_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("caption: ") + e.what());
  }
  StructuredCaption c;
  try {
    const auto& scene = j.at("scene");
    for (const auto& f : kSceneFields) scene_field(c.scene, f) = scene.at(f).get<std::string>();
    for (const auto& o : j.at("objects")) {
      CaptionObject obj;
      obj.category = o.at("category").get<std::string>();
      const auto& b = o.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ValidationError("caption: bbox must have four numbers");
      for (std::size_t i = 0; i < 4; ++i) obj.bbox[i] = b.at(i).get<double>();
      obj.description = o.at("description").get<std::string>();
      c.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("caption: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> caption_embed(const StructuredCaption& caption, std::size_t dim) {
  if (dim < 8) throw ValidationError("caption_embed: dim must be >= 8");
  std::vector<std::string> tokens;
  for (const auto& f : kSceneFields) {
    const auto& v = scene_field(caption.scene, f);
    tokens.push_back(f + "=" + v);
    for (auto& w : words(v)) tokens.push_back(f + ":" + w);
  }
  for (const auto& o : caption.objects) {
    tokens.push_back("object.category=" + o.category);
    for (auto& w : words(o.description)) tokens.push_back("object.description:" + w);
    tokens.push_back("object=" + o.category + "|" + o.description);
  }
  std::vector<double> e(dim, 0.0);
  for (const auto& t : tokens) {
    const std::uint64_t h = fnv1a(t);
    e[h % dim] += (h >> 63) ? -1.0 : 1.0;
  }
  double n2 = 0.0;
  for (double v : e) n2 += v * v;
  if (n2 > 0.0) {
    const double inv = 1.0 / std::sqrt(n2);
    for (auto& v : e) v *= inv;
  }
  return e;
}

}  // namespace dscene
