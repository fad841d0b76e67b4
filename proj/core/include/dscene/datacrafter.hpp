#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dscene/array.hpp"

namespace dscene {

struct ClipScore {
  double q_clarity = 0.0;
  double q_structure = 0.0;
  double q_aesthetics = 0.0;
  std::array<double, 3> lambdas{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double s = 0.0;
};

/// s = l1 q_clarity + l2 q_structure + l3 q_aesthetics. Throws ValidationError
/// for subscores outside [0, 1] or weights that are negative or do not sum
/// to 1 within 1e-9.
ClipScore score_clip(const std::array<double, 3>& q,
                     const std::array<double, 3>& lambdas = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});

struct ScoredClip {
  std::string id;
  ClipScore score;
};

/// Clips with s >= tau, in input order.
std::vector<ScoredClip> filter_clips(const std::vector<ScoredClip>& clips, double tau);

/// Reference clarity proxy: mean squared finite-difference gradient energy E
/// of the channel-averaged image, mapped to E / (E + k).
double sharpness_score(const HwcArray& image, double k = 0.01);

struct SceneRecord {
  std::string time;
  std::string weather;
  std::string road_type;
  std::string road_surface;
  std::string lane;
  std::string environment_type;
  std::string surroundings;  // free text
  std::string traffic;       // free text

  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

struct CaptionObject {
  std::string category;
  std::array<double, 4> bbox{};  // x1, y1, x2, y2 pixels
  std::string description;

  friend bool operator==(const CaptionObject&, const CaptionObject&) = default;
};

struct StructuredCaption {
  SceneRecord scene;
  std::vector<CaptionObject> objects;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  friend bool operator==(const StructuredCaption&, const StructuredCaption&) = default;
};

/// Allowed values of an enumerated scene field ("time", "weather",
/// "road_type", "road_surface", "lane", "environment_type").
const std::vector<std::string>& caption_options(std::string_view field);
/// The six enumerated field names in record order.
const std::vector<std::string>& enum_fields();
/// Field value by name, for the eight scene fields.
const std::string& scene_field(const SceneRecord& r, std::string_view field);
std::string& scene_field(SceneRecord& r, std::string_view field);

StructuredCaption build_structured_caption(SceneRecord scene, std::vector<CaptionObject> objects);

struct ViewCaption {
  int view_id = 0;
  StructuredCaption caption;
};

/// Majority vote per scene field (ties go to the value seen at the lowest
/// view_id); objects deduplicated on (category, description), keeping the
/// lowest view_id's bbox. Independent of input order.
StructuredCaption fuse_captions(std::vector<ViewCaption> views);

std::string caption_to_json(const StructuredCaption& caption);
/// Parses and validates; FormatError on malformed JSON, ValidationError on
/// schema violations.
StructuredCaption caption_from_json(std::string_view text);

/// Signed feature hashing (FNV-1a 64) of field-qualified tokens, normalized
/// to unit length. dim >= 8.
std::vector<double> caption_embed(const StructuredCaption& caption, std::size_t dim);

}  // namespace dscene
