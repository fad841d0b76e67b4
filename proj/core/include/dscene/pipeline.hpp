#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dscene/bev_grid.hpp"
#include "dscene/lift_splat.hpp"
#include "dscene/metrics.hpp"
#include "dscene/scene_synth.hpp"

namespace dscene {

/// Ring layout of a spinning LiDAR, in the units used by config files.
struct LidarConfig {
  int azimuths = 1024;
  int rings = 32;
  double elev_min_deg = -30.0;
  double elev_max_deg = 10.0;
  double max_range = 80.0;

  LidarPattern pattern() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SceneParams scene;
  BevGridSpec grid;
  LidarConfig lidar;
  int n_views = 6;
  RigParams rig;
  int feature_stride = 8;  // image feature maps are rig resolution / stride
  DepthBinning depth;
  int flow_steps = 20;
  double postfilter_threshold = 0.5;
  double clip_threshold = 0.0;
  std::size_t caption_dim = 64;
  std::string codec = "column";  // "column" or a codec manifest path
  std::string model;             // denoiser manifest; empty = initialize from seed
  std::filesystem::path out = "run";

  /// Canonical key=value text; validate_config(to_text()) reproduces *this.
  std::string to_text() const;
};

struct ConfigResult {
  RunConfig config;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

/// Parses "key = value" lines ('#' starts a comment). Every violation is
/// collected; unknown keys produce warnings.
ConfigResult validate_config(std::string_view text);

/// A pipeline stage failed; what() is "<stage>: <cause>".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct Artifact {
  std::string stage;
  std::string path;  // relative to the output directory
};

struct RunManifest {
  std::vector<Artifact> artifacts;
  ChamferHorizons chamfer;
  std::string metrics_path;

  std::string to_json() const;
};

/// Runs synth -> voxelize -> encode -> project -> splat -> caption -> sample
/// -> reconstruct -> eval, writing every intermediate below config.out.
/// Throws ValidationError for an invalid config and StageError when a stage
/// fails; files written before the failure are left in place.
RunManifest run_pipeline(const RunConfig& config, std::ostream* log = nullptr);

// File formats shared by the pipeline and the command-line tool.
std::string grid_spec_to_json(const BevGridSpec& spec);
BevGridSpec grid_spec_from_json(std::string_view text);
std::string pattern_to_json(const LidarPattern& pattern);
LidarPattern pattern_from_json(std::string_view text);

/// Image feature map manifest: {"view_id", "features", "depth_dist",
/// "depth_binning": {"d_min", "d_max", "n_bins"}} with the two arrays stored
/// as GBV1 files next to the manifest.
void write_feature_map(const std::filesystem::path& manifest, const ImageFeatureMap& fmap, const DepthBinning& binning);
ImageFeatureMap read_feature_map(const std::filesystem::path& manifest, DepthBinning* binning = nullptr);

/// Conditioning inputs of the LiDAR sampler as stored on disk: cond.json
/// {"frames", "height", "width", "n_box"} plus e_cap.gbv (1 x cap x 1),
/// e_box.gbv (n_box x box_dim x 1) and bev_cond.gbv ((frames*height) x width
/// x cond_dim).
struct SampleCondition {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_box = 0;
  std::size_t box_dim = 8;
  std::vector<double> e_cap;
  std::vector<double> e_box;
  HwcArray bev_cond;
};
void write_condition(const std::filesystem::path& dir, const SampleCondition& cond);
SampleCondition read_condition(const std::filesystem::path& dir);

/// Frame clouds in a directory, ordered by file name (*.gpc).
std::vector<PointCloud> read_cloud_sequence(const std::filesystem::path& dir);

/// Camera view whose extrinsics map `frame_to_world` coordinates into the
/// camera, i.e. view.extrinsics composed with frame_to_world.
CameraView reframe_view(const CameraView& view, const Pose& frame_to_world);
/// Intrinsics divided by an integer stride (feature-map resolution).
CameraView downscale_view(const CameraView& view, int stride);

}  // namespace dscene
