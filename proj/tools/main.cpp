#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dscene/bev_codec.hpp"
#include "dscene/bev_grid.hpp"
#include "dscene/datacrafter.hpp"
#include "dscene/error.hpp"
#include "dscene/io.hpp"
#include "dscene/layout_control.hpp"
#include "dscene/lift_splat.hpp"
#include "dscene/metrics.hpp"
#include "dscene/pipeline.hpp"
#include "dscene/ray_render.hpp"
#include "dscene/scene_synth.hpp"
#include "dscene/stdit.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dscene;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitStage = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  bool verbose = false;
};

Globals g;

RunConfig load_config() {
  const std::string text = g.config.empty() ? std::string() : io::read_text(g.config);
  ConfigResult r = validate_config(text);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  if (!r.ok()) {
    std::string msg = "invalid config:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ValidationError(msg);
  }
  if (g.seed) r.config.seed = *g.seed;
  if (!g.out.empty()) r.config.out = g.out;
  return r.config;
}

const std::string& require_out(const char* what) {
  if (g.out.empty()) throw ValidationError(std::string(what) + ": --out is required");
  return g.out;
}

BevGridSpec load_spec(const std::string& path) {
  return path.empty() ? BevGridSpec{} : grid_spec_from_json(io::read_text(path));
}

void log(const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

// --- subcommands -------------------------------------------------------------

void cmd_synth(int frames) {
  RunConfig cfg = load_config();
  if (frames > 0) cfg.scene.n_frames = frames;
  const fs::path out = require_out("synth");
  fs::create_directories(out / "frames");
  const Scene scene = gen_scene(cfg.seed, cfg.scene);
  const LidarPattern pattern = cfg.lidar.pattern();
  io::write_text(out / "layout.json", layout_to_json(scene.layout));
  io::write_text(out / "trajectory.json", trajectory_to_json(scene.trajectory));
  io::write_calibration(out / "calibration.json", gen_rig(cfg.n_views, cfg.rig));
  io::write_text(out / "pattern.json", pattern_to_json(pattern));
  io::write_text(out / "grid_spec.json", grid_spec_to_json(cfg.grid));
  for (std::size_t f = 0; f < scene.trajectory.ego_to_world.size(); ++f) {
    const Pose s2w = lidar_to_world(scene.trajectory.ego_to_world[f]);
    const PointCloud c = transform_cloud(s2w.inverse(), cast_rays(scene.layout, s2w, pattern));
    char name[32];
    std::snprintf(name, sizeof name, "gt_%03zu.gpc", f);
    io::write_cloud(out / "frames" / name, c);
    log(std::string(name) + ": " + std::to_string(c.size()) + " points");
  }
}

void cmd_voxelize(const std::string& in, const std::string& spec_path) {
  const BevGridSpec spec = load_spec(spec_path);
  const BevFeatureGrid grid = voxelize(io::read_cloud(in), spec);
  io::write_grid(require_out("voxelize"), grid.values);
}

std::unique_ptr<LatentCodec> codec_for(const std::string& codec, const BevGridSpec& spec) {
  if (codec == "column") return std::make_unique<ColumnCodec>(ColumnCodecConfig{spec, -kLidarMountHeight});
  return load_codec(codec);
}

void cmd_encode(const std::string& in, const std::string& codec, const std::string& spec_path, bool decode) {
  const auto c = codec_for(codec, load_spec(spec_path));
  const HwcArray input = io::read_grid(in);
  io::write_grid(require_out("encode"), decode ? c->decode(BevLatent{input}) : c->encode(input).values);
}

void cmd_render(const std::string& grid_path, const std::string& pattern_path, const std::string& spec_path,
                const std::string& skip, double threshold) {
  const BevGridSpec spec = load_spec(spec_path);
  HwcArray occ = io::read_grid(grid_path);
  if (occ.c == spec.nz() + 2) {
    HwcArray o(occ.h, occ.w, spec.nz());
    for (std::size_t i = 0; i < occ.h; ++i)
      for (std::size_t j = 0; j < occ.w; ++j)
        for (std::size_t k = 0; k < spec.nz(); ++k) o.at(i, j, k) = occ.at(i, j, k);
    occ = std::move(o);
  }
  if (occ.h != spec.nx() || occ.w != spec.ny() || occ.c != spec.nz()) {
    throw ShapeError("render: grid shape does not match the grid spec");
  }
  const LidarPattern pattern = pattern_path.empty() ? LidarPattern::standard() : pattern_from_json(io::read_text(pattern_path));
  const PointCloud cloud = reconstruct_from_occupancy(occ, spec, Pose::identity(), pattern, threshold, skip == "on");
  io::write_cloud(require_out("render"), cloud);
  log("rendered " + std::to_string(cloud.size()) + " points");
}

void cmd_project(const std::string& scene_dir, const std::string& rig_path, int frame) {
  const SceneLayout layout = layout_from_json(io::read_text(fs::path(scene_dir) / "layout.json"));
  const EgoTrajectory traj = trajectory_from_json(io::read_text(fs::path(scene_dir) / "trajectory.json"));
  if (frame < 0 || static_cast<std::size_t>(frame) >= traj.ego_to_world.size()) {
    throw ValidationError("project: frame " + std::to_string(frame) + " outside the trajectory");
  }
  const auto rig = place_rig(io::read_calibration(rig_path), traj.ego_to_world[static_cast<std::size_t>(frame)]);
  const fs::path out = require_out("project");
  fs::create_directories(out);
  for (const auto& view : rig) {
    const ControlMap cm = rasterize_layout(layout, view, frame);
    io::write_grid(out / ("view_" + std::to_string(view.view_id) + ".gbv"), cm.channels);
  }
}

void cmd_splat(const std::string& fmap_path, const std::string& calib_path, const std::string& spec_path) {
  DepthBinning binning;
  const ImageFeatureMap fmap = read_feature_map(fmap_path, &binning);
  const auto views = io::read_calibration(calib_path);
  const auto it = std::find_if(views.begin(), views.end(), [&](const CameraView& v) { return v.view_id == fmap.view_id; });
  if (it == views.end()) throw ValidationError("splat: calibration has no view " + std::to_string(fmap.view_id));
  CameraView view = *it;
  const auto fw = static_cast<int>(fmap.features.w);
  if (view.intrinsics.width != fw) {
    if (fw == 0 || view.intrinsics.width % fw != 0) throw ShapeError("splat: feature map width does not divide the image");
    view = downscale_view(view, view.intrinsics.width / fw);
  }
  if (static_cast<std::size_t>(view.intrinsics.height) != fmap.features.h) {
    throw ShapeError("splat: feature map height does not match the calibration");
  }
  const BevGridSpec spec = load_spec(spec_path);
  const Frustum fr = lift(fmap, view, binning);
  const HwcArray bev = splat(fr, spec);
  io::write_grid(require_out("splat"), bev);
  double total = 0.0;
  for (double v : bev.data) total += v;
  log("splat sum " + std::to_string(total) + ", in-volume frustum sum " + std::to_string(in_volume_feature_sum(fr, spec)));
}

void cmd_sample(const std::string& model, int steps, const std::string& cond_dir) {
  const LidarDenoiser d = LidarDenoiser::load(model);
  const SampleCondition c = read_condition(cond_dir);
  const std::uint64_t seed = g.seed.value_or(0);
  const auto z = d.sample(c.frames, c.height * c.width, steps, seed, c.e_cap, c.e_box, c.n_box, c.bev_cond.data);
  HwcArray out(c.frames * c.height, c.width, d.config().latent_channels);
  out.data = z;
  io::write_grid(require_out("sample"), out);
}

ScoredClip parse_clip(const json& j) {
  ScoredClip c;
  c.id = j.at("id").get<std::string>();
  const auto q = j.at("q").get<std::array<double, 3>>();
  c.score = j.contains("lambdas") ? score_clip(q, j.at("lambdas").get<std::array<double, 3>>()) : score_clip(q);
  return c;
}

void cmd_caption_score(const std::string& in, double tau) {
  std::vector<ScoredClip> clips;
  try {
    for (const auto& j : json::parse(io::read_text(in))) clips.push_back(parse_clip(j));
  } catch (const json::exception& e) {
    throw FormatError(std::string("clips JSON: ") + e.what());
  }
  const auto kept = filter_clips(clips, tau);
  nlohmann::ordered_json r;
  r["tau"] = tau;
  r["scores"] = nlohmann::ordered_json::array();
  for (const auto& c : clips) r["scores"].push_back({{"id", c.id}, {"s", c.score.s}});
  r["kept"] = nlohmann::ordered_json::array();
  for (const auto& c : kept) r["kept"].push_back(c.id);
  const std::string text = r.dump(2) + "\n";
  if (g.out.empty()) {
    std::cout << text;
  } else {
    io::write_text(g.out, text);
  }
}

void cmd_caption_fuse(const std::string& in) {
  std::vector<ViewCaption> views;
  try {
    for (const auto& j : json::parse(io::read_text(in))) {
      views.push_back({j.at("view_id").get<int>(), caption_from_json(j.at("caption").dump())});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("views JSON: ") + e.what());
  }
  io::write_text(require_out("caption fuse"), caption_to_json(fuse_captions(std::move(views))));
}

void cmd_caption_embed(const std::string& in, std::size_t dim) {
  const auto e = caption_embed(caption_from_json(io::read_text(in)), dim);
  HwcArray a(1, e.size(), 1);
  a.data = e;
  io::write_grid(require_out("caption embed"), a);
}

void cmd_eval_chamfer(const std::string& pred, const std::string& gt, double rate, const std::string& volume) {
  const CropVolume vol = CropVolume::parse(volume);
  const auto h = chamfer_horizons(read_cloud_sequence(pred), read_cloud_sequence(gt), rate, vol);
  const std::string report = chamfer_report_json(h);
  std::cout << "# chamfer convention: " << kChamferConvention << "\n" << report;
  if (!g.out.empty()) io::write_text(g.out, report);
}

void cmd_run() {
  const RunConfig cfg = load_config();
  const RunManifest m = run_pipeline(cfg, g.verbose ? &std::cerr : nullptr);
  std::cout << chamfer_report_json(m.chamfer);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dscene: synthetic driving-scene generation and evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "key = value run configuration file");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_flag("--verbose,-v", g.verbose, "Log progress to stderr");

  std::function<void()> action;

  auto* synth = app.add_subcommand("synth", "Generate a scene, trajectory, rig and LiDAR sweeps");
  int frames = 0;
  synth->add_option("--frames", frames, "Number of frames (overrides config)")->check(CLI::Range(1, 1000));
  synth->callback([&] { action = [&] { cmd_synth(frames); }; });

  std::string in, spec, codec = "column", grid, pattern, skip = "on", scene_dir, rig, features, calib, model, cond;
  std::string pred, gt, volume = "default";
  double threshold = 0.5, tau = 0.5, rate = 2.0;
  int frame = 0, steps = 20;
  std::size_t dim = 64;
  bool decode = false;

  auto* vox = app.add_subcommand("voxelize", "Voxelize a GPC1 cloud into a GBV1 BEV grid");
  vox->add_option("--in", in, "Input cloud")->required();
  vox->add_option("--spec", spec, "Grid spec JSON (default grid if omitted)");
  vox->callback([&] { action = [&] { cmd_voxelize(in, spec); }; });

  auto* enc = app.add_subcommand("encode", "Encode a BEV grid to a latent (or decode with --decode)");
  enc->add_option("--in", in, "Input grid or latent")->required();
  enc->add_option("--codec", codec, "'column' or a codec manifest");
  enc->add_option("--spec", spec, "Grid spec JSON");
  enc->add_flag("--decode", decode, "Decode a latent to occupancy");
  enc->callback([&] { action = [&] { cmd_encode(in, codec, spec, decode); }; });

  auto* ren = app.add_subcommand("render", "Ray-march an occupancy grid into a point cloud");
  ren->add_option("--grid", grid, "Occupancy grid (GBV1)")->required();
  ren->add_option("--pattern", pattern, "LiDAR pattern JSON (standard pattern if omitted)");
  ren->add_option("--spec", spec, "Grid spec JSON");
  ren->add_option("--skip", skip, "Spatial skipping")->check(CLI::IsMember({"on", "off"}));
  ren->add_option("--threshold", threshold, "Occupancy threshold for the empty floor and post-filter")
      ->check(CLI::Range(0.0, 1.0));
  ren->callback([&] { action = [&] { cmd_render(grid, pattern, spec, skip, threshold); }; });

  auto* proj = app.add_subcommand("project", "Rasterize per-view control maps");
  proj->add_option("--scene", scene_dir, "Directory written by synth")->required();
  proj->add_option("--rig", rig, "Calibration JSON (ego-frame extrinsics)")->required();
  proj->add_option("--frame", frame, "Frame index");
  proj->callback([&] { action = [&] { cmd_project(scene_dir, rig, frame); }; });

  auto* spl = app.add_subcommand("splat", "Lift an image feature map and splat it to BEV");
  spl->add_option("--features", features, "Feature map manifest JSON")->required();
  spl->add_option("--calib", calib, "Calibration JSON (extrinsics into the grid frame)")->required();
  spl->add_option("--spec", spec, "Grid spec JSON");
  spl->callback([&] { action = [&] { cmd_splat(features, calib, spec); }; });

  auto* smp = app.add_subcommand("sample", "Sample LiDAR latents with the flow denoiser");
  smp->add_option("--model", model, "Denoiser parameter manifest")->required();
  smp->add_option("--steps", steps, "Euler steps")->check(CLI::Range(1, 100000));
  smp->add_option("--cond", cond, "Conditioning directory")->required();
  smp->callback([&] { action = [&] { cmd_sample(model, steps, cond); }; });

  auto* cap = app.add_subcommand("caption", "Clip scoring, caption fusion and embedding");
  cap->require_subcommand(1);
  auto* cap_score = cap->add_subcommand("score", "Score clips and apply the quality threshold");
  cap_score->add_option("--in", in, "Clips JSON [{id, q: [3], lambdas?: [3]}]")->required();
  cap_score->add_option("--tau", tau, "Threshold")->check(CLI::Range(0.0, 1.0));
  cap_score->callback([&] { action = [&] { cmd_caption_score(in, tau); }; });
  auto* cap_fuse = cap->add_subcommand("fuse", "Fuse per-view captions");
  cap_fuse->add_option("--in", in, "Views JSON [{view_id, caption}]")->required();
  cap_fuse->callback([&] { action = [&] { cmd_caption_fuse(in); }; });
  auto* cap_embed = cap->add_subcommand("embed", "Hash a caption to an embedding (GBV1 1 x dim x 1)");
  cap_embed->add_option("--in", in, "Caption JSON")->required();
  cap_embed->add_option("--dim", dim, "Embedding size")->check(CLI::Range(8, 1 << 20));
  cap_embed->callback([&] { action = [&] { cmd_caption_embed(in, dim); }; });

  auto* ev = app.add_subcommand("eval", "Evaluation metrics");
  ev->require_subcommand(1);
  auto* ev_ch = ev->add_subcommand("chamfer", "Chamfer distance at 1, 2 and 3 s horizons");
  ev_ch->add_option("--pred", pred, "Directory of predicted frames (*.gpc)")->required();
  ev_ch->add_option("--gt", gt, "Directory of ground-truth frames (*.gpc)")->required();
  ev_ch->add_option("--rate", rate, "Frame rate in Hz")->required();
  ev_ch->add_option("--volume", volume, "'default' or x0,x1,y0,y1,z0,z1");
  ev_ch->callback([&] { action = [&] { cmd_eval_chamfer(pred, gt, rate, volume); }; });

  auto* run = app.add_subcommand("run", "Run every stage end to end");
  run->callback([&] { action = [&] { cmd_run(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    action();
  } catch (const StageError& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStage;
  } catch (const EmptyCloudError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
