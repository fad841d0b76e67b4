#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dscene/bev_codec.hpp"
#include "dscene/error.hpp"
#include "dscene/io.hpp"
#include "dscene/pipeline.hpp"
#include "json.hpp"
#include "test_support.hpp"

namespace dscene {
namespace {

namespace fs = std::filesystem;

std::string small_config_text(const fs::path& out) {
  return "seed = 3\n"
         "n_frames = 7\n"
         "n_boxes = 3\n"
         "extent = 12\n"
         "grid.x_min = -12.8\n"
         "grid.x_max = 12.8\n"
         "grid.y_min = -12.8\n"
         "grid.y_max = 12.8\n"
         "lidar.azimuths = 256\n"
         "lidar.rings = 8\n"
         "rig.views = 2\n"
         "rig.width = 64\n"
         "rig.height = 48\n"
         "rig.fx = 40\n"
         "rig.fy = 40\n"
         "depth.max = 20\n"
         "depth.bins = 8\n"
         "flow.steps = 2\n"
         "caption.dim = 16\n"
         "out = " + out.string() + "\n";
}

RunConfig small_config(const fs::path& out) {
  const auto r = validate_config(small_config_text(out));
  EXPECT_TRUE(r.ok()) << (r.errors.empty() ? "" : r.errors.front());
  return r.config;
}

TEST(Config, EmptyTextGivesDefaults) {
  const auto r = validate_config("");
  EXPECT_TRUE(r.ok());
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.config.grid.nx(), 256u);
  EXPECT_EQ(r.config.codec, "column");
}

TEST(Config, CollectsEveryError) {
  const auto r = validate_config("n_frames = -1\n# comment only\nrig.fx = abc\n");
  ASSERT_EQ(r.errors.size(), 2u);
  EXPECT_NE(r.errors[0].find("n_frames"), std::string::npos);
  EXPECT_NE(r.errors[1].find("rig.fx"), std::string::npos);
}

TEST(Config, UnknownKeyWarns) {
  const auto r = validate_config("colour = blue\n");
  EXPECT_TRUE(r.ok());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("colour"), std::string::npos);
}

TEST(Config, CrossChecks) {
  auto r = validate_config("grid.x_max = 51.6\n");
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.errors[0].find("grid spec"), std::string::npos);
  r = validate_config("n_frames = 6\n");
  ASSERT_FALSE(r.ok());
  EXPECT_NE(r.errors[0].find("n_frames"), std::string::npos);
  EXPECT_FALSE(validate_config("missing equals sign\n").ok());
}

TEST(Config, TextRoundTrip) {
  const auto c = small_config("somewhere");
  const auto back = validate_config(c.to_text());
  ASSERT_TRUE(back.ok());
  EXPECT_EQ(back.config.to_text(), c.to_text());
  EXPECT_EQ(back.config.grid.x_max, 12.8);
}

TEST(Pipeline, DeterministicAndReadable) {
  testing::TempDir dir("pipeline");
  const auto a = run_pipeline(small_config(dir.path() / "a"));
  const auto b = run_pipeline(small_config(dir.path() / "b"));
  EXPECT_EQ(io::read_text(dir.path() / "a/eval/metrics.json"), io::read_text(dir.path() / "b/eval/metrics.json"));
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_GT(a.chamfer.at_1s, 0.0);
  for (const auto& art : a.artifacts) {
    const fs::path p = dir.path() / "a" / art.path;
    ASSERT_TRUE(fs::exists(p)) << art.path;
    if (p.extension() == ".gpc") EXPECT_NO_THROW(io::read_cloud(p)) << art.path;
    if (p.extension() == ".gbv") EXPECT_NO_THROW(io::read_grid(p)) << art.path;
    if (p.extension() == ".json") EXPECT_NO_THROW((void)nlohmann::json::parse(io::read_text(p))) << art.path;
  }
  EXPECT_NO_THROW(io::read_calibration(dir.path() / "a/synth/calibration.json"));
  EXPECT_NO_THROW(read_condition(dir.path() / "a/sample/cond"));
  EXPECT_EQ(read_cloud_sequence(dir.path() / "a/synth/frames").size(), 7u);
}

TEST(Pipeline, NoBoxes) {
  testing::TempDir dir("pipeline_empty");
  auto cfg = small_config(dir.path());
  cfg.scene.n_boxes = 0;
  cfg.scene.n_pedestrians = 0;
  EXPECT_NO_THROW(run_pipeline(cfg));
}

TEST(Pipeline, InvalidConfigAndStageFailure) {
  testing::TempDir dir("pipeline_fail");
  auto cfg = small_config(dir.path());
  cfg.n_views = 0;
  EXPECT_THROW(run_pipeline(cfg), ValidationError);
  cfg = small_config(dir.path());
  cfg.model = (dir.path() / "missing.json").string();
  try {
    run_pipeline(cfg);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "sample");
  }
  EXPECT_TRUE(fs::exists(dir.path() / "synth/layout.json"));
}

TEST(Formats, GridSpecAndPattern) {
  BevGridSpec s;
  s.x_min = -6.4;
  s.n_z_bins = 8;
  const auto back = grid_spec_from_json(grid_spec_to_json(s));
  EXPECT_EQ(back.x_min, -6.4);
  EXPECT_EQ(back.n_z_bins, 8);
  EXPECT_THROW(grid_spec_from_json("[1, 2"), FormatError);
  const auto p = LidarConfig{}.pattern();
  const auto pb = pattern_from_json(pattern_to_json(p));
  EXPECT_EQ(pb.azimuth_count, p.azimuth_count);
  EXPECT_EQ(pb.elevations, p.elevations);
}

#ifdef DSCENE_CLI_PATH

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DSCENE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  testing::TempDir dir("cli");
  const fs::path cfg = dir.path() / "run.cfg";
  io::write_text(cfg, small_config_text(dir.path() / "out"));
  EXPECT_EQ(run_cli("run --config " + cfg.string()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "out/eval/metrics.json"));

  const fs::path bad = dir.path() / "bad.cfg";
  io::write_text(bad, "n_frames = zero\n");
  EXPECT_EQ(run_cli("run --config " + bad.string()), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);

  const fs::path failing = dir.path() / "fail.cfg";
  io::write_text(failing, small_config_text(dir.path() / "out2") + "model = " + (dir.path() / "nope.json").string() + "\n");
  EXPECT_EQ(run_cli("run --config " + failing.string()), 2);
}

TEST(Cli, StagesChain) {
  testing::TempDir dir("cli_chain");
  const auto d = dir.path();
  io::write_text(d / "run.cfg", small_config_text(d / "synth"));
  ASSERT_EQ(run_cli("--config " + (d / "run.cfg").string() + " --out " + (d / "synth").string() + " synth"), 0);
  io::write_text(d / "spec.json", grid_spec_to_json(small_config(d).grid));
  const auto frame = d / "synth/frames/gt_000.gpc";
  ASSERT_TRUE(fs::exists(frame));
  EXPECT_EQ(run_cli("voxelize --in " + frame.string() + " --spec " + (d / "spec.json").string() + " --out " +
                    (d / "grid.gbv").string()),
            0);
  EXPECT_EQ(run_cli("encode --in " + (d / "grid.gbv").string() + " --spec " + (d / "spec.json").string() + " --out " +
                    (d / "latent.gbv").string()),
            0);
  EXPECT_EQ(run_cli("encode --decode --in " + (d / "latent.gbv").string() + " --spec " + (d / "spec.json").string() +
                    " --out " + (d / "occ.gbv").string()),
            0);
  EXPECT_EQ(run_cli("render --grid " + (d / "occ.gbv").string() + " --spec " + (d / "spec.json").string() +
                    " --out " + (d / "render.gpc").string()),
            0);
  EXPECT_GT(io::read_cloud(d / "render.gpc").size(), 0u);
  EXPECT_EQ(run_cli("voxelize --in " + (d / "missing.gpc").string() + " --out " + (d / "x.gbv").string()), 1);
}

#endif

}  // namespace
}  // namespace dscene
