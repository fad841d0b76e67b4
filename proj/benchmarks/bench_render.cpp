#include <random>

#include <benchmark/benchmark.h>

#include "dscene/bev_grid.hpp"
#include "dscene/ray_render.hpp"
#include "dscene/scene_synth.hpp"

namespace {

using namespace dscene;

struct Fixture {
  BevGridSpec spec;
  HwcArray occ;
  RayBatch rays;

  Fixture() {
    SceneParams sp;
    sp.n_frames = 1;
    const Scene scene = gen_scene(1, sp);
    const Pose s2w = lidar_to_world(scene.trajectory.ego_to_world[0]);
    const auto pattern = LidarPattern::standard();
    occ = voxelize(transform_cloud(s2w.inverse(), cast_rays(scene.layout, s2w, pattern)), spec).occupancy();
    for (std::size_t r = 0; r < pattern.elevations.size(); ++r)
      for (int a = 0; a < pattern.azimuth_count; ++a) {
        rays.origins.push_back(Vec3::Zero());
        rays.directions.push_back(pattern.direction(r, a));
      }
    rays.max_t = pattern.max_range;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_RenderRays(benchmark::State& state) {
  const auto& f = fixture();
  RenderOptions opts;
  opts.skip = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_rays(f.occ, f.spec, f.rays, opts));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * f.rays.origins.size()));
}
BENCHMARK(BM_RenderRays)->ArgName("skip")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CastRays(benchmark::State& state) {
  SceneParams sp;
  sp.n_frames = 1;
  const Scene scene = gen_scene(2, sp);
  const Pose s2w = lidar_to_world(scene.trajectory.ego_to_world[0]);
  const auto pattern = LidarPattern::standard();
  for (auto _ : state) benchmark::DoNotOptimize(cast_rays(scene.layout, s2w, pattern));
}
BENCHMARK(BM_CastRays)->Unit(benchmark::kMillisecond);

}  // namespace
