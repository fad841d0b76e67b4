#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dscene/error.hpp"
#include "dscene/flow.hpp"
#include "dscene/stdit.hpp"
#include "grad_cases.hpp"
#include "test_support.hpp"

namespace dscene {
namespace {

std::vector<double> vals(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

TEST(RectifiedFlow, InterpolateEndpointsAndMidpoint) {
  ad::Tape tape;
  const auto x0 = tape.constant({3}, {1.0, -2.0, 0.5});
  const auto eps = tape.constant({3}, {0.25, 4.0, -1.0});
  EXPECT_EQ(vals(rf_interpolate(x0, eps, 0.0)), vals(x0));
  EXPECT_EQ(vals(rf_interpolate(x0, eps, 1.0)), vals(eps));
  EXPECT_EQ(rf_interpolate(tape.constant({1}, {0.0}), tape.constant({1}, {2.0}), 0.5).item(), 1.0);
  EXPECT_THROW(rf_interpolate(x0, eps, 1.5), ValidationError);
  EXPECT_THROW(rf_interpolate(x0, tape.zeros({2}), 0.5), ShapeError);
}

TEST(RectifiedFlow, VelocityTarget) {
  ad::Tape tape;
  const auto x0 = tape.constant({2}, {1.0, -2.0});
  const auto eps = tape.constant({2}, {0.5, 3.0});
  for (double v : rf_velocity_target(x0, x0).values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(vals(rf_velocity_target(tape.zeros({2}), eps)), vals(eps));
  // The path is linear, so the difference quotient equals v at any t.
  const auto v = vals(rf_velocity_target(x0, eps));
  for (double t : {0.25, 0.6}) {
    const double dt = 1e-3;
    const auto a = vals(rf_interpolate(x0, eps, t));
    const auto b = vals(rf_interpolate(x0, eps, t + dt));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR((b[i] - a[i]) / dt, v[i], 1e-9);
  }
}

TEST(Euler, FrozenFlow) {
  const std::vector<double> z1{1.5, -2.0, 3.25};
  const VelocityFn zero = [](const std::vector<double>& z, double) { return std::vector<double>(z.size(), 0.0); };
  EXPECT_EQ(euler_sample(zero, z1, 7), z1);
}

TEST(Euler, PointMassFieldReachesOriginForDyadicStepCounts) {
  const VelocityFn field = [](const std::vector<double>& z, double t) {
    std::vector<double> v(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) v[i] = z[i] / t;
    return v;
  };
  std::mt19937_64 rng(1);
  const auto z1 = testing::uniform_vec(rng, 64, -5.0, 5.0);
  for (int n : {1, 2, 4, 8, 16, 32, 64}) {
    for (double v : euler_sample(field, z1, n)) EXPECT_EQ(v, 0.0) << "n = " << n;
  }
}

TEST(Euler, ConstantVelocity) {
  const VelocityFn c = [](const std::vector<double>& z, double) { return std::vector<double>(z.size(), 0.5); };
  const auto z0 = euler_sample(c, {3.0, -1.0}, 4);
  EXPECT_EQ(z0[0], 2.5);
  EXPECT_EQ(z0[1], -1.5);
  EXPECT_THROW(euler_sample(c, {1.0}, 0), ValidationError);
}

TEST(ToyFlow, ConstantTargetFitsBelowThreshold) {
  ToyVelocityModel model(1, 0);
  const auto curve = train_toy_flow(model, {{1.5}}, {2000, 0.1, 256, 0});
  ASSERT_EQ(curve.size(), 2000u);
  EXPECT_LT(curve.back(), 1e-3);
}

TEST(ToyFlow, ZeroLearningRateLeavesParams) {
  ToyVelocityModel model(2, 3);
  const auto before = model.params().get("a").values;
  train_toy_flow(model, {{1.0, 2.0}}, {20, 0.0, 16, 0});
  EXPECT_EQ(model.params().get("a").values, before);
}

TEST(ToyFlow, Deterministic) {
  ToyVelocityModel a(1), b(1);
  const std::vector<std::vector<double>> data{{0.5}, {1.5}, {-0.25}};
  EXPECT_EQ(train_toy_flow(a, data, {100, 0.05, 32, 9}), train_toy_flow(b, data, {100, 0.05, 32, 9}));
}

TEST(ToyFlow, GaussianMoments) {
  const double mu = 2.0, sigma = 0.5;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> target(mu, sigma), noise(0.0, 1.0);
  std::vector<std::vector<double>> data(4000);
  for (auto& x : data) x = {target(rng)};
  ToyVelocityModel model(1);
  train_toy_flow(model, data, {2000, 0.1, 256, 3});
  const VelocityFn fn = [&](const std::vector<double>& z, double t) { return model.velocity(z, t); };
  double s = 0, s2 = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double x = euler_sample(fn, {noise(rng)}, 100)[0];
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_LE(std::abs(mean - mu), 0.05 * mu);
  EXPECT_LE(std::abs(var - sigma * sigma), 0.1 * sigma * sigma);
}

TEST(ToyFlow, BasisMatchesLegendre) {
  const ToyVelocityModel model(1, 3);
  const double t = 0.3, x = 2 * t - 1;
  const auto b = model.basis(t);
  ASSERT_EQ(b.size(), 5u);
  EXPECT_NEAR(b[0], 1.0, 1e-12);
  EXPECT_NEAR(b[1], x, 1e-12);
  EXPECT_NEAR(b[2], 0.5 * (3 * x * x - 1), 1e-12);
  EXPECT_NEAR(b[3], 0.5 * (5 * x * x * x - 3 * x), 1e-12);
  EXPECT_NEAR(b[4], 1 / t, 1e-12);
}

struct CamFixture {
  CamBlockConfig cfg = testing::small_cam_config();
  ParameterStore store;
  explicit CamFixture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    init_cam_block(store, "b.", cfg, rng);
  }
};

TEST(CamBlock, ShapePreservedAndNoOpAtInit) {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const CamFixture fx(seed);
    ad::Tape tape;
    const BoundParams p(fx.store, tape);
    const auto z = tape.constant({2, 3, 4, 8}, testing::uniform_vec(rng, 192));
    ConditionBundle b;
    b.e_cap = tape.constant({8}, testing::uniform_vec(rng, 8));
    b.z_s = tape.constant({2, 3, 2, 4}, testing::uniform_vec(rng, 48));
    const auto mv = tape.constant({2, 3, 5, 3}, testing::uniform_vec(rng, 90));
    const auto full = stdit_block_cam(p, "b.", fx.cfg, z, mv, b);
    const auto base = stdit_block_cam_base(p, "b.", fx.cfg, z);
    EXPECT_EQ(full.shape(), z.shape());
    EXPECT_EQ(vals(full), vals(base));
  }
}

TEST(CamBlock, ConditioningMattersOnceProjectionsAreNonzero) {
  CamFixture fx(1);
  std::mt19937_64 rng(1);
  testing::jitter_params(fx.store, rng);
  ad::Tape tape;
  const BoundParams p(fx.store, tape);
  const auto z = tape.constant({1, 2, 4, 8}, testing::uniform_vec(rng, 64));
  ConditionBundle b;
  b.e_cap = tape.constant({8}, testing::uniform_vec(rng, 8));
  b.z_s = tape.constant({1, 2, 2, 4}, testing::uniform_vec(rng, 16));
  const auto mv = tape.constant({1, 2, 4, 3}, testing::uniform_vec(rng, 24));
  EXPECT_NE(vals(stdit_block_cam(p, "b.", fx.cfg, z, mv, b)), vals(stdit_block_cam_base(p, "b.", fx.cfg, z)));
}

TEST(CamBlock, ViewPermutationEquivariance) {
  CamFixture fx(3);
  std::mt19937_64 rng(3);
  testing::jitter_params(fx.store, rng);
  const std::size_t F = 2, V = 3, T = 4, D = 8, Tm = 2, Ts = 2;
  const auto z = testing::uniform_vec(rng, F * V * T * D);
  const auto mv = testing::uniform_vec(rng, F * V * Tm * 3);
  const auto zs = testing::uniform_vec(rng, F * V * Ts * 4);
  const auto cap = testing::uniform_vec(rng, 8);
  const std::vector<std::size_t> perm{2, 0, 1};
  auto permute_views = [&](const std::vector<double>& x, std::size_t inner) {
    std::vector<double> out(x.size());
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t i = 0; i < inner; ++i) out[(f * V + v) * inner + i] = x[(f * V + perm[v]) * inner + i];
    return out;
  };
  auto run = [&](const std::vector<double>& zz, const std::vector<double>& mm, const std::vector<double>& ss) {
    ad::Tape tape;
    const BoundParams p(fx.store, tape);
    ConditionBundle b;
    b.e_cap = tape.constant({8}, cap);
    b.z_s = tape.constant({F, V, Ts, 4}, ss);
    return vals(stdit_block_cam(p, "b.", fx.cfg, tape.constant({F, V, T, D}, zz), tape.constant({F, V, Tm, 3}, mm), b));
  };
  const auto out = run(z, mv, zs);
  const auto out_p = run(permute_views(z, T * D), permute_views(mv, Tm * 3), permute_views(zs, Ts * 4));
  const auto expected = permute_views(out, T * D);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out_p[i], expected[i], 1e-12);
}

TEST(CamBlock, RejectsDimMismatch) {
  const CamFixture fx(0);
  ad::Tape tape;
  const BoundParams p(fx.store, tape);
  ConditionBundle b;
  b.e_cap = tape.zeros({8});
  b.z_s = tape.zeros({1, 1, 2, 4});
  EXPECT_THROW(stdit_block_cam(p, "b.", fx.cfg, tape.zeros({1, 1, 4, 6}), tape.zeros({1, 1, 2, 3}), b), ShapeError);
  EXPECT_THROW(stdit_block_cam(p, "b.", fx.cfg, tape.zeros({1, 1, 4, 8}), tape.zeros({1, 1, 2, 5}), b), ShapeError);
  b.e_cap = tape.zeros({7});
  EXPECT_THROW(stdit_block_cam(p, "b.", fx.cfg, tape.zeros({1, 1, 4, 8}), tape.zeros({1, 1, 2, 3}), b), ShapeError);
}

TEST(LidarBlock, NoOpAtInitWithControlNet) {
  std::mt19937_64 rng(4);
  const auto lc = testing::small_lidar_config();
  ParameterStore store;
  init_lidar_block(store, "l.", lc, rng);
  const ControlNetConfig cc{5, 6, 8, 1};
  init_controlnet(store, "c.", cc, rng);
  ad::Tape tape;
  const BoundParams p(store, tape);
  const auto z = tape.constant({3, 4, 8}, testing::uniform_vec(rng, 96));
  ConditionBundle b;
  b.e_cap = tape.constant({8}, testing::uniform_vec(rng, 8));
  b.e_box = tape.constant({2, 4}, testing::uniform_vec(rng, 8));
  const auto res = controlnet_residuals(p, "c.", cc, tape.constant({3, 4, 5}, testing::uniform_vec(rng, 60)));
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].shape(), z.shape());
  for (double v : res[0].values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(vals(stdit_block_lidar(p, "l.", lc, z, b, res[0])), vals(stdit_block_lidar_base(p, "l.", lc, z)));
}

TEST(LidarBlock, ZeroMhsaIsResidualIdentity) {
  std::mt19937_64 rng(5);
  const auto lc = testing::small_lidar_config();
  ParameterStore store;
  init_lidar_block(store, "l.", lc, rng);
  for (auto& v : store.get_mut("l.mhsa.wo").values) v = 0.0;
  for (auto& v : store.get_mut("l.mhsa.bo").values) v = 0.0;
  ad::Tape tape;
  const BoundParams p(store, tape);
  const auto z = tape.constant({2, 4, 8}, testing::uniform_vec(rng, 64));
  EXPECT_EQ(vals(stdit_block_lidar_base(p, "l.", lc, z)), vals(z));
}

TEST(LidarBlock, ControlResidualSensitivity) {
  std::mt19937_64 rng(6);
  const auto lc = testing::small_lidar_config();
  ParameterStore store;
  init_lidar_block(store, "l.", lc, rng);
  const ControlNetConfig cc{5, 6, 8, 2};
  init_controlnet(store, "c.", cc, rng);
  for (auto& v : store.get_mut("c.out1.w").values) v = 0.05;
  ad::Tape tape;
  const BoundParams p(store, tape);
  const auto z = tape.constant({2, 4, 8}, testing::uniform_vec(rng, 64));
  ConditionBundle b;
  b.e_cap = tape.constant({8}, testing::uniform_vec(rng, 8));
  const auto res = controlnet_residuals(p, "c.", cc, tape.constant({2, 4, 5}, testing::uniform_vec(rng, 40, 0.1, 1.0)));
  ASSERT_EQ(res.size(), 2u);
  EXPECT_EQ(vals(stdit_block_lidar(p, "l.", lc, z, b, res[0])), vals(stdit_block_lidar(p, "l.", lc, z, b)));
  EXPECT_NE(vals(stdit_block_lidar(p, "l.", lc, z, b, res[1])), vals(stdit_block_lidar(p, "l.", lc, z, b)));
  EXPECT_THROW(stdit_block_lidar(p, "l.", lc, z, b, tape.zeros({2, 4, 7})), ShapeError);
}

TEST(Attention, RowsAreDistributions) {
  std::mt19937_64 rng(7);
  ParameterStore store;
  init_attention(store, "a.", 8, 6, rng, false);
  testing::jitter_params(store, rng, 1.0);
  ad::Tape tape;
  const BoundParams p(store, tape);
  ad::Tensor probs;
  const auto out = attention(p, "a.", tape.constant({3, 5, 8}, testing::uniform_vec(rng, 120, -3, 3)),
                             tape.constant({3, 7, 6}, testing::uniform_vec(rng, 126, -3, 3)), 2, &probs);
  EXPECT_EQ(out.shape(), (ad::Shape{3, 5, 8}));
  ASSERT_EQ(probs.shape(), (ad::Shape{6, 5, 7}));
  const auto v = probs.values();
  for (std::size_t r = 0; r < 30; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_GE(v[r * 7 + k], 0.0);
      s += v[r * 7 + k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

class BlockGrad : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(BlockGrad, InputsMatchCentralDifferences) {
  for (const auto& c : testing::block_cases(GetParam())) {
    const auto r = testing::gradcheck(c.build, c.inputs);
    EXPECT_TRUE(r.ok) << c.name << ": " << r.worst;
  }
}

TEST_P(BlockGrad, ParametersMatchCentralDifferences) {
  std::mt19937_64 rng(GetParam());
  const auto lc = testing::small_lidar_config();
  ParameterStore store;
  init_lidar_block(store, "l.", lc, rng);
  testing::jitter_params(store, rng);
  const auto z = testing::uniform_vec(rng, 64);
  const auto cap = testing::uniform_vec(rng, 8);
  const auto r = testing::param_gradcheck(
      store,
      [&](ad::Tape& tape, const BoundParams& p) {
        ConditionBundle b;
        b.e_cap = tape.constant({8}, cap);
        return testing::weighted_sum(stdit_block_lidar(p, "l.", lc, tape.constant({2, 4, 8}, z), b), 11);
      },
      GetParam());
  EXPECT_TRUE(r.ok) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, BlockGrad, ::testing::Values(0u, 1u, 2u));

TEST(Denoiser, ZeroInitialControlAndDeterministicSampling) {
  LidarDenoiser::Config cfg;
  cfg.cap_dim = 8;
  cfg.dim = 8;
  const auto den = LidarDenoiser::init(cfg, 5);
  const std::vector<double> cap(8, 0.1), box(2 * 8, 0.2), cond(2 * 4 * 7, 0.3);
  const auto a = den.sample(2, 4, 5, 11, cap, box, 2, cond);
  EXPECT_EQ(a.size(), 2u * 4u * 4u);
  EXPECT_EQ(a, den.sample(2, 4, 5, 11, cap, box, 2, cond));
  // Control residuals start at zero, so the BEV condition has no effect yet.
  EXPECT_EQ(a, den.sample(2, 4, 5, 11, cap, box, 2, {}));
  EXPECT_THROW(den.sample(2, 4, 5, 11, {1.0}, box, 2, cond), ShapeError);
}

TEST(Denoiser, SaveLoad) {
  testing::TempDir dir("denoiser");
  LidarDenoiser::Config cfg;
  cfg.cap_dim = 8;
  const auto den = LidarDenoiser::init(cfg, 6);
  den.save(dir.path() / "d.json");
  const auto back = LidarDenoiser::load(dir.path() / "d.json");
  EXPECT_EQ(back.config().cap_dim, 8u);
  EXPECT_EQ(back.params().entries().size(), den.params().entries().size());
  ToyVelocityModel toy(1);
  save_params(dir.path() / "toy.json", toy.params());
  EXPECT_THROW(LidarDenoiser::load(dir.path() / "toy.json"), FormatError);
}

TEST(TimeEmbedding, ShapeAndValidation) {
  const auto e = time_embedding(0.0, 6);
  ASSERT_EQ(e.size(), 6u);
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[3], 1.0);
  EXPECT_THROW(time_embedding(0.5, 5), ValidationError);
}

}  // namespace
}  // namespace dscene
