#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "dscene/error.hpp"
#include "dscene/params.hpp"
#include "dscene/tensor.hpp"
#include "grad_cases.hpp"
#include "test_support.hpp"

namespace dscene {
namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(Tensor, MatmulIdentity) {
  ad::Tape tape;
  std::mt19937_64 rng(1);
  const auto av = testing::uniform_vec(rng, 12);
  const auto eye = tape.constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto a = tape.constant({3, 4}, av);
  EXPECT_EQ(to_vec(ad::matmul(eye, a).values()), av);
}

TEST(Tensor, MatmulByHand) {
  ad::Tape tape;
  const auto a = tape.constant({2, 2}, {1, 2, 3, 4});
  const auto b = tape.constant({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(to_vec(ad::matmul(a, b).values()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Tensor, SoftmaxConstantRowIsUniform) {
  ad::Tape tape;
  const auto y = ad::softmax_lastdim(tape.constant({2, 4}, std::vector<double>(8, 3.5)));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Tensor, SoftmaxRowsSumToOneForLargeInputs) {
  ad::Tape tape;
  const auto y = ad::softmax_lastdim(tape.constant({1, 3}, {1000.0, 1001.0, -1000.0}));
  const auto v = y.values();
  EXPECT_NEAR(v[0] + v[1] + v[2], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(v[0]));
}

TEST(Tensor, LayerNormMoments) {
  ad::Tape tape;
  std::mt19937_64 rng(4);
  const auto x = tape.constant({5, 8}, testing::uniform_vec(rng, 40, -3.0, 3.0));
  const auto y = ad::layer_norm_lastdim(x, tape.filled({8}, 1.0), tape.zeros({8}));
  const auto v = y.values();
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, s = 0;
    for (std::size_t c = 0; c < 8; ++c) m += v[r * 8 + c];
    m /= 8;
    for (std::size_t c = 0; c < 8; ++c) s += (v[r * 8 + c] - m) * (v[r * 8 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(s / 8, 1.0, 1e-9);
  }
}

TEST(Tensor, SumGradientIsOnes) {
  ad::Tape tape;
  const auto a = tape.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  tape.backward(ad::sum(a));
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, SumMatmulGradientIsRowSumsOfB) {
  // d/dA_ik sum_ij (AB)_ij = sum_j B_kj.
  ad::Tape tape;
  const auto a = tape.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto b = tape.leaf({3, 2}, {1, -1, 2, 0.5, -3, 4});
  tape.backward(ad::sum(ad::matmul(a, b)));
  const std::vector<double> row_sums{0.0, 2.5, 1.0};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(a.grad()[i * 3 + k], row_sums[k]);
  // d/dB_kj = sum_i A_ik.
  const std::vector<double> col_sums{5, 7, 9};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(b.grad()[k * 2 + j], col_sums[k]);
}

TEST(Tensor, DuplicatedInputAccumulates) {
  // y = sum(x * x) + sum(x) => dy/dx = 2x + 1.
  ad::Tape tape;
  const auto x = tape.leaf({3}, {0.5, -2.0, 3.0});
  tape.backward(ad::add(ad::sum(ad::mul(x, x)), ad::sum(x)));
  EXPECT_EQ(to_vec(x.grad()), (std::vector<double>{2.0, -3.0, 7.0}));
}

TEST(Tensor, BackwardIsDeterministic) {
  auto run = [] {
    ad::Tape tape;
    std::mt19937_64 rng(9);
    const auto a = tape.leaf({4, 4}, testing::uniform_vec(rng, 16));
    const auto s = ad::softmax_lastdim(ad::matmul(a, ad::transpose(a)));
    tape.backward(testing::weighted_sum(s, 3));
    return to_vec(a.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, ErrorsNameShapes) {
  ad::Tape tape;
  const auto a = tape.zeros({2, 3});
  const auto b = tape.zeros({4, 2});
  try {
    (void)ad::matmul(a, b);
    FAIL() << "matmul accepted [2, 3] x [4, 2]";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4, 2]"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)ad::add(a, tape.zeros({3, 2})), ShapeError);
  EXPECT_THROW((void)ad::reshape(a, {5}), ShapeError);
  EXPECT_THROW(tape.backward(a), ShapeError);
  EXPECT_THROW(tape.leaf({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, ConcatAndPermuteValues) {
  ad::Tape tape;
  const auto a = tape.constant({2, 1}, {1, 2});
  const auto b = tape.constant({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(to_vec(ad::concat_lastdim(a, b).values()), (std::vector<double>{1, 3, 4, 2, 5, 6}));
  EXPECT_EQ(to_vec(ad::transpose(b).values()), (std::vector<double>{3, 5, 4, 6}));
  const auto c = tape.constant({1, 2, 3}, {0, 1, 2, 3, 4, 5});
  const auto p = ad::permute(c, {2, 0, 1});
  EXPECT_EQ(p.shape(), (ad::Shape{3, 1, 2}));
  EXPECT_EQ(to_vec(p.values()), (std::vector<double>{0, 3, 1, 4, 2, 5}));
}

TEST(Tensor, BinaryCrossEntropyClosedForm) {
  ad::Tape tape;
  const auto p = tape.constant({4}, std::vector<double>(4, 0.5));
  const auto t = tape.constant({4}, {0, 1, 1, 0});
  EXPECT_NEAR(ad::binary_cross_entropy(p, t).item(), std::log(2.0), 1e-12);
  const auto ones = tape.constant({4}, std::vector<double>(4, 1.0));
  EXPECT_LE(ad::binary_cross_entropy(ones, ones).item(), 1e-6);
}

class PrimitiveGrad : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGrad, MatchesCentralDifferences) {
  for (const auto& c : testing::primitive_cases(GetParam())) {
    const auto r = testing::gradcheck(c.build, c.inputs);
    EXPECT_TRUE(r.ok) << c.name << ": " << r.worst;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGrad, ::testing::Values(0u, 1u, 2u, 3u, 4u));

TEST(Params, AddGetAndErrors) {
  ParameterStore s;
  s.add("a", {2, 2}, {1, 2, 3, 4});
  s.add_zeros("b", {3});
  EXPECT_EQ(s.total_size(), 7u);
  EXPECT_EQ(s.get("a").values[3], 4.0);
  EXPECT_THROW(s.add("a", {1}, {0}), ValidationError);
  EXPECT_THROW(s.add("c", {2}, {0}), ShapeError);
  EXPECT_THROW(s.get("zz"), ValidationError);
}

TEST(Params, SaveLoadRoundTrip) {
  testing::TempDir dir("params");
  ParameterStore s;
  std::mt19937_64 rng(2);
  s.add_uniform("w", {3, 4}, 0.5, rng);
  s.add("b", {2}, {0.25, -0.125});
  s.meta["model"] = "unit";
  save_params(dir.path() / "m.json", s);
  const auto back = load_params(dir.path() / "m.json");
  ASSERT_EQ(back.entries().size(), 2u);
  EXPECT_EQ(back.entries()[0].name, "w");
  EXPECT_EQ(back.get("b").values, s.get("b").values);
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_EQ(back.get("w").values[i], static_cast<double>(static_cast<float>(s.get("w").values[i])));
  EXPECT_EQ(back.meta.at("model"), "unit");
  EXPECT_THROW(load_params(dir.path() / "missing.json"), FormatError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first Adam step is lr * sign(g) (up to eps).
  ParameterStore s;
  s.add("x", {3}, {1.0, -2.0, 0.5});
  ad::Tape tape;
  const BoundParams p(s, tape);
  tape.backward(ad::sum(ad::square(p["x"])));
  Adam opt(0.1);
  opt.step(s, p);
  EXPECT_NEAR(s.get("x").values[0], 0.9, 1e-6);
  EXPECT_NEAR(s.get("x").values[1], -1.9, 1e-6);
  EXPECT_NEAR(s.get("x").values[2], 0.4, 1e-6);
}

TEST(Adam, MinimizesQuadratic) {
  ParameterStore s;
  s.add("x", {2}, {3.0, -4.0});
  Adam opt(0.05);
  for (int i = 0; i < 2000; ++i) {
    ad::Tape tape;
    const BoundParams p(s, tape);
    tape.backward(ad::sum(ad::square(ad::add_scalar(p["x"], -1.0))));
    opt.step(s, p);
  }
  EXPECT_NEAR(s.get("x").values[0], 1.0, 1e-3);
  EXPECT_NEAR(s.get("x").values[1], 1.0, 1e-3);
}

TEST(Adam, ZeroLearningRateLeavesParams) {
  ParameterStore s;
  s.add("x", {2}, {3.0, -4.0});
  const auto before = s.get("x").values;
  ad::Tape tape;
  const BoundParams p(s, tape);
  tape.backward(ad::sum(ad::square(p["x"])));
  Adam opt(0.0);
  opt.step(s, p);
  EXPECT_EQ(s.get("x").values, before);
}

}  // namespace
}  // namespace dscene
