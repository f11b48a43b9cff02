#include <gtest/gtest.h>

#include <cmath>

#include "dtp/detail/kernels.hpp"
#include "dtp/error.hpp"
#include "dtp/ops.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "suites.hpp"

namespace dtp {
namespace {

using testing::random_tensor;

// Shapes that the stock AVX-512 dgemm got wrong; both precisions against a plain sum.
TEST(Gemm, TransposedShapesMatchNaiveSum) {
  struct Case { bool ta, tb; std::size_t m, n, k; };
  for (auto c : {Case{false, true, 64, 576, 64}, Case{false, false, 64, 256, 576},
                 Case{true, false, 576, 256, 64}, Case{true, true, 33, 17, 70}}) {
    auto a = random_tensor<double>({c.m * c.k}, 1, -1, 1);
    auto b = random_tensor<double>({c.k * c.n}, 2, -1, 1);
    const std::size_t lda = c.ta ? c.m : c.k, ldb = c.tb ? c.k : c.n;
    std::vector<double> ref(c.m * c.n);
    for (std::size_t i = 0; i < c.m; ++i)
      for (std::size_t j = 0; j < c.n; ++j)
        for (std::size_t p = 0; p < c.k; ++p)
          ref[i * c.n + j] += (c.ta ? a[p * lda + i] : a[i * lda + p]) *
                              (c.tb ? b[j * ldb + p] : b[p * ldb + j]);
    std::vector<double> out(c.m * c.n, 1.0);
    detail::gemm<double>(c.ta, c.tb, c.m, c.n, c.k, 1.0, a.data().data(), lda, b.data().data(),
                         ldb, 0.0, out.data(), c.n);
    std::vector<float> af(a.data().begin(), a.data().end()), bf(b.data().begin(), b.data().end());
    std::vector<float> outf(c.m * c.n);
    detail::gemm<float>(c.ta, c.tb, c.m, c.n, c.k, 1.0f, af.data(), lda, bf.data(), ldb, 0.0f,
                        outf.data(), c.n);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      ASSERT_NEAR(out[i], ref[i], 1e-12) << c.m << "x" << c.n << "x" << c.k;
      ASSERT_NEAR(outf[i], ref[i], 1e-4) << c.m << "x" << c.n << "x" << c.k;
    }
  }
}

TEST(Conv2d, ScalarKernelDoubles) {
  Graph<double> g;
  auto y = conv2d(g, Tensor<double>::full({1, 1, 3, 3}, 1.0), Tensor<double>({1, 1, 1, 1}, {2.0}),
                  Tensor<double>({1}, {0.0}), 1, 0);
  for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, BiasOnly) {
  Graph<double> g;
  auto y = conv2d(g, random_tensor<double>({1, 2, 4, 4}, 1), Tensor<double>::zeros({1, 2, 3, 3}),
                  Tensor<double>({1}, {5.0}), 1, 1);
  for (double v : y.data()) EXPECT_EQ(v, 5.0);
}

TEST(Conv2d, MatchesDirectLoops) {
  auto x = random_tensor<double>({1, 3, 4, 4}, 2);
  auto w = random_tensor<double>({2, 3, 3, 3}, 3);
  auto b = random_tensor<double>({2}, 4);
  Graph<double> g;
  auto y = conv2d(g, x, w, b, 1, 1);
  auto ref = testing::conv2d_direct(x, w, b, 1, 1);
  ASSERT_EQ(y.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
}

TEST(Conv2d, FloatAgreesWithDouble) {
  auto x = random_tensor<double>({1, 8, 9, 7}, 5);
  auto w = random_tensor<double>({5, 8, 3, 3}, 6);
  auto b = random_tensor<double>({5}, 7);
  Graph<double> gd;
  Graph<float> gf;
  auto yd = conv2d(gd, x, w, b, 1, 1);
  auto yf = conv2d(gf, tensor_cast<float>(x), tensor_cast<float>(w), tensor_cast<float>(b), 1, 1);
  for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-5);
}

TEST(Conv2d, ChannelMismatchNamesDims) {
  Graph<double> g;
  try {
    conv2d(g, Tensor<double>({1, 3, 4, 4}), Tensor<double>({2, 4, 3, 3}), Tensor<double>({2}), 1, 1);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2d"), std::string::npos);
  }
}

TEST(MaxPool, WindowMaxAndTieBreak) {
  Graph<double> g;
  auto y = maxpool2d_2x2(g, Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(y[0], 4.0);
  Tensor<double> x({1, 1, 2, 2}, {7, 7, 7, 7}, true);
  Graph<double> g2;
  auto z = maxpool2d_2x2(g2, x);
  EXPECT_EQ(z[0], 7.0);
  g2.backward(sum(g2, z));
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(MaxPool, MatchesLoopOracle) {
  auto x = random_tensor<double>({1, 1, 4, 4}, 8);
  Graph<double> g;
  auto y = maxpool2d_2x2(g, x);
  for (std::size_t oy = 0; oy < 2; ++oy)
    for (std::size_t ox = 0; ox < 2; ++ox) {
      double m = -1e300;
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x[(2 * oy + dy) * 4 + 2 * ox + dx]);
      EXPECT_EQ(y[oy * 2 + ox], m);
    }
}

TEST(Relu, ValuesGradAndIdempotence) {
  Graph<double> g;
  auto y = relu(g, Tensor<double>({3}, {-1, 0, 2}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  Tensor<double> x({3}, {-1, 2, 0}, true);
  Graph<double> g2;
  g2.backward(sum(g2, relu(g2, x)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);  // subgradient at 0
  auto r = random_tensor<double>({50}, 9);
  auto once = relu(g, r);
  auto twice = relu(g, once);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(once[i], twice[i]);
}

TEST(Upsample, HandEvaluatedRow) {
  Graph<double> g;
  auto y = upsample_bilinear_2x(g, Tensor<double>({1, 1, 1, 2}, {0, 1}));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  const double expect[] = {0, 0.25, 0.75, 1};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[r * 4 + i], expect[i]);
}

TEST(Upsample, ConstantsPreserved) {
  Graph<float> g;
  auto y = upsample_bilinear_2x(g, Tensor<float>::full({1, 2, 3, 5}, 0.37f));
  double s = 0;
  for (float v : y.data()) {
    EXPECT_EQ(v, 0.37f);
    s += v;
  }
  EXPECT_NEAR(s, 4 * 0.37 * 30, 1e-4);
}

TEST(Matmul, HandArithmeticAndIdentity) {
  Graph<double> g;
  auto y = matmul(g, Tensor<double>({2, 2}, {1, 2, 3, 4}), Tensor<double>({2, 1}, {5, 6}));
  EXPECT_EQ(y[0], 17.0);
  EXPECT_EQ(y[1], 39.0);
  auto a = random_tensor<double>({3, 4}, 10);
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto ia = matmul(g, eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(ia[i], a[i]);
}

TEST(Matmul, GradOfSumIsRowSumBroadcast) {
  Tensor<double> a = random_tensor<double>({3, 4}, 11);
  a.set_requires_grad(true);
  auto b = random_tensor<double>({4, 2}, 12);
  Graph<double> g;
  g.backward(sum(g, matmul(g, a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[i * 4 + k], b[k * 2] + b[k * 2 + 1], 1e-12);
}

TEST(Softmax, UniformNearOneHotAndHard) {
  Graph<double> g;
  auto u = softmax_rows(g, Tensor<double>({1, 4}, {3, 3, 3, 3}), 1.0);
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto p = softmax_rows(g, Tensor<double>({1, 2}, {1, -1}), 0.07);
  EXPECT_GE(p[0], 1 - 1e-12);
  auto x = random_tensor<double>({5, 9}, 13);
  auto h = softmax_rows(g, x, 1e-6);
  for (std::size_t r = 0; r < 5; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 9; ++c)
      if (x[r * 9 + c] > x[r * 9 + best]) best = c;
    for (std::size_t c = 0; c < 9; ++c) EXPECT_EQ(h[r * 9 + c], c == best ? 1.0 : 0.0);
  }
}

TEST(Reduce, HandValues) {
  Graph<double> g;
  EXPECT_EQ(sum(g, Tensor<double>({3}, {1, 2, 3})).item(), 6.0);
  EXPECT_DOUBLE_EQ(reduce(g, Tensor<double>::full({2, 3}, 1.5), ReduceKind::kMean).item(), 1.5);
  auto s = reduce(g, Tensor<double>({2, 2}, {1, 2, 3, 4}), ReduceKind::kSum, {0});
  ASSERT_EQ(s.shape(), (Shape{2}));
  EXPECT_EQ(s[0], 4.0);
  EXPECT_EQ(s[1], 6.0);
}

TEST(Layout, FlattenUnflattenIsIdentity) {
  auto x = random_tensor<float>({1, 5, 3, 4}, 14);
  Graph<float> g;
  auto f = flatten_positions(g, x);
  ASSERT_EQ(f.shape(), (Shape{12, 5}));
  EXPECT_EQ(f[7 * 5 + 2], x[2 * 12 + 7]);
  auto back = unflatten_positions(g, f, 3, 4);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
}

TEST(Layout, PatchIndexing) {
  auto x = random_tensor<double>({1, 2, 4, 5}, 15);
  Graph<double> g;
  auto p = extract_patches(g, x, 3);
  ASSERT_EQ(p.shape(), (Shape{6, 18}));
  // row y*(W-k+1)+x, column c*k*k + dy*k + dx
  EXPECT_EQ(p[(1 * 3 + 2) * 18 + 1 * 9 + 2 * 3 + 0], x[(1 * 4 + 3) * 5 + 2]);
}

TEST(Stats, NormalizeRowsFloorsZeroRows) {
  Graph<double> g;
  auto n = normalize_rows(g, Tensor<double>({2, 2}, {3, 4, 0, 0}), 1e-8);
  EXPECT_DOUBLE_EQ(n[0], 0.6);
  EXPECT_DOUBLE_EQ(n[1], 0.8);
  EXPECT_EQ(n[2], 0.0);
  EXPECT_EQ(n[3], 0.0);
}

TEST(Stats, ContrastiveUniformCase) {
  Graph<double> g;
  auto q = random_tensor<double>({7, 3}, 16);
  auto k = Tensor<double>::zeros({7, 3});
  EXPECT_NEAR(contrastive_nll(g, q, k, 0.07).item(), 7 * std::log(7.0), 1e-12);
}

TEST(Resize, IdentityAndHalfPixelRow) {
  auto x = random_tensor<float>({1, 3, 5, 6}, 17);
  Graph<float> g;
  auto same = resize_bilinear(g, x, 5, 6);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same[i], x[i]);
  auto row = resize_bilinear(g, Tensor<float>({1, 1, 1, 2}, {0, 1}), 1, 4);
  EXPECT_FLOAT_EQ(row[1], 0.25f);
  EXPECT_FLOAT_EQ(row[2], 0.75f);
}

// --- shared suites ------------------------------------------------------------------

class GradientSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientSuite, FiniteDifferences) {
  const auto& c = testing::gradient_cases().at(GetParam());
  auto r = c.run();
  EXPECT_TRUE(r.ok) << c.name << ": rel err " << r.worst_rel;
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientSuite,
                         ::testing::Range<std::size_t>(0, testing::gradient_cases().size()),
                         [](const auto& info) {
                           std::string n = testing::gradient_cases()[info.param].name;
                           for (char& ch : n)
                             if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
                           return n;
                         });

class OracleSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OracleSuite, MatchesReference) {
  auto r = testing::oracle_cases().at(GetParam()).run();
  EXPECT_TRUE(r.ok) << r.name << ": " << r.detail;
}

INSTANTIATE_TEST_SUITE_P(Oracles, OracleSuite,
                         ::testing::Range<std::size_t>(0, testing::oracle_cases().size()));

}  // namespace
}  // namespace dtp
