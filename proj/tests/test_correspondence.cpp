#include <gtest/gtest.h>

#include <sstream>

#include "dtp/correspondence.hpp"
#include "dtp/error.hpp"
#include "dtp/ops.hpp"
#include "oracles.hpp"

namespace dtp {
namespace {

using testing::random_tensor;

// Two positions, two channels: position 0 = (1,0), position 1 = (0,1).
Tensor<double> two_positions() { return Tensor<double>({1, 2, 1, 2}, {1, 0, 0, 1}); }

TEST(Centralize, HandArithmeticAndIdempotence) {
  Graph<double> g;
  auto c = centralize(g, flatten(g, two_positions()));
  EXPECT_DOUBLE_EQ(c.rows[0], 0.5);
  EXPECT_DOUBLE_EQ(c.rows[1], -0.5);
  EXPECT_DOUBLE_EQ(c.rows[2], -0.5);
  EXPECT_DOUBLE_EQ(c.rows[3], 0.5);
  auto cc = centralize(g, c);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(cc.rows[i], c.rows[i]);
  auto k = centralize(g, flatten(g, Tensor<double>::full({1, 3, 2, 2}, 4.0)));
  for (double v : k.rows.data()) EXPECT_EQ(v, 0.0);
}

TEST(Correlation, HandMatrixAndSelfDiagonal) {
  Graph<double> g;
  auto f = flatten(g, two_positions());
  auto corr = correlation(g, f, f, 0.07);
  EXPECT_NEAR(corr.m[0], 1.0, 1e-12);
  EXPECT_NEAR(corr.m[1], -1.0, 1e-12);
  EXPECT_NEAR(corr.m[2], -1.0, 1e-12);
  EXPECT_NEAR(corr.m[3], 1.0, 1e-12);

  Graph<float> gf;
  auto r = flatten(gf, random_tensor<float>({1, 16, 6, 6}, 1));
  auto self = correlation(gf, r, r, 0.07f);
  for (std::size_t u = 0; u < 36; ++u) EXPECT_NEAR(self.m[u * 36 + u], 1.0f, 1e-5f);
}

TEST(Correlation, ConstantContentIsZero) {
  Graph<double> g;
  auto corr = correlation(g, flatten(g, Tensor<double>::full({1, 4, 3, 3}, 2.0)),
                          flatten(g, random_tensor<double>({1, 4, 2, 2}, 2)), 0.07);
  for (double v : corr.m.data()) EXPECT_EQ(v, 0.0);
}

TEST(WarpFeature, SingleStylePosition) {
  Graph<double> g;
  auto fs = flatten(g, Tensor<double>({1, 3, 1, 1}, {0.3, -2.0, 5.0}));
  auto fc = flatten(g, random_tensor<double>({1, 3, 4, 4}, 3));
  auto r = warp_feature(g, correlation(g, fc, fs, 0.07), fs);
  for (std::size_t u = 0; u < 16; ++u) {
    EXPECT_DOUBLE_EQ(r.rows[u * 3 + 0], 0.3);
    EXPECT_DOUBLE_EQ(r.rows[u * 3 + 1], -2.0);
    EXPECT_DOUBLE_EQ(r.rows[u * 3 + 2], 5.0);
  }
}

TEST(WarpFeature, PaperTemperatureNearOneHot) {
  Graph<double> g;
  auto f = flatten(g, two_positions());
  auto fs = flatten(g, Tensor<double>({1, 2, 1, 2}, {3.0, -7.0, 11.0, 13.0}));
  auto r = warp_feature(g, correlation(g, f, f, 0.07), fs);
  EXPECT_NEAR(r.rows[0], 3.0, 1e-9);
  EXPECT_NEAR(r.rows[1], 11.0, 1e-9);
  EXPECT_NEAR(r.rows[2], -7.0, 1e-9);
  EXPECT_NEAR(r.rows[3], 13.0, 1e-9);
}

TEST(WarpFeature, HardLimitMatchesGather) {
  auto fc = random_tensor<double>({1, 6, 4, 5}, 4);
  auto fs = random_tensor<double>({1, 6, 3, 4}, 5);
  Graph<double> g;
  auto ffs = flatten(g, fs);
  auto r = warp_feature(g, correlation(g, flatten(g, fc), ffs, 1e-6), ffs);
  auto ref = testing::hard_warp(fc, fs);
  for (std::size_t u = 0; u < ref.size(); ++u)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(r.rows[u * 6 + c], ref[u][c]);
}

TEST(WarpImage, UniformPermutationAndConstant) {
  Graph<double> g;
  auto style = random_tensor<double>({1, 3, 2, 3}, 6, 0, 1);
  Tensor<double> zeros({4, 6});
  auto w = softmax_rows(g, zeros, 0.07);
  auto out = apply_warp_image(g, w, style, 2, 2);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 6; ++i) mean += style[c * 6 + i];
    mean /= 6;
    for (std::size_t u = 0; u < 4; ++u) EXPECT_NEAR(out[c * 4 + u], mean, 1e-12);
  }
  // one-hot rows gather pixels
  Tensor<double> onehot({4, 6});
  const std::size_t pick[4] = {5, 0, 3, 3};
  for (std::size_t u = 0; u < 4; ++u) onehot[u * 6 + pick[u]] = 1.0;
  auto gathered = apply_warp_image(g, softmax_rows(g, onehot, 1e-6), style, 2, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t u = 0; u < 4; ++u) EXPECT_EQ(gathered[c * 4 + u], style[c * 6 + pick[u]]);
  auto fc = flatten(g, random_tensor<double>({1, 4, 2, 2}, 7));
  auto fs = flatten(g, random_tensor<double>({1, 4, 2, 3}, 8));
  auto flat = warp_image(g, correlation(g, fc, fs, 0.07), Tensor<double>::full({1, 3, 2, 3}, 0.4));
  for (double v : flat.data()) EXPECT_NEAR(v, 0.4, 1e-12);
}

TEST(Cycle, IdentityOneHotRoundTrip) {
  Graph<double> g;
  auto fc = flatten(g, random_tensor<double>({1, 3, 2, 2}, 9));
  auto fs = flatten(g, random_tensor<double>({1, 3, 2, 2}, 10));
  CorrelationMatrix<double> corr{Tensor<double>({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}),
                                 1e-6, 2, 2};
  auto cyc = cycle_reconstruct(g, corr, fs, fc);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(cyc.r_c.rows[i], fc.rows[i], 1e-6);
    EXPECT_NEAR(cyc.r_s.rows[i], fs.rows[i], 1e-6);
  }
}

TEST(Cycle, UniformAveragesAndConvexHull) {
  Graph<double> g;
  auto fc = flatten(g, random_tensor<double>({1, 3, 2, 3}, 11));
  auto fs = flatten(g, random_tensor<double>({1, 3, 3, 2}, 12));
  CorrelationMatrix<double> uniform{Tensor<double>({6, 6}), 0.07, 2, 3};
  auto cyc = cycle_reconstruct(g, uniform, fs, fc);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t v = 0; v < 6; ++v) mean += fs.rows[v * 3 + c];
    mean /= 6;
    for (std::size_t v = 0; v < 6; ++v) EXPECT_NEAR(cyc.r_s.rows[v * 3 + c], mean, 1e-12);
  }
  auto corr = correlation(g, fc, fs, 0.07);
  auto real = cycle_reconstruct(g, corr, fs, fc);
  for (std::size_t c = 0; c < 3; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t v = 0; v < 6; ++v) {
      lo = std::min(lo, fs.rows[v * 3 + c]);
      hi = std::max(hi, fs.rows[v * 3 + c]);
    }
    for (std::size_t v = 0; v < 6; ++v) {
      EXPECT_GE(real.r_s.rows[v * 3 + c], lo - 1e-12);
      EXPECT_LE(real.r_s.rows[v * 3 + c], hi + 1e-12);
    }
  }
}

TEST(Matches, CsvHeaderAndRows) {
  Graph<double> g;
  auto f = flatten(g, two_positions());
  std::ostringstream os;
  write_matches_csv(correlation(g, f, f, 0.07), os);
  EXPECT_EQ(os.str(), "u,argmax_v,similarity\n0,0,1\n1,1,1\n");
}

TEST(Correspondence, ShapeErrors) {
  Graph<double> g;
  auto a = flatten(g, random_tensor<double>({1, 3, 2, 2}, 13));
  auto b = flatten(g, random_tensor<double>({1, 4, 2, 2}, 14));
  EXPECT_THROW(correlation(g, a, b, 0.07), ContractError);
}

}  // namespace
}  // namespace dtp
