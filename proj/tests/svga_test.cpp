#include <gtest/gtest.h>

#include <random>

#include "mvig/random.hpp"
#include "mvig/svga.hpp"

namespace mvig {
namespace {

TEST(FixedGraph, OffsetsFromGridAndStride) {
  const auto g = build_fixed_offsets(8, 8, 2);
  EXPECT_EQ(g.row_offsets, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(g.col_offsets, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(g.neighbor_count(), 6u);

  const auto empty = build_fixed_offsets(4, 4, 4);
  EXPECT_TRUE(empty.row_offsets.empty());
  EXPECT_TRUE(empty.col_offsets.empty());

  const auto odd = build_fixed_offsets(7, 5, 2);
  EXPECT_EQ(odd.col_offsets, (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_EQ(odd.row_offsets, (std::vector<std::size_t>{2, 4}));

  EXPECT_THROW(build_fixed_offsets(4, 4, 0), ConfigError);
  EXPECT_THROW(build_fixed_offsets(4, 4, -3), ConfigError);
}

TEST(FixedGraph, NeighbourCountFormula) {
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w)
      for (std::int64_t k = 1; k <= 6; ++k) {
        const auto g = build_fixed_offsets(h, w, k);
        const auto kk = static_cast<std::size_t>(k);
        EXPECT_EQ(g.neighbor_count(), (h + kk - 1) / kk - 1 + (w + kk - 1) / kk - 1);
        for (std::size_t i = 1; i < g.row_offsets.size(); ++i) EXPECT_LT(g.row_offsets[i - 1], g.row_offsets[i]);
        for (std::size_t off : g.row_offsets) EXPECT_LT(off, w);
        for (std::size_t off : g.col_offsets) EXPECT_LT(off, h);
      }
}

TEST(MaxRelative, HandGatheredColumn) {
  Tensor4<float> x(Shape4{1, 1, 4, 1}, {1, 5, 2, 8});
  const auto g = build_fixed_offsets(4, 1, 2);
  const auto xj = max_relative_gather(x, g);
  // pixel 0: 1-2 -> 0; pixel 1: 5-8 -> 0; pixel 2: 2-1 = 1; pixel 3: 8-5 = 3
  EXPECT_EQ(xj.storage(), (std::vector<float>{0, 0, 1, 3}));
  EXPECT_EQ(max_relative_roll(x, 2), xj);
}

TEST(MaxRelative, ConstantInputGivesZero) {
  Tensor4<float> x(Shape4{2, 3, 6, 5}, 4.25f);
  EXPECT_EQ(max_relative_roll(x, 2), Tensor4<float>(x.shape()));

  std::mt19937_64 rng(1);
  ConvBn<float> proj(ConvSpec::pointwise(6, 3));
  randomize(proj, rng);
  EXPECT_EQ(mrconv_roll(x, 2, proj), proj.forward(concat_channels(x, Tensor4<float>(x.shape()))));
}

TEST(MaxRelative, SelfTermSeedIsEquivalentToZeroInit) {
  std::mt19937_64 rng(2);
  Tensor4<float> x(Shape4{1, 2, 6, 6});
  fill_normal(x.data(), rng);
  // Seed with the m = 0 term instead of zeros.
  Tensor4<float> seeded = elem_sub(x, roll_2d(x, 0, 0));
  for (std::int64_t m = 1; m * 2 < 6; ++m) seeded = elem_max(elem_sub(x, roll_2d(x, m * 2, 0)), seeded);
  for (std::int64_t m = 0; m * 2 < 6; ++m) seeded = elem_max(elem_sub(x, roll_2d(x, 0, m * 2)), seeded);
  EXPECT_EQ(seeded, max_relative_roll(x, 2));
}

TEST(MaxRelative, EmptyGraphOracleIsZero) {
  std::mt19937_64 rng(3);
  Tensor4<float> x(Shape4{1, 2, 4, 4});
  fill_normal(x.data(), rng);
  const auto g = build_fixed_offsets(4, 4, 4);
  ConvBn<float> proj(ConvSpec::pointwise(4, 2));
  randomize(proj, rng);
  EXPECT_EQ(mrconv_gather_oracle(x, g, proj), proj.forward(concat_channels(x, Tensor4<float>(x.shape()))));
}

TEST(MaxRelative, RollEqualsGatherOnRandomInputs) {
  for (std::size_t h : {1, 2, 4, 7, 8, 14}) {
    for (std::size_t w : {1, 4, 7, 14}) {
      for (std::int64_t k : {1, 2, 3}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          std::mt19937_64 rng(seed * 7919 + h * 31 + w);
          Tensor4<float> x(Shape4{2, 3, h, w});
          fill_normal(x.data(), rng);
          ConvBn<float> proj(ConvSpec::pointwise(6, 3));
          randomize(proj, rng);
          const auto g = build_fixed_offsets(h, w, k);
          ASSERT_EQ(mrconv_roll(x, k, proj), mrconv_gather_oracle(x, g, proj)) << h << "x" << w << " k=" << k;
        }
      }
    }
  }
}

TEST(MaxRelative, NonNegativeAndInstrumentedCount) {
  std::mt19937_64 rng(4);
  Tensor4<float> x(Shape4{1, 4, 7, 9});
  fill_normal(x.data(), rng);
  FoldCounter counter;
  const auto xj = max_relative_roll(x, 3, &counter);
  for (float v : xj.data()) EXPECT_GE(v, 0.0f);
  EXPECT_EQ(counter.self_terms, 2u);
  EXPECT_EQ(counter.neighbor_terms, (7 + 2) / 3 - 1 + (9 + 2) / 3 - 1);
}

TEST(MaxRelative, Errors) {
  Tensor4<float> x(Shape4{1, 2, 4, 4});
  EXPECT_THROW(max_relative_roll(x, 0), ConfigError);
  EXPECT_THROW(max_relative_gather(x, build_fixed_offsets(4, 5, 2)), ConfigError);
  ConvBn<float> bad(ConvSpec::pointwise(2, 2));
  EXPECT_THROW(mrconv_roll(x, 2, bad), ConfigError);
}

TEST(Grapher, ZeroWeightsAreResidualOnly) {
  std::mt19937_64 rng(5);
  Tensor4<float> x(Shape4{2, 4, 5, 5});
  fill_normal(x.data(), rng);
  GrapherWeights<float> g(4);
  EXPECT_EQ(grapher_forward(x, g, 2), x);
  EXPECT_THROW(grapher_forward(Tensor4<float>(1, 3, 5, 5), g, 2), ConfigError);
}

TEST(Grapher, ShapePreservingAndEquivariant) {
  std::mt19937_64 rng(6);
  const auto block = random_svga_block<float>(6, 2, rng);
  Tensor4<float> x(Shape4{1, 6, 8, 8});
  fill_normal(x.data(), rng);
  const auto y = grapher_forward(x, block.grapher, 2);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::int64_t d : {0, 1, 3, 7})
    for (std::int64_t e : {0, 2, 5}) EXPECT_EQ(grapher_forward(roll_2d(x, d, e), block.grapher, 2), roll_2d(y, d, e));
}

TEST(Ffn, ZeroWeightsIdentityAndHiddenWidth) {
  std::mt19937_64 rng(7);
  Tensor4<float> x(Shape4{1, 8, 3, 3});
  fill_normal(x.data(), rng);
  FfnWeights<float> f(8, 4);
  EXPECT_EQ(ffn_forward(x, f), x);
  EXPECT_EQ(f.fc1.forward(x).c(), 32u);
  EXPECT_THROW(ffn_forward(Tensor4<float>(1, 4, 3, 3), f), ConfigError);
}

TEST(Ffn, ScalarChain) {
  FfnWeights<double> f(1, 1);
  f.fc1.weight.at(0, 0, 0, 0) = 1.0;
  f.fc2.weight.at(0, 0, 0, 0) = 1.0;
  f.fc1.bn.eps = 0.0;
  f.fc2.bn.eps = 0.0;
  for (double v : {-1.5, -0.2, 0.0, 0.7, 2.0}) {
    Tensor4<double> x(Shape4{1, 1, 1, 1}, v);
    const double expected = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))) + v;
    EXPECT_DOUBLE_EQ(ffn_forward(x, f).at(0, 0, 0, 0), expected);
  }
}

TEST(SvgaBlock, ZeroWeightsIdentityAndStage4Shape) {
  std::mt19937_64 rng(8);
  Tensor4<float> x(Shape4{1, 256, 7, 7});
  fill_normal(x.data(), rng);
  SvgaBlockWeights<float> zero(256, 2);
  EXPECT_EQ(svga_block_forward(x, zero), x);

  const auto block = random_svga_block<float>(256, 2, rng, 0.05);
  EXPECT_EQ(svga_block_forward(x, block).shape(), (Shape4{1, 256, 7, 7}));
}

TEST(SvgaBlock, TranslationEquivariance) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {7, 7}, {6, 9}}) {
    std::mt19937_64 rng(h * 100 + w);
    const auto block = random_svga_block<float>(4, 2, rng);
    Tensor4<float> x(Shape4{2, 4, h, w});
    fill_normal(x.data(), rng);
    const auto y = svga_block_forward(x, block);
    for (std::size_t d = 0; d < h; ++d)
      for (std::size_t e = 0; e < w; ++e) {
        const auto dd = static_cast<std::int64_t>(d), ee = static_cast<std::int64_t>(e);
        ASSERT_EQ(svga_block_forward(roll_2d(x, dd, ee), block), roll_2d(y, dd, ee)) << d << "," << e;
      }
  }
}

TEST(SvgaBlock, BatchIndependence) {
  std::mt19937_64 rng(9);
  const auto block = random_svga_block<float>(5, 2, rng);
  Tensor4<float> x(Shape4{3, 5, 7, 7});
  fill_normal(x.data(), rng);
  const auto y = svga_block_forward(x, block);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(svga_block_forward(batch_slice(x, b), block), batch_slice(y, b));
}

}  // namespace
}  // namespace mvig
