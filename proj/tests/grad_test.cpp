#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "mvig/grad.hpp"
#include "mvig/random.hpp"

namespace mvig {
namespace {

TEST(GradCheck, LinearSubNetworkIsExact) {
  GradCheckOptions opts;
  opts.act = Activation::Identity;
  // Affine pieces: the only error left is finite-difference round-off,
  // about eps * |loss| / step, so compare with an absolute floor of 1.
  opts.denominator_floor = 1.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto rep = grad_check_svga({1, 4, 4, 4}, 2, seed, opts);
    ASSERT_TRUE(rep.ok) << rep.failure;
    EXPECT_LT(rep.max_rel_error, 1e-7) << rep.worst_param << "[" << rep.worst_index << "]";
  }
}

TEST(GradCheck, FullBlockMatchesFiniteDifferences) {
  const auto rep = grad_check_svga({1, 4, 4, 4}, 2, 42);
  ASSERT_TRUE(rep.ok) << rep.failure;
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
  // input (64) + every trainable tensor of a C=4 block
  EXPECT_GT(rep.coordinates_checked, 400u);
}

TEST(GradCheck, OtherShapesAndStrides) {
  for (const Shape4& s : {Shape4{1, 2, 4, 4}, Shape4{2, 3, 4, 3}, Shape4{1, 3, 5, 4}}) {
    for (std::int64_t k : {1, 2, 3}) {
      const auto rep = grad_check_svga(s, k, 7 + k);
      ASSERT_TRUE(rep.ok) << rep.failure;
      EXPECT_LT(rep.max_rel_error, 1e-4) << s.str() << " k=" << k << " " << rep.worst_param;
    }
  }
}

TEST(GradCheck, RejectsLargeShapes) { EXPECT_THROW(grad_check_svga({1, 16, 16, 17}, 2, 0), ConfigError); }

TEST(GradCheck, ReportsNonFiniteGradientByName) {
  std::mt19937_64 rng(1);
  auto wts = random_svga_block<double>(2, 2, rng, 0.5);
  wts.ffn.fc2.bn.mean[1] = std::numeric_limits<double>::infinity();
  Tensor4<double> x(Shape4{1, 2, 4, 4});
  fill_normal(x.data(), rng);
  const auto rep = grad_check_block(x, wts);
  EXPECT_FALSE(rep.ok);
  EXPECT_EQ(rep.worst_param, "ffn.fc2.bn.gamma");
  EXPECT_NE(rep.failure.find("ffn.fc2.bn.gamma"), std::string::npos);
}

TEST(Backward, TapedForwardMatchesPublicForward) {
  std::mt19937_64 rng(2);
  const auto wts = random_svga_block<double>(3, 2, rng, 0.5);
  Tensor4<double> x(Shape4{2, 3, 6, 5});
  fill_normal(x.data(), rng);
  EXPECT_EQ(svga_block_taped(x, wts).output, svga_block_forward(x, wts));
}

TEST(Backward, MaxRoutesToWinnerOnly) {
  // Column (1, 5, 2, 8), k = 2: winners are pixel 2 (2 - 1) and pixel 3 (8 - 5).
  Tensor4<double> x(Shape4{1, 1, 4, 1}, {1, 5, 2, 8});
  const auto tape = detail::max_relative_taped(x, 2);
  EXPECT_EQ(tape.xj.storage(), (std::vector<double>{0, 0, 1, 3}));
  Tensor4<double> ones(x.shape(), 1.0);
  const auto dx = detail::max_relative_backward(tape, ones);
  EXPECT_EQ(dx.storage(), (std::vector<double>{-1, -1, 1, 1}));
}

TEST(Backward, GradientIsBlockDiagonalInBatch) {
  std::mt19937_64 rng(3);
  const auto wts = random_svga_block<double>(3, 2, rng, 0.5);
  Tensor4<double> x(Shape4{3, 3, 4, 4});
  fill_normal(x.data(), rng);
  const auto y = svga_block_forward(x, wts);
  for (std::size_t idx : {std::size_t{0}, std::size_t{17}, x.size() / 2, x.size() - 1}) {
    Tensor4<double> xp = x;
    xp.data()[idx] += 0.25;
    const auto yp = svga_block_forward(xp, wts);
    const std::size_t b = idx / (x.size() / x.n());
    for (std::size_t other = 0; other < x.n(); ++other) {
      if (other == b) continue;
      EXPECT_EQ(batch_slice(yp, other), batch_slice(y, other));
    }
    EXPECT_FALSE(batch_slice(yp, b) == batch_slice(y, b));
  }
}

}  // namespace
}  // namespace mvig
