#pragma once

// Property suites behind `mvig verify`. Each suite is deterministic for a
// given seed and reports the first counterexample it finds.

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mvig/grad.hpp"
#include "mvig/knn.hpp"
#include "mvig/random.hpp"
#include "mvig/svga.hpp"

namespace mvig {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  std::string summary;
  std::string counterexample;
};

/// Reference KNN: full sort of (distance, index) over all other pixels.
template <typename T>
KnnAdjacency knn_graph_bruteforce(const Tensor4<T>& x, std::size_t k) {
  const std::size_t nodes = x.h() * x.w();
  if (k >= nodes) throw ConfigError("knn_graph_bruteforce: k must be < h*w");
  KnnAdjacency adj{x.n(), nodes, k, {}};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t p = 0; p < nodes; ++p) {
      std::vector<std::pair<T, std::uint32_t>> cand;
      for (std::size_t q = 0; q < nodes; ++q) {
        if (q == p) continue;
        T d = T(0);
        for (std::size_t ch = 0; ch < x.c(); ++ch) {
          const T diff = x.at(n, ch, p / x.w(), p % x.w()) - x.at(n, ch, q / x.w(), q % x.w());
          d += diff * diff;
        }
        cand.emplace_back(d, static_cast<std::uint32_t>(q));
      }
      std::sort(cand.begin(), cand.end());
      for (std::size_t s = 0; s < k; ++s) adj.neighbor_idx.push_back(cand[s].second);
    }
  }
  return adj;
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t p : parts) {
    h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ULL;
  }
  return h;
}

}  // namespace detail

struct OracleSuiteOptions {
  std::vector<std::size_t> dims{1, 2, 4, 7, 8, 14};
  std::vector<std::int64_t> ks{1, 2, 3, 5};
  std::vector<std::size_t> channels{1, 3, 16};
  std::size_t seeds = 100;
  std::size_t batch = 2;
};

/// mrconv_roll == mrconv_gather_oracle bitwise, X_j >= 0, and the fold
/// count equals the fixed graph's neighbour count.
inline SuiteResult verify_oracle(std::uint64_t seed, const OracleSuiteOptions& opt = {}) {
  SuiteResult r{"oracle", true, 0, {}, {}};
  for (std::size_t h : opt.dims) {
    for (std::size_t w : opt.dims) {
      for (std::int64_t k : opt.ks) {
        const FixedGraph graph = build_fixed_offsets(h, w, k);
        for (std::size_t c : opt.channels) {
          for (std::size_t s = 0; s < opt.seeds; ++s) {
            std::mt19937_64 rng(detail::mix_seed(seed, {h, w, static_cast<std::uint64_t>(k), c, s}));
            Tensor4<float> x(Shape4{opt.batch, c, h, w});
            fill_normal(x.data(), rng);
            ConvBn<float> proj(ConvSpec::pointwise(2 * c, c));
            randomize(proj, rng);
            FoldCounter counter;
            const Tensor4<float> xj = max_relative_roll(x, k, &counter);
            const bool same = mrconv_roll(x, k, proj) == mrconv_gather_oracle(x, graph, proj) &&
                              xj == max_relative_gather(x, graph);
            bool nonneg = true;
            for (float v : xj.data()) nonneg = nonneg && v >= 0.0f;
            const bool count_ok = counter.neighbor_terms == graph.neighbor_count() && counter.self_terms == 2;
            ++r.cases;
            if (!(same && nonneg && count_ok)) {
              std::ostringstream os;
              os << "{\"h\":" << h << ",\"w\":" << w << ",\"k\":" << k << ",\"c\":" << c << ",\"case_seed\":" << s
                 << ",\"bitwise_equal\":" << same << ",\"xj_nonnegative\":" << nonneg
                 << ",\"fold_count_ok\":" << count_ok << "}";
              r.passed = false;
              r.counterexample = os.str();
              r.summary = "mismatch";
              return r;
            }
          }
        }
      }
    }
  }
  r.summary = std::to_string(r.cases) + " cases bitwise equal";
  return r;
}

struct EquivarianceSuiteOptions {
  std::vector<std::pair<std::size_t, std::size_t>> grids{{8, 8}, {7, 7}};
  std::size_t weight_seeds = 20;
  std::size_t channels = 8;
  std::int64_t k = 2;
};

/// svga_block_forward(roll(x)) == roll(svga_block_forward(x)) for every shift.
inline SuiteResult verify_equivariance(std::uint64_t seed, const EquivarianceSuiteOptions& opt = {}) {
  SuiteResult r{"equivariance", true, 0, {}, {}};
  for (auto [h, w] : opt.grids) {
    for (std::size_t s = 0; s < opt.weight_seeds; ++s) {
      std::mt19937_64 rng(detail::mix_seed(seed, {h, w, s}));
      const auto block = random_svga_block<float>(opt.channels, opt.k, rng);
      Tensor4<float> x(Shape4{1, opt.channels, h, w});
      fill_normal(x.data(), rng);
      const Tensor4<float> y = svga_block_forward(x, block);
      for (std::size_t d = 0; d < h; ++d) {
        for (std::size_t e = 0; e < w; ++e) {
          const auto dd = static_cast<std::int64_t>(d), ee = static_cast<std::int64_t>(e);
          ++r.cases;
          if (!(svga_block_forward(roll_2d(x, dd, ee), block) == roll_2d(y, dd, ee))) {
            std::ostringstream os;
            os << "{\"h\":" << h << ",\"w\":" << w << ",\"weight_seed\":" << s << ",\"down\":" << d
               << ",\"right\":" << e << "}";
            r.passed = false;
            r.counterexample = os.str();
            r.summary = "block does not commute with shift";
            return r;
          }
        }
      }
    }
  }
  r.summary = std::to_string(r.cases) + " shifts commute bitwise";
  return r;
}

struct GradSuiteOptions {
  std::vector<Shape4> shapes{{1, 2, 4, 4}, {1, 4, 4, 4}, {1, 3, 4, 3}, {2, 2, 4, 4}};
  std::vector<std::int64_t> ks{1, 2};
  double tolerance = 1e-4;
};

inline SuiteResult verify_grad(std::uint64_t seed, const GradSuiteOptions& opt = {}) {
  SuiteResult r{"grad", true, 0, {}, {}};
  double worst = 0.0;
  for (const Shape4& shape : opt.shapes) {
    for (std::int64_t k : opt.ks) {
      const GradCheckReport rep = grad_check_svga(shape, k, detail::mix_seed(seed, {shape.numel(), shape.c,
                                                                                  static_cast<std::uint64_t>(k)}));
      ++r.cases;
      worst = std::max(worst, rep.max_rel_error);
      if (!rep.ok || rep.max_rel_error >= opt.tolerance) {
        std::ostringstream os;
        os << "{\"shape\":\"" << shape.str() << "\",\"k\":" << k << ",\"max_rel_error\":" << rep.max_rel_error
           << ",\"param\":\"" << rep.worst_param << "\",\"index\":" << rep.worst_index << ",\"failure\":\""
           << rep.failure << "\"}";
        r.passed = false;
        r.counterexample = os.str();
        r.summary = "gradient mismatch";
        return r;
      }
    }
  }
  std::ostringstream os;
  os << r.cases << " configurations, max relative error " << worst;
  r.summary = os.str();
  return r;
}

struct KnnSuiteOptions {
  std::vector<std::pair<std::size_t, std::size_t>> grids{{2, 2}, {3, 5}, {4, 4}, {7, 7}, {8, 8}, {16, 16}};
  std::vector<std::size_t> ks{1, 3, 9};
  std::size_t channels = 4;
  std::size_t seeds = 50;
};

/// knn_graph agrees with the brute-force sort (ties included), and
/// mrconv_knn over the fixed graph's adjacency equals the gather oracle.
inline SuiteResult verify_knn(std::uint64_t seed, const KnnSuiteOptions& opt = {}) {
  SuiteResult r{"knn", true, 0, {}, {}};
  for (auto [h, w] : opt.grids) {
    for (std::size_t k : opt.ks) {
      if (k >= h * w) continue;
      for (std::size_t s = 0; s < opt.seeds; ++s) {
        std::mt19937_64 rng(detail::mix_seed(seed, {h, w, k, s}));
        Tensor4<float> x(Shape4{1, opt.channels, h, w});
        if (s % 2 == 0) {
          fill_normal(x.data(), rng);
        } else {
          // Small integer features: many exact distance ties.
          std::uniform_int_distribution<int> small(0, 2);
          for (float& v : x.data()) v = static_cast<float>(small(rng));
        }
        ++r.cases;
        if (knn_graph(x, k).neighbor_idx != knn_graph_bruteforce(x, k).neighbor_idx) {
          std::ostringstream os;
          os << "{\"h\":" << h << ",\"w\":" << w << ",\"k\":" << k << ",\"case_seed\":" << s << "}";
          r.passed = false;
          r.counterexample = os.str();
          r.summary = "knn_graph differs from brute force";
          return r;
        }
      }
    }
    const FixedGraph g = build_fixed_offsets(h, w, 2);
    std::mt19937_64 rng(detail::mix_seed(seed, {h, w, 99}));
    Tensor4<float> x(Shape4{2, opt.channels, h, w});
    fill_normal(x.data(), rng);
    ConvBn<float> proj(ConvSpec::pointwise(2 * opt.channels, opt.channels));
    randomize(proj, rng);
    ++r.cases;
    if (!(mrconv_knn(x, adjacency_from_fixed_graph(g, 2), proj) == mrconv_gather_oracle(x, g, proj))) {
      r.passed = false;
      r.counterexample = "{\"h\":" + std::to_string(h) + ",\"w\":" + std::to_string(w) + ",\"fixed_graph_k\":2}";
      r.summary = "mrconv_knn on fixed adjacency differs from gather oracle";
      return r;
    }
  }
  r.summary = std::to_string(r.cases) + " cases exact";
  return r;
}

}  // namespace mvig
