#pragma once

// Wall-clock timing of the graph aggregation step: rolls + max for SVGA,
// graph construction + reshapes + gather + max for the KNN baseline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mvig/knn.hpp"
#include "mvig/svga.hpp"

namespace mvig {

enum class Mechanism { Svga, Knn };

inline std::string to_string(Mechanism m) { return m == Mechanism::Svga ? "svga" : "knn"; }

inline Mechanism parse_mechanism(const std::string& s) {
  if (s == "svga") return Mechanism::Svga;
  if (s == "knn") return Mechanism::Knn;
  throw InputError("unknown mechanism '" + s + "' (expected svga or knn)");
}

struct BenchCase {
  Mechanism mechanism = Mechanism::Svga;
  std::size_t h = 14, w = 14, c = 256;
  std::int64_t k = 2;        // SVGA connection stride
  std::size_t knn_k = 9;     // KNN neighbours
  std::size_t batch = 1;
  std::size_t reps = 100;
  std::size_t warmup = 5;
  std::size_t threads = 1;
  bool include_projection = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (h == 0 || w == 0 || c == 0 || batch == 0) throw InputError("bench: dimensions must be >= 1");
    if (reps < 30) throw InputError("bench: reps must be >= 30");
    if (warmup < 5) throw InputError("bench: warmup must be >= 5");
    if (threads == 0) throw InputError("bench: threads must be >= 1");
    if (k < 1) throw InputError("bench: k must be >= 1");
    if (mechanism == Mechanism::Knn && knn_k >= h * w) throw InputError("bench: knn-k must be < h*w");
  }
};

struct BenchRecord {
  BenchCase config;
  double median_ns = 0, p10_ns = 0, p90_ns = 0;
  std::vector<double> samples_ns;
};

struct BenchEnvironment {
  std::size_t threads = 1;
  std::size_t scalar_bits = 32;
  std::string build_profile;
};

struct BenchReport {
  std::vector<BenchRecord> records;
  BenchEnvironment env;
};

inline std::string build_profile() {
#ifdef MVIG_BUILD_PROFILE
  return MVIG_BUILD_PROFILE;
#elif defined(NDEBUG)
  return "release";
#else
  return "debug";
#endif
}

/// Linear-interpolation quantile of already sorted samples.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline BenchRecord run_bench(const BenchCase& bc) {
  bc.validate();
  std::mt19937_64 rng(bc.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);

  // Inputs are split by batch element up front; each worker owns a slice.
  const std::size_t workers = std::min(bc.threads, bc.batch);
  std::vector<Tensor4<float>> slices;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t nb = bc.batch / workers + (t < bc.batch % workers ? 1 : 0);
    Tensor4<float> x(Shape4{nb, bc.c, bc.h, bc.w});
    for (float& v : x.data()) v = normal(rng);
    slices.push_back(std::move(x));
  }
  ConvBn<float> proj(ConvSpec::pointwise(2 * bc.c, 2 * bc.c));
  for (float& v : proj.weight.data()) v = 0.02f * normal(rng);

  volatile float sink = 0.0f;
  auto body = [&](const Tensor4<float>& x) {
    Tensor4<float> agg;
    if (bc.mechanism == Mechanism::Svga) {
      agg = bc.include_projection ? mrconv_roll(x, bc.k, proj) : max_relative_roll(x, bc.k);
    } else {
      const KnnAdjacency adj = knn_graph(x, bc.knn_k);
      agg = bc.include_projection ? mrconv_knn(x, adj, proj) : max_relative_knn(x, adj);
    }
    sink = sink + agg.data()[0];
  };
  auto run_once = [&] {
    if (workers == 1) {
      body(slices[0]);
      return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back([&, t] { body(slices[t]); });
  };

  for (std::size_t i = 0; i < bc.warmup; ++i) run_once();
  BenchRecord rec{bc, 0, 0, 0, {}};
  rec.samples_ns.reserve(bc.reps);
  for (std::size_t i = 0; i < bc.reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run_once();
    const auto t1 = std::chrono::steady_clock::now();
    rec.samples_ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::vector<double> sorted = rec.samples_ns;
  std::sort(sorted.begin(), sorted.end());
  rec.median_ns = quantile_sorted(sorted, 0.5);
  rec.p10_ns = quantile_sorted(sorted, 0.1);
  rec.p90_ns = quantile_sorted(sorted, 0.9);
  return rec;
}

inline std::string bench_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "mechanism,h,w,c,k_or_knn_k,batch,reps,warmup,include_projection,threads,median_ns,p10_ns,p90_ns\n";
  for (const auto& r : report.records) {
    const auto& b = r.config;
    os << to_string(b.mechanism) << ',' << b.h << ',' << b.w << ',' << b.c << ','
       << (b.mechanism == Mechanism::Svga ? static_cast<std::size_t>(b.k) : b.knn_k) << ',' << b.batch << ','
       << b.reps << ',' << b.warmup << ',' << (b.include_projection ? 1 : 0) << ',' << b.threads << ','
       << static_cast<std::uint64_t>(r.median_ns) << ',' << static_cast<std::uint64_t>(r.p10_ns) << ','
       << static_cast<std::uint64_t>(r.p90_ns) << '\n';
  }
  return os.str();
}

}  // namespace mvig
