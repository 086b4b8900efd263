// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvig/arch.hpp"
#include "mvig/bench.hpp"
#include "mvig/knn.hpp"
#include "mvig/svga.hpp"
#include "mvig/verify.hpp"

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed;
  std::string detail;
};

// Independent max-relative reference: per pixel, walk the column offsets
// then the row offsets, folding max(x - neighbour) from a zero seed.
std::vector<float> naive_max_relative(const mvig::Tensor4<float>& x, std::int64_t k) {
  const std::size_t n = x.n(), c = x.c(), h = x.h(), w = x.w();
  std::vector<float> out(x.shape().numel(), 0.0f);
  const auto ku = static_cast<std::size_t>(k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const float self = x.at(b, ch, i, j);
          float acc = 0.0f;
          for (std::size_t off = 0; off < h; off += ku) {
            const float d = self - x.at(b, ch, (i + h - off) % h, j);
            acc = d > acc ? d : acc;
          }
          for (std::size_t off = 0; off < w; off += ku) {
            const float d = self - x.at(b, ch, i, (j + w - off) % w);
            acc = d > acc ? d : acc;
          }
          out[((b * c + ch) * h + i) * w + j] = acc;
        }
  return out;
}

Outcome oracle_equivalence() {
  const auto suite = mvig::verify_oracle(1);
  if (!suite.passed) return {false, suite.summary + " " + suite.counterexample};
  std::size_t checked = 0;
  for (std::size_t h : {1, 2, 4, 7, 8, 14})
    for (std::size_t w : {1, 2, 4, 7, 8, 14})
      for (std::int64_t k : {1, 2, 3, 5})
        for (std::size_t c : {1, 3, 16})
          for (std::uint64_t s = 0; s < 100; ++s) {
            std::mt19937_64 rng(s * 7919 + h * 131 + w * 17 + static_cast<std::uint64_t>(k) * 3 + c);
            std::normal_distribution<float> nd;
            mvig::Tensor4<float> x(mvig::Shape4{1, c, h, w});
            for (float& v : x.data()) v = nd(rng);
            const auto got = mvig::max_relative_roll(x, k);
            const auto want = naive_max_relative(x, k);
            if (!std::equal(want.begin(), want.end(), got.data().begin())) {
              return {false, "roll fold differs from naive reference at " + x.shape().str() +
                                 " k=" + std::to_string(k) + " seed=" + std::to_string(s)};
            }
            ++checked;
          }
  return {true, suite.summary + "; " + std::to_string(checked) + " independent X_j checks exact"};
}

Outcome equivariance() {
  mvig::EquivarianceSuiteOptions opt;
  opt.grids = {{8, 8}, {7, 7}};
  opt.weight_seeds = 20;
  const auto r = mvig::verify_equivariance(2, opt);
  return {r.passed, r.summary + (r.passed ? "" : " " + r.counterexample)};
}

Outcome grad_check() {
  const auto r = mvig::verify_grad(3);
  return {r.passed, r.summary + (r.passed ? "" : " " + r.counterexample)};
}

Outcome params_and_macs() {
  const std::map<std::string, std::pair<double, double>> reference{
      {"Ti", {5.2, 0.7}}, {"S", {7.2, 1.0}}, {"M", {14.0, 1.5}}, {"B", {26.7, 2.8}}};
  std::ostringstream os;
  bool ok = true;
  for (const auto& [name, ref] : reference) {
    const auto cfg = mvig::variant_config(name);
    auto model = mvig::build_model<float>(cfg, 0);
    const double params = static_cast<double>(mvig::count_params(model)) / 1e6;
    const double macs = static_cast<double>(mvig::count_macs(cfg, 224, 224)) / 1e9;
    const bool p_ok = std::abs(params - ref.first) <= 0.10 * ref.first;
    const bool m_ok = std::abs(macs - ref.second) <= 0.15 * ref.second;
    ok = ok && p_ok && m_ok;
    os << name << " " << params << "M/" << ref.first << "M " << macs << "G/" << ref.second << "G"
       << (p_ok && m_ok ? "" : " OUT") << "; ";
  }
  return {ok, os.str()};
}

Outcome stage_shapes() {
  const std::map<std::string, std::array<std::size_t, 4>> channels{
      {"Ti", {42, 84, 168, 256}}, {"S", {42, 84, 176, 256}}, {"M", {42, 84, 224, 400}}, {"B", {42, 84, 240, 464}}};
  const std::array<std::size_t, 4> res{56, 28, 14, 7};
  std::ostringstream os;
  bool ok = true;
  for (const auto& [name, ch] : channels) {
    const auto cfg = mvig::variant_config(name);
    const auto model = mvig::build_model<float>(cfg, 0);
    mvig::Tensor4<float> x(mvig::Shape4{1, 3, 224, 224});
    std::mt19937_64 rng(11);
    std::normal_distribution<float> nd;
    for (float& v : x.data()) v = nd(rng);
    std::map<std::string, mvig::Shape4> seen;
    const auto logits =
        mvig::model_forward<float>(x, model, [&](const std::string& l, const mvig::Tensor4<float>& t) {
          seen[l] = t.shape();
        });
    bool this_ok = logits.n() == 1 && logits.c() == 1000;
    for (std::size_t s = 0; s < 4; ++s) {
      const auto& sh = seen["stage" + std::to_string(s + 1)];
      this_ok = this_ok && sh.c == ch[s] && sh.h == res[s] && sh.w == res[s];
    }
    for (float v : logits.data()) this_ok = this_ok && std::isfinite(v);
    ok = ok && this_ok;
    os << name << (this_ok ? " ok" : " MISMATCH") << "; ";
  }
  return {ok, os.str()};
}

Outcome knn_bruteforce() {
  const auto suite = mvig::verify_knn(4);
  if (!suite.passed) return {false, suite.summary + " " + suite.counterexample};
  // Second, independent reference: full sort of (distance, index) pairs.
  std::size_t checked = 0;
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{3, 5}, {8, 8}, {16, 16}})
    for (std::size_t k : {1, 3, 9})
      for (std::uint64_t s = 0; s < 50; ++s) {
        if (k >= h * w) continue;
        std::mt19937_64 rng(s + 1000 * h + k);
        std::uniform_int_distribution<int> ud(-2, 2);
        mvig::Tensor4<float> x(mvig::Shape4{1, 4, h, w});
        for (float& v : x.data()) v = static_cast<float>(ud(rng));
        const auto adj = mvig::knn_graph(x, k);
        const std::size_t nodes = h * w;
        for (std::size_t a = 0; a < nodes; ++a) {
          std::vector<std::pair<double, std::size_t>> d;
          for (std::size_t b = 0; b < nodes; ++b) {
            if (b == a) continue;
            double acc = 0;
            for (std::size_t ch = 0; ch < 4; ++ch) {
              const double diff = x.at(0, ch, a / w, a % w) - x.at(0, ch, b / w, b % w);
              acc += diff * diff;
            }
            d.emplace_back(acc, b);
          }
          std::sort(d.begin(), d.end());
          const auto got = adj.neighbors(0, a);
          for (std::size_t i = 0; i < k; ++i) {
            if (got[i] != d[i].second) {
              return {false, "node " + std::to_string(a) + " differs from sort reference on " + x.shape().str()};
            }
          }
          ++checked;
        }
      }
  return {true, suite.summary + "; " + std::to_string(checked) + " node lists match sort reference"};
}

Outcome svga_faster_than_knn() {
  std::ostringstream os;
  bool ok = true;
  for (std::size_t c : {256, 400}) {
    mvig::BenchCase bc;
    bc.h = bc.w = 14;
    bc.c = c;
    bc.reps = 100;
    bc.mechanism = mvig::Mechanism::Svga;
    const auto svga = mvig::run_bench(bc);
    bc.mechanism = mvig::Mechanism::Knn;
    const auto knn = mvig::run_bench(bc);
    const bool faster = svga.median_ns < knn.median_ns;
    ok = ok && faster;
    os << "c=" << c << " svga " << svga.median_ns / 1e3 << "us knn " << knn.median_ns / 1e3 << "us; ";
  }
  return {ok, os.str()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MVIG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Outcome forward_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mvig_acceptance";
  fs::create_directories(dir);
  const auto p = [&](const char* leaf) { return (dir / leaf).string(); };
  const std::string base = "forward --variant Ti --seed 17 --size 224";
  if (run_cli(base + " --save " + p("w.bin") + " --json " + p("a.json")) != 0 ||
      run_cli(base + " --json " + p("b.json")) != 0 ||
      run_cli("forward --variant Ti --size 224 --seed 17 --load " + p("w.bin") + " --json " + p("c.json")) != 0) {
    fs::remove_all(dir);
    return {false, "CLI forward failed"};
  }
  const auto a = nlohmann::json::parse(slurp(p("a.json")));
  const auto b = nlohmann::json::parse(slurp(p("b.json")));
  const auto c = nlohmann::json::parse(slurp(p("c.json")));
  fs::remove_all(dir);
  const bool runs = a["logits_bits"] == b["logits_bits"];
  const bool roundtrip = a["logits_bits"] == c["logits_bits"];
  return {runs && roundtrip && a["logits_bits"].size() == 1000,
          std::string("two processes ") + (runs ? "bitwise equal" : "DIFFER") + "; save/load " +
              (roundtrip ? "bitwise equal" : "DIFFERS")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {"1 roll fold equals gather oracle", 30, oracle_equivalence},
      {"2 shift equivariance", 30, equivariance},
      {"3 gradient check", 60, grad_check},
      {"4 parameter and MAC counts", 0, params_and_macs},
      {"5 stage resolutions and channels", 60, stage_shapes},
      {"6 knn matches brute force", 0, knn_bruteforce},
      {"7 svga median below knn median", 120, svga_faster_than_knn},
      {"8 forward determinism and weights round trip", 0, forward_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.passed = false;
      o.detail += " (over time budget " + std::to_string(static_cast<int>(c.budget_s)) + "s)";
    }
    std::printf("%s criterion %s [%.2fs]: %s\n", o.passed ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failures += o.passed ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
