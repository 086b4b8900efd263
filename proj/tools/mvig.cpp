// mvig: describe, verify, benchmark and run the model variants.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvig/arch.hpp"
#include "mvig/bench.hpp"
#include "mvig/verify.hpp"
#include "mvig/weights_file.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MVIG_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw mvig::InputError(std::string("MVIG_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw mvig::InputError("cannot write '" + path + "'");
  os << text;
}

std::string stage_of(const std::string& name) {
  // "stages.2.blocks.4...." -> stage3, "downsample.1..." -> down2
  auto index_after = [&](std::size_t pos) { return std::to_string(name[pos] - '0' + 1); };
  if (name.rfind("stages.", 0) == 0) return "stage" + index_after(7);
  if (name.rfind("downsample.", 0) == 0) return "down" + index_after(11);
  return name.substr(0, name.find('.'));
}

// ---------------------------------------------------------------- describe

int cmd_describe(const std::string& variant, std::size_t size, const std::string& json_path) {
  const mvig::VariantConfig cfg = mvig::variant_config(variant);
  const auto stages = mvig::stage_summaries(cfg, size, size);
  mvig::ModelWeights<float> model(cfg);
  std::map<std::string, std::size_t> stage_params;
  for (const auto& p : model.named_parameters()) {
    if (p.trainable()) stage_params[stage_of(p.name)] += p.data.size();
  }
  const std::size_t params = mvig::count_params(model);
  const std::uint64_t macs = mvig::count_macs(cfg, size, size);

  std::cout << "mvig-" << cfg.name << " @ " << size << "x" << size << "\n";
  std::cout << std::left << std::setw(8) << "stage" << std::setw(14) << "block" << std::right << std::setw(4) << "N"
            << std::setw(7) << "C" << std::setw(11) << "output" << std::setw(12) << "params" << std::setw(14)
            << "MACs" << "\n";
  json jstages = json::array();
  for (const auto& s : stages) {
    const std::string res = std::to_string(s.h) + "x" + std::to_string(s.w);
    std::cout << std::left << std::setw(8) << s.name << std::setw(14) << s.block << std::right << std::setw(4)
              << s.repeats << std::setw(7) << s.channels << std::setw(11) << res << std::setw(12)
              << stage_params[s.name] << std::setw(14) << s.macs << "\n";
    jstages.push_back({{"name", s.name},
                       {"block", s.block},
                       {"repeats", s.repeats},
                       {"channels", s.channels},
                       {"height", s.h},
                       {"width", s.w},
                       {"params", stage_params[s.name]},
                       {"macs", s.macs}});
  }
  std::cout << std::fixed << std::setprecision(2) << "total params: " << params << " (" << params / 1e6 << " M)\n"
            << "total MACs:   " << macs << " (" << macs / 1e9 << " G)\n";
  if (!json_path.empty()) {
    json j{{"variant", cfg.name},     {"input_size", size},        {"k", cfg.k},
           {"expansion", cfg.expansion}, {"ffn_ratio", cfg.ffn_ratio}, {"head_dim", cfg.head_dim},
           {"num_classes", cfg.num_classes}, {"stages", jstages}, {"params", params},
           {"macs", macs}};
    write_text(json_path, j.dump(2) + "\n");
  }
  return kExitOk;
}

// ------------------------------------------------------------------ verify

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& json_path) {
  static const std::vector<std::string> known{"oracle", "equivariance", "grad", "knn"};
  std::vector<std::string> selected;
  if (suite == "all") {
    selected = known;
  } else if (std::find(known.begin(), known.end(), suite) != known.end()) {
    selected = {suite};
  } else {
    throw mvig::InputError("unknown suite '" + suite + "' (expected all, oracle, equivariance, grad or knn)");
  }

  bool all_ok = true;
  json report = json::array();
  for (const auto& name : selected) {
    mvig::SuiteResult r;
    if (name == "oracle") r = mvig::verify_oracle(seed);
    if (name == "equivariance") r = mvig::verify_equivariance(seed);
    if (name == "grad") r = mvig::verify_grad(seed);
    if (name == "knn") r = mvig::verify_knn(seed);
    all_ok = all_ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.summary << "\n";
    if (!r.passed) std::cout << "  counterexample: " << r.counterexample << "\n";
    json jr{{"suite", r.name}, {"passed", r.passed}, {"cases", r.cases}, {"summary", r.summary}};
    if (!r.passed) jr["counterexample"] = json::parse(r.counterexample);
    report.push_back(jr);
  }
  if (!json_path.empty()) write_text(json_path, json{{"seed", seed}, {"suites", report}}.dump(2) + "\n");
  return all_ok ? kExitOk : kExitFailure;
}

// ------------------------------------------------------------------- bench

json record_json(const mvig::BenchRecord& r) {
  const auto& b = r.config;
  return {{"mechanism", mvig::to_string(b.mechanism)},
          {"h", b.h},
          {"w", b.w},
          {"c", b.c},
          {"k_or_knn_k", b.mechanism == mvig::Mechanism::Svga ? static_cast<std::size_t>(b.k) : b.knn_k},
          {"batch", b.batch},
          {"reps", b.reps},
          {"warmup", b.warmup},
          {"include_projection", b.include_projection},
          {"median_ns", r.median_ns},
          {"p10_ns", r.p10_ns},
          {"p90_ns", r.p90_ns}};
}

int cmd_bench(const std::string& mechanism, mvig::BenchCase base, const std::string& json_path,
              const std::string& csv_path) {
  std::vector<mvig::Mechanism> mechs;
  if (mechanism == "both") {
    mechs = {mvig::Mechanism::Svga, mvig::Mechanism::Knn};
  } else {
    mechs = {mvig::parse_mechanism(mechanism)};
  }
  mvig::BenchReport report;
  report.env = {base.threads, 32, mvig::build_profile()};
  for (auto m : mechs) {
    base.mechanism = m;
    report.records.push_back(mvig::run_bench(base));
  }

  std::cout << std::left << std::setw(6) << "mech" << std::right << std::setw(5) << "h" << std::setw(5) << "w"
            << std::setw(6) << "c" << std::setw(5) << "k" << std::setw(7) << "batch" << std::setw(6) << "reps"
            << std::setw(14) << "median_us" << std::setw(12) << "p10_us" << std::setw(12) << "p90_us" << "\n";
  for (const auto& r : report.records) {
    const auto& b = r.config;
    std::cout << std::left << std::setw(6) << mvig::to_string(b.mechanism) << std::right << std::setw(5) << b.h
              << std::setw(5) << b.w << std::setw(6) << b.c << std::setw(5)
              << (b.mechanism == mvig::Mechanism::Svga ? static_cast<std::size_t>(b.k) : b.knn_k) << std::setw(7)
              << b.batch << std::setw(6) << b.reps << std::fixed << std::setprecision(2) << std::setw(14)
              << r.median_ns / 1e3 << std::setw(12) << r.p10_ns / 1e3 << std::setw(12) << r.p90_ns / 1e3 << "\n";
  }
  std::cout << "threads=" << report.env.threads << " scalar=f" << report.env.scalar_bits
            << " build=" << report.env.build_profile
            << (base.include_projection ? " (projection included)" : " (aggregation only)") << "\n";

  if (!json_path.empty()) {
    json recs = json::array();
    for (const auto& r : report.records) recs.push_back(record_json(r));
    json j{{"records", recs},
           {"environment",
            {{"threads", report.env.threads},
             {"scalar_bits", report.env.scalar_bits},
             {"build_profile", report.env.build_profile}}}};
    write_text(json_path, j.dump(2) + "\n");
  }
  if (!csv_path.empty()) write_text(csv_path, mvig::bench_csv(report));
  return kExitOk;
}

// ----------------------------------------------------------------- forward

mvig::Tensor4<float> read_input(const std::string& path, std::size_t size) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw mvig::InputError("cannot open input '" + path + "'");
  char p = 0, six = 0;
  is.get(p).get(six);
  if (p == 'P' && six == '6') {
    std::size_t w = 0, h = 0, maxval = 0;
    auto skip_ws_comments = [&] {
      while (true) {
        const int ch = is.peek();
        if (ch == '#') {
          std::string line;
          std::getline(is, line);
        } else if (std::isspace(ch)) {
          is.get();
        } else {
          break;
        }
      }
    };
    skip_ws_comments();
    is >> w;
    skip_ws_comments();
    is >> h;
    skip_ws_comments();
    is >> maxval;
    is.get();
    if (!is || maxval == 0 || maxval > 255) throw mvig::InputError("unsupported PPM header in '" + path + "'");
    mvig::require_model_input(3, h, w);
    std::vector<unsigned char> pixels(3 * h * w);
    if (!is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
      throw mvig::InputError("truncated PPM data in '" + path + "'");
    }
    mvig::Tensor4<float> x(mvig::Shape4{1, 3, h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        x.data()[c * h * w + i] = static_cast<float>(pixels[3 * i + c]) / static_cast<float>(maxval);
      }
    }
    return x;
  }
  // Raw little-endian f32, shape (1, 3, size, size).
  is.clear();
  is.seekg(0);
  mvig::Tensor4<float> x(mvig::Shape4{1, 3, size, size});
  for (float& v : x.data()) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
      throw mvig::InputError("raw input '" + path + "' holds fewer than 3x" + std::to_string(size) + "x" +
                             std::to_string(size) + " floats");
    }
    v = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw mvig::InputError("raw input '" + path + "' is too long");
  return x;
}

std::string hex_bits(float v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << std::bit_cast<std::uint32_t>(v);
  return os.str();
}

int cmd_forward(const std::string& variant, std::uint64_t seed, std::size_t size, const std::string& input,
                const std::string& save, const std::string& load, const std::string& json_path) {
  const mvig::VariantConfig cfg = mvig::variant_config(variant);
  mvig::require_model_input(3, size, size);
  mvig::ModelWeights<float> model = load.empty() ? mvig::build_model(cfg, seed) : mvig::load_weights(load, cfg.name);
  if (!save.empty()) mvig::save_weights(save, model);

  mvig::Tensor4<float> x;
  if (input.empty()) {
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    x = mvig::Tensor4<float>(mvig::Shape4{1, 3, size, size});
    mvig::fill_normal(x.data(), rng);
  } else {
    x = read_input(input, size);
  }
  const mvig::Tensor2<float> logits = mvig::model_forward(x, model);

  std::vector<std::size_t> order(logits.c());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t top = std::min<std::size_t>(5, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits.at(0, a) > logits.at(0, b) || (logits.at(0, a) == logits.at(0, b) && a < b);
                    });
  std::cout << "mvig-" << cfg.name << " seed=" << seed << " input=" << (input.empty() ? "random" : input)
            << " " << x.h() << "x" << x.w() << "\n";
  json jtop = json::array();
  for (std::size_t i = 0; i < top; ++i) {
    const float v = logits.at(0, order[i]);
    std::cout << "  #" << i + 1 << "  class " << std::setw(4) << order[i] << "  logit " << std::setprecision(9) << v
              << "  (0x" << hex_bits(v) << ")\n";
    jtop.push_back({{"class", order[i]}, {"logit", v}, {"bits", hex_bits(v)}});
  }
  if (!json_path.empty()) {
    json bits = json::array();
    for (float v : logits.data()) bits.push_back(hex_bits(v));
    json j{{"variant", cfg.name}, {"seed", seed}, {"input", input.empty() ? "random" : input},
           {"top5", jtop},        {"logits_bits", bits}};
    write_text(json_path, j.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision graph network toolkit"};
  app.require_subcommand(1);

  std::string variant = "Ti";
  std::size_t size = 224;
  std::optional<std::uint64_t> seed_flag;
  std::string json_path, csv_path, suite = "all", mechanism = "both", save_path, load_path, input_path;
  mvig::BenchCase bench;
  std::int64_t k = bench.k;

  auto* describe = app.add_subcommand("describe", "stage table, parameter and MAC counts");
  describe->add_option("--variant", variant, "Ti, S, M or B")->capture_default_str();
  describe->add_option("--size", size, "square input resolution (divisible by 32)")->capture_default_str();
  describe->add_option("--json", json_path, "write the table as JSON");

  auto* verify = app.add_subcommand("verify", "run property suites");
  verify->add_option("--suite", suite, "all, oracle, equivariance, grad or knn")->capture_default_str();
  verify->add_option("--seed", seed_flag, "base seed (falls back to MVIG_SEED, then 0)");
  verify->add_option("--json", json_path, "write the report as JSON");

  auto* bench_cmd = app.add_subcommand("bench", "time SVGA vs KNN graph aggregation");
  bench_cmd->add_option("--mechanism", mechanism, "svga, knn or both")->capture_default_str();
  bench_cmd->add_option("--size", bench.h, "square feature-map resolution")->capture_default_str();
  bench_cmd->add_option("--channels", bench.c, "feature channels")->capture_default_str();
  bench_cmd->add_option("--k", k, "SVGA connection stride")->capture_default_str();
  bench_cmd->add_option("--knn-k", bench.knn_k, "KNN neighbours per pixel")->capture_default_str();
  bench_cmd->add_option("--batch", bench.batch, "batch size")->capture_default_str();
  bench_cmd->add_option("--reps", bench.reps, "timed repetitions (>= 30)")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "untimed warmup runs (>= 5)")->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "worker threads over the batch")->capture_default_str();
  bench_cmd->add_flag("--include-projection", bench.include_projection, "also time the shared 1x1 projection");
  bench_cmd->add_option("--seed", seed_flag, "input seed (falls back to MVIG_SEED, then 0)");
  bench_cmd->add_option("--json", json_path, "write the report as JSON");
  bench_cmd->add_option("--csv", csv_path, "write the report as CSV");

  auto* forward = app.add_subcommand("forward", "run a model and print the top-5 logits");
  forward->add_option("--variant", variant, "Ti, S, M or B")->capture_default_str();
  forward->add_option("--seed", seed_flag, "weight/input seed (falls back to MVIG_SEED, then 0)");
  forward->add_option("--size", size, "input resolution for random or raw input")->capture_default_str();
  forward->add_option("--input", input_path, "PPM (P6) image or raw little-endian f32 (1,3,size,size)");
  forward->add_option("--save", save_path, "write the weights file");
  forward->add_option("--load", load_path, "read weights instead of initialising from the seed");
  forward->add_option("--json", json_path, "write logits as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const std::uint64_t seed = resolve_seed(seed_flag);
    if (*describe) return cmd_describe(variant, size, json_path);
    if (*verify) return cmd_verify(suite, seed, json_path);
    if (*bench_cmd) {
      bench.w = bench.h;
      bench.k = k;
      bench.seed = seed;
      return cmd_bench(mechanism, bench, json_path, csv_path);
    }
    if (*forward) return cmd_forward(variant, seed, size, input_path, save_path, load_path, json_path);
  } catch (const mvig::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mvig::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mvig::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
