#pragma once

// Model assembly: convolutional stem, three MBConv stages with
// stride-2 downsampling between them, one SVGA stage, pooling + MLP head.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mvig/layers.hpp"
#include "mvig/svga.hpp"

namespace mvig {

struct VariantConfig {
  std::string name;
  std::array<std::size_t, 4> stage_depths{};
  std::array<std::size_t, 4> stage_channels{};
  std::int64_t k = 2;
  std::size_t expansion = 4;
  std::size_t ffn_ratio = 4;
  std::size_t head_dim = 768;
  std::size_t num_classes = 1000;
};

inline const std::array<std::string_view, 4>& variant_names() {
  static const std::array<std::string_view, 4> names{"Ti", "S", "M", "B"};
  return names;
}

inline VariantConfig variant_config(std::string_view name) {
  VariantConfig cfg;
  cfg.name = std::string(name);
  if (name == "Ti") {
    cfg.stage_depths = {2, 2, 6, 2};
    cfg.stage_channels = {42, 84, 168, 256};
  } else if (name == "S") {
    cfg.stage_depths = {3, 3, 9, 3};
    cfg.stage_channels = {42, 84, 176, 256};
  } else if (name == "M") {
    cfg.stage_depths = {3, 3, 9, 3};
    cfg.stage_channels = {42, 84, 224, 400};
  } else if (name == "B") {
    cfg.stage_depths = {5, 5, 15, 5};
    cfg.stage_channels = {42, 84, 240, 464};
  } else {
    throw InputError("unknown variant '" + std::string(name) + "' (expected Ti, S, M or B)");
  }
  return cfg;
}

/// Inverted residual: x + BN(project(GeLU(BN(dw3x3(GeLU(BN(expand(x)))))))).
template <typename T>
struct MbconvWeights {
  ConvBn<T> expand;     // C -> eC, 1x1
  ConvBn<T> depthwise;  // eC -> eC, 3x3, groups = eC
  ConvBn<T> project;    // eC -> C, 1x1

  MbconvWeights() = default;
  MbconvWeights(std::size_t channels, std::size_t expansion)
      : expand(ConvSpec::pointwise(channels, expansion * channels)),
        depthwise(ConvSpec::square(expansion * channels, expansion * channels, 3, 1, 1, expansion * channels)),
        project(ConvSpec::pointwise(expansion * channels, channels)) {}

  std::size_t channels() const { return expand.spec.in_channels; }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    expand.visit(join_name(prefix, "expand"), fn);
    depthwise.visit(join_name(prefix, "depthwise"), fn);
    project.visit(join_name(prefix, "project"), fn);
  }
};

template <typename T>
struct StemWeights {
  ConvBn<T> conv1;  // 3 -> C1/2, 3x3 stride 2
  ConvBn<T> conv2;  // C1/2 -> C1, 3x3 stride 2

  StemWeights() = default;
  explicit StemWeights(std::size_t out_channels)
      : conv1(ConvSpec::square(3, out_channels / 2, 3, 2, 1)),
        conv2(ConvSpec::square(out_channels / 2, out_channels, 3, 2, 1)) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    conv1.visit(join_name(prefix, "0"), fn);
    conv2.visit(join_name(prefix, "1"), fn);
  }
};

/// Pooled features -> Linear + BN + GeLU -> Linear to class logits.
template <typename T>
struct HeadWeights {
  Linear<T> hidden;
  BatchNormParams<T> bn;
  Linear<T> classifier;

  HeadWeights() = default;
  HeadWeights(std::size_t in_channels, std::size_t hidden_dim, std::size_t classes)
      : hidden(in_channels, hidden_dim), bn(BatchNormParams<T>::identity(hidden_dim)), classifier(hidden_dim, classes) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    hidden.visit(join_name(prefix, "fc"), fn);
    visit_bn_params(bn, join_name(prefix, "bn"), fn);
    classifier.visit(join_name(prefix, "classifier"), fn);
  }
};

/// Full parameter set of one variant. visit() enumerates every tensor under
/// a unique dotted name in a fixed order; that order defines initialisation
/// and serialisation.
template <typename T>
struct ModelWeights {
  VariantConfig cfg;
  StemWeights<T> stem;
  std::array<std::vector<MbconvWeights<T>>, 3> local_stages;
  std::array<ConvBn<T>, 3> downsample;
  std::vector<SvgaBlockWeights<T>> svga_stage;
  HeadWeights<T> head;

  /// Zero convolutions and identity batch norms, shaped for `config`.
  explicit ModelWeights(const VariantConfig& config) : cfg(config), stem(config.stage_channels[0]) {
    const auto& ch = cfg.stage_channels;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) local_stages[s].emplace_back(ch[s], cfg.expansion);
      downsample[s] = ConvBn<T>(ConvSpec::square(ch[s], ch[s + 1], 3, 2, 1));
    }
    for (std::size_t b = 0; b < cfg.stage_depths[3]; ++b) svga_stage.emplace_back(ch[3], cfg.k, cfg.ffn_ratio);
    head = HeadWeights<T>(ch[3], cfg.head_dim, cfg.num_classes);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    stem.visit(join_name(prefix, "stem"), fn);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string stage = join_name(prefix, "stages." + std::to_string(s));
      for (std::size_t b = 0; b < local_stages[s].size(); ++b) {
        local_stages[s][b].visit(stage + ".blocks." + std::to_string(b), fn);
      }
      downsample[s].visit(join_name(prefix, "downsample." + std::to_string(s)), fn);
    }
    for (std::size_t b = 0; b < svga_stage.size(); ++b) {
      svga_stage[b].visit(join_name(prefix, "stages.3.blocks." + std::to_string(b)), fn);
    }
    head.visit(join_name(prefix, "head"), fn);
  }

  std::vector<ParamRef<T>> named_parameters() { return collect_params<T>(*this); }
};

/// Truncated normal (std 0.02, cut at +-2 sigma) for conv/linear weights in
/// visit order; zero biases; identity batch norm.
template <typename T = float>
ModelWeights<T> build_model(const VariantConfig& cfg, std::uint64_t seed) {
  ModelWeights<T> model(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  model.visit({}, [&](ParamRef<T> p) {
    for (T& v : p.data) {
      switch (p.kind) {
        case ParamKind::Weight: {
          double s = normal(rng);
          while (s < -0.04 || s > 0.04) s = normal(rng);
          v = static_cast<T>(s);
          break;
        }
        case ParamKind::Bias:
        case ParamKind::BnBeta:
        case ParamKind::BnMean: v = T(0); break;
        case ParamKind::BnGamma:
        case ParamKind::BnVar: v = T(1); break;
      }
    }
  });
  return model;
}

/// Sum of element counts of all trainable tensors (conv/linear weights and
/// biases, BN gamma/beta). Running statistics are buffers, not parameters.
template <typename T>
std::size_t count_params(ModelWeights<T>& w) {
  std::size_t total = 0;
  w.visit({}, [&](ParamRef<T> p) {
    if (p.trainable()) total += p.data.size();
  });
  return total;
}

template <typename T>
Tensor4<T> mbconv_forward(const Tensor4<T>& x, const MbconvWeights<T>& w) {
  if (x.c() != w.channels()) {
    throw ConfigError("mbconv_forward: input has " + std::to_string(x.c()) + " channels, block width is " +
                      std::to_string(w.channels()));
  }
  Tensor4<T> h = gelu(w.expand.forward(x));
  h = gelu(w.depthwise.forward(h));
  return elem_add(w.project.forward(h), x);
}

template <typename T>
Tensor4<T> stem_forward(const Tensor4<T>& x, const StemWeights<T>& w) {
  if (x.c() != 3) throw InputError("stem_forward: expected 3 input channels, got " + std::to_string(x.c()));
  if (x.h() % 4 != 0 || x.w() % 4 != 0) {
    throw InputError("stem_forward: input " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                     " is not divisible by 4");
  }
  return gelu(w.conv2.forward(gelu(w.conv1.forward(x))));
}

/// 3x3 stride-2 conv + BN; halves spatial dims (rounding up).
template <typename T>
Tensor4<T> downsample_forward(const Tensor4<T>& x, const ConvBn<T>& w) {
  if (x.h() < 2 || x.w() < 2) throw InputError("downsample_forward: spatial dims must be >= 2");
  return w.forward(x);
}

/// Called after the stem, every stage, and every downsample with a label and
/// the resulting feature map.
template <typename T>
using StageObserver = std::function<void(const std::string& label, const Tensor4<T>& out)>;

inline void require_model_input(std::size_t c, std::size_t h, std::size_t w) {
  if (c != 3) throw InputError("model input must have 3 channels, got " + std::to_string(c));
  if (h % 32 != 0 || w % 32 != 0) {
    throw InputError("model input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 32");
  }
}

template <typename T>
Tensor2<T> model_forward(const Tensor4<T>& x, const ModelWeights<T>& w, const StageObserver<T>& observe = {}) {
  require_model_input(x.c(), x.h(), x.w());
  auto note = [&](const char* label, const Tensor4<T>& t) {
    if (observe) observe(label, t);
  };
  static constexpr const char* kStageLabels[] = {"stage1", "stage2", "stage3", "stage4"};
  static constexpr const char* kDownLabels[] = {"down1", "down2", "down3"};

  Tensor4<T> h = stem_forward(x, w.stem);
  note("stem", h);
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& block : w.local_stages[s]) h = mbconv_forward(h, block);
    note(kStageLabels[s], h);
    h = downsample_forward(h, w.downsample[s]);
    note(kDownLabels[s], h);
  }
  for (const auto& block : w.svga_stage) h = svga_block_forward(h, block);
  note(kStageLabels[3], h);

  Tensor2<T> pooled = global_avg_pool(h);
  Tensor2<T> hidden = gelu(batchnorm_infer(w.head.hidden.forward(pooled), w.head.bn));
  return w.head.classifier.forward(hidden);
}

/// Per-stage summary used by the describe command and the MAC count.
struct StageSummary {
  std::string name;
  std::string block;
  std::size_t repeats = 0;
  std::size_t channels = 0;
  std::size_t h = 0, w = 0;
  std::uint64_t macs = 0;
};

namespace detail {

inline std::uint64_t conv_macs(const ConvSpec& s, std::size_t oh, std::size_t ow) {
  return static_cast<std::uint64_t>(oh) * ow * s.out_channels * (s.in_channels / s.groups) * s.kh * s.kw;
}

inline std::size_t down_dim(std::size_t d) { return (d + 2 - 3) / 2 + 1; }

}  // namespace detail

/// Analytic multiply-accumulate counts, stage by stage. Roll, subtract and
/// max in the graph aggregation cost no MACs; BN and GeLU are not counted.
inline std::vector<StageSummary> stage_summaries(const VariantConfig& cfg, std::size_t h, std::size_t w) {
  require_model_input(3, h, w);
  using detail::conv_macs;
  const auto& ch = cfg.stage_channels;
  std::vector<StageSummary> out;

  const std::size_t h2 = detail::down_dim(h), w2 = detail::down_dim(w);
  std::size_t rh = detail::down_dim(h2), rw = detail::down_dim(w2);
  out.push_back({"stem", "Conv x2", 2, ch[0], rh, rw,
                 conv_macs(ConvSpec::square(3, ch[0] / 2, 3, 2, 1), h2, w2) +
                     conv_macs(ConvSpec::square(ch[0] / 2, ch[0], 3, 2, 1), rh, rw)});
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t c = ch[s], e = cfg.expansion * c;
    const std::uint64_t per_block = conv_macs(ConvSpec::pointwise(c, e), rh, rw) +
                                    conv_macs(ConvSpec::square(e, e, 3, 1, 1, e), rh, rw) +
                                    conv_macs(ConvSpec::pointwise(e, c), rh, rw);
    out.push_back({"stage" + std::to_string(s + 1), "MBConv", cfg.stage_depths[s], c, rh, rw,
                   per_block * cfg.stage_depths[s]});
    rh = detail::down_dim(rh);
    rw = detail::down_dim(rw);
    out.push_back({"down" + std::to_string(s + 1), "Conv", 1, ch[s + 1], rh, rw,
                   conv_macs(ConvSpec::square(c, ch[s + 1], 3, 2, 1), rh, rw)});
  }
  const std::size_t c = ch[3], r = cfg.ffn_ratio * c;
  const std::uint64_t per_block =
      conv_macs(ConvSpec::pointwise(c, c), rh, rw) + conv_macs(ConvSpec::pointwise(2 * c, 2 * c), rh, rw) +
      conv_macs(ConvSpec::pointwise(2 * c, c), rh, rw) + conv_macs(ConvSpec::pointwise(c, r), rh, rw) +
      conv_macs(ConvSpec::pointwise(r, c), rh, rw);
  out.push_back({"stage4", "SVGA K=" + std::to_string(cfg.k), cfg.stage_depths[3], c, rh, rw,
                 per_block * cfg.stage_depths[3]});
  out.push_back({"head", "Pool & MLP", 1, cfg.num_classes, 1, 1,
                 static_cast<std::uint64_t>(c) * cfg.head_dim +
                     static_cast<std::uint64_t>(cfg.head_dim) * cfg.num_classes});
  return out;
}

inline std::uint64_t count_macs(const VariantConfig& cfg, std::size_t h, std::size_t w) {
  std::uint64_t total = 0;
  for (const auto& s : stage_summaries(cfg, h, w)) total += s.macs;
  return total;
}

}  // namespace mvig
