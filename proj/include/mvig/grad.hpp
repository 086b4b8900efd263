#pragma once

// Hand-derived backward pass through one SVGA block, and a central
// finite-difference check against it. Intended for the f64 instantiation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mvig/layers.hpp"
#include "mvig/svga.hpp"

namespace mvig {

enum class Activation { Gelu, Identity };

namespace detail {

template <typename T>
Tensor4<T> activate(Tensor4<T> x, Activation act) {
  return act == Activation::Gelu ? gelu(std::move(x)) : x;
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

/// Conv + BN forward keeping the conv output for the BN backward.
template <typename T>
struct ConvBnTape {
  Tensor4<T> input;
  Tensor4<T> conv_out;
  Tensor4<T> output;
};

template <typename T>
ConvBnTape<T> conv_bn_taped(const ConvBn<T>& layer, const Tensor4<T>& x) {
  ConvBnTape<T> t{x, conv2d(x, layer.spec, layer.weight, std::span<const T>(layer.bias)), {}};
  t.output = batchnorm_infer(t.conv_out, layer.bn);
  return t;
}

/// Backward of a 1x1, groups=1 conv followed by BN. Accumulates parameter
/// gradients into `grad` and returns dL/dinput.
template <typename T>
Tensor4<T> conv_bn_backward(const ConvBn<T>& layer, const ConvBnTape<T>& tape, const Tensor4<T>& dy, ConvBn<T>& grad) {
  const ConvSpec& s = layer.spec;
  if (s.kh != 1 || s.kw != 1 || s.groups != 1 || s.stride != 1 || s.padding != 0) {
    throw ConfigError("conv_bn_backward: only pointwise convolutions are supported");
  }
  const auto& bn = layer.bn;
  const std::size_t plane = dy.h() * dy.w();
  Tensor4<T> dconv(dy.shape());
  for (std::size_t c = 0; c < s.out_channels; ++c) {
    const T denom = std::sqrt(bn.var[c] + bn.eps);
    for (std::size_t n = 0; n < dy.n(); ++n) {
      auto g = dy.plane(n, c);
      auto co = tape.conv_out.plane(n, c);
      auto dc = dconv.plane(n, c);
      for (std::size_t p = 0; p < plane; ++p) {
        grad.bn.gamma[c] += g[p] * (co[p] - bn.mean[c]) / denom;
        grad.bn.beta[c] += g[p];
        dc[p] = g[p] * bn.gamma[c] / denom;
      }
    }
  }
  Tensor4<T> dx(tape.input.shape());
  for (std::size_t n = 0; n < dy.n(); ++n) {
    for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
      auto dc = dconv.plane(n, oc);
      for (std::size_t p = 0; p < plane; ++p) grad.bias[oc] += dc[p];
      for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
        auto xin = tape.input.plane(n, ic);
        auto dxi = dx.plane(n, ic);
        const T wv = layer.weight.at(oc, ic, 0, 0);
        T acc = T(0);
        for (std::size_t p = 0; p < plane; ++p) {
          acc += dc[p] * xin[p];
          dxi[p] += wv * dc[p];
        }
        grad.weight.at(oc, ic, 0, 0) += acc;
      }
    }
  }
  return dx;
}

/// Winner of the max fold at each element. offset == 0 means a zero term won.
struct MaxWinner {
  bool down = true;
  std::size_t offset = 0;
};

template <typename T>
struct MaxRelativeTape {
  Tensor4<T> xj;
  std::vector<MaxWinner> winners;
  T min_margin = std::numeric_limits<T>::infinity();
};

/// Same fold as max_relative_roll, recording the winning candidate and the
/// smallest gap between winner and runner-up over all elements. Ties keep
/// the earlier candidate in loop order.
template <typename T>
MaxRelativeTape<T> max_relative_taped(const Tensor4<T>& x, std::int64_t k) {
  const std::size_t h = x.h(), w = x.w();
  const auto step = static_cast<std::size_t>(k);
  MaxRelativeTape<T> tape{Tensor4<T>(x.shape()), std::vector<MaxWinner>(x.size()), std::numeric_limits<T>::infinity()};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const T self = x.at(n, c, i, j);
          T best = T(0), second = -std::numeric_limits<T>::infinity();
          MaxWinner win{};
          auto consider = [&](T rel, MaxWinner cand) {
            if (rel > best) {
              second = best;
              best = rel;
              win = cand;
            } else {
              second = std::max(second, rel);
            }
          };
          for (std::size_t off = step; off < h; off += step) {
            consider(self - x.at(n, c, (i + h - off) % h, j), {true, off});
          }
          for (std::size_t off = step; off < w; off += step) {
            consider(self - x.at(n, c, i, (j + w - off) % w), {false, off});
          }
          const std::size_t idx = x.index(n, c, i, j);
          tape.xj.data()[idx] = best;
          tape.winners[idx] = win;
          // Only meaningful when a second candidate exists.
          if (second > -std::numeric_limits<T>::infinity()) tape.min_margin = std::min(tape.min_margin, best - second);
        }
      }
    }
  }
  return tape;
}

template <typename T>
Tensor4<T> max_relative_backward(const MaxRelativeTape<T>& tape, const Tensor4<T>& dxj) {
  const std::size_t h = dxj.h(), w = dxj.w();
  Tensor4<T> dx(dxj.shape());
  for (std::size_t n = 0; n < dxj.n(); ++n) {
    for (std::size_t c = 0; c < dxj.c(); ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t idx = dxj.index(n, c, i, j);
          const MaxWinner win = tape.winners[idx];
          if (win.offset == 0) continue;
          const T g = dxj.data()[idx];
          dx.at(n, c, i, j) += g;
          if (win.down) {
            dx.at(n, c, (i + h - win.offset) % h, j) -= g;
          } else {
            dx.at(n, c, i, (j + w - win.offset) % w) -= g;
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor4<T> activation_backward(const Tensor4<T>& pre, const Tensor4<T>& dy, Activation act) {
  if (act == Activation::Identity) return dy;
  Tensor4<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] = dy.data()[i] * gelu_derivative(pre.data()[i]);
  return dx;
}

template <typename T>
T min_abs(const Tensor4<T>& x) {
  T m = std::numeric_limits<T>::infinity();
  for (T v : x.data()) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace detail

/// Forward activations of one SVGA block needed by the backward pass.
template <typename T>
struct SvgaBlockTape {
  detail::ConvBnTape<T> fc_in, graph_proj, fc_out, fc1, fc2;
  detail::MaxRelativeTape<T> maxrel;
  Tensor4<T> grapher_out;
  Tensor4<T> output;
  Activation act = Activation::Gelu;

  /// Smallest |pre-activation| seen at either activation.
  T min_abs_preactivation() const {
    return std::min(detail::min_abs(graph_proj.output), detail::min_abs(fc1.output));
  }
};

template <typename T>
SvgaBlockTape<T> svga_block_taped(const Tensor4<T>& x, const SvgaBlockWeights<T>& wts, Activation act = Activation::Gelu) {
  SvgaBlockTape<T> t;
  t.act = act;
  const auto& g = wts.grapher;
  check_mrconv_projection(x, g.graph_proj);
  t.fc_in = detail::conv_bn_taped(g.fc_in, x);
  t.maxrel = detail::max_relative_taped(t.fc_in.output, wts.k);
  t.graph_proj = detail::conv_bn_taped(g.graph_proj, concat_channels(t.fc_in.output, t.maxrel.xj));
  t.fc_out = detail::conv_bn_taped(g.fc_out, detail::activate(t.graph_proj.output, act));
  t.grapher_out = elem_add(t.fc_out.output, x);
  t.fc1 = detail::conv_bn_taped(wts.ffn.fc1, t.grapher_out);
  t.fc2 = detail::conv_bn_taped(wts.ffn.fc2, detail::activate(t.fc1.output, act));
  t.output = elem_add(t.fc2.output, t.grapher_out);
  return t;
}

/// Zero-valued gradient container with the same layout as `wts`.
template <typename T>
SvgaBlockWeights<T> zero_like(const SvgaBlockWeights<T>& wts) {
  SvgaBlockWeights<T> g = wts;
  g.visit({}, [](ParamRef<T> p) { std::fill(p.data.begin(), p.data.end(), T(0)); });
  return g;
}

template <typename T>
struct SvgaBlockGradients {
  Tensor4<T> input;
  SvgaBlockWeights<T> params;
};

/// Gradients of L = (dout . output) with respect to the input and every
/// trainable parameter of the block.
template <typename T>
SvgaBlockGradients<T> svga_block_backward(const SvgaBlockWeights<T>& wts, const SvgaBlockTape<T>& t,
                                          const Tensor4<T>& dout) {
  SvgaBlockGradients<T> g{Tensor4<T>(t.fc_in.input.shape()), zero_like(wts)};
  auto& gp = g.params;

  // FFN: z = fc2(act(fc1(y))) + y
  Tensor4<T> d_act2 = detail::conv_bn_backward(wts.ffn.fc2, t.fc2, dout, gp.ffn.fc2);
  Tensor4<T> d_h1 = detail::activation_backward(t.fc1.output, d_act2, t.act);
  Tensor4<T> dy = elem_add(detail::conv_bn_backward(wts.ffn.fc1, t.fc1, d_h1, gp.ffn.fc1), dout);

  // Grapher: y = fc_out(act(proj(concat(u, maxrel(u))))) + x, u = fc_in(x)
  Tensor4<T> d_act1 = detail::conv_bn_backward(wts.grapher.fc_out, t.fc_out, dy, gp.grapher.fc_out);
  Tensor4<T> d_p = detail::activation_backward(t.graph_proj.output, d_act1, t.act);
  Tensor4<T> d_cat = detail::conv_bn_backward(wts.grapher.graph_proj, t.graph_proj, d_p, gp.grapher.graph_proj);
  auto [d_u_direct, d_xj] = split_channels(d_cat, t.fc_in.output.c());
  Tensor4<T> d_u = elem_add(d_u_direct, detail::max_relative_backward(t.maxrel, d_xj));
  g.input = elem_add(detail::conv_bn_backward(wts.grapher.fc_in, t.fc_in, d_u, gp.grapher.fc_in), dy);
  return g;
}

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error is |a - f| / max(|a|, |f|, denominator_floor).
  double denominator_floor = 1e-3;
  /// Inputs are resampled while any |pre-activation| or max-fold margin is
  /// below this distance from a nondifferentiable point.
  double kink_margin = 1e-6;
  Activation act = Activation::Gelu;
  int max_resamples = 200;
  double weight_std = 0.5;
};

struct GradCheckReport {
  bool ok = true;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  int resamples = 0;
  std::string failure;
};

namespace detail {

template <typename T>
void randomize_block(SvgaBlockWeights<T>& wts, std::mt19937_64& rng, double weight_std) {
  std::normal_distribution<double> normal(0.0, weight_std);
  std::normal_distribution<double> shift(0.0, 0.5);
  std::uniform_real_distribution<double> positive(0.5, 1.5);
  wts.visit({}, [&](ParamRef<T> p) {
    for (T& v : p.data) {
      switch (p.kind) {
        case ParamKind::Weight: v = T(normal(rng)); break;
        case ParamKind::Bias:
        case ParamKind::BnBeta:
        case ParamKind::BnMean: v = T(shift(rng)); break;
        case ParamKind::BnGamma:
        case ParamKind::BnVar: v = T(positive(rng)); break;
      }
    }
  });
}

template <typename T>
double sum_all(const Tensor4<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return s;
}

}  // namespace detail

/// Compares the analytic gradient of L = sum(svga_block(x)) with central
/// finite differences for the input and every trainable parameter, at the
/// given point.
inline GradCheckReport grad_check_block(Tensor4<double> x, SvgaBlockWeights<double> wts,
                                        const GradCheckOptions& opts = {}) {
  using T = double;
  GradCheckReport report;
  const SvgaBlockTape<T> tape = svga_block_taped(x, wts, opts.act);
  const Tensor4<T> dout(tape.output.shape(), T(1));
  SvgaBlockGradients<T> grads = svga_block_backward(wts, tape, dout);

  auto params = collect_params<T>(wts);
  auto gparams = collect_params<T>(grads.params);
  auto first_non_finite = [](std::span<const T> g) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i])) return i;
    return g.size();
  };
  auto flag = [&](const std::string& name, std::span<const T> g) {
    const std::size_t bad = first_non_finite(g);
    if (bad == g.size()) return false;
    report.ok = false;
    report.failure = "non-finite gradient in " + name + "[" + std::to_string(bad) + "]";
    report.worst_param = name;
    report.worst_index = bad;
    return true;
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].trainable() && flag(params[p].name, gparams[p].data)) return report;
  }
  if (flag("input", grads.input.data())) return report;

  auto loss = [&] { return detail::sum_all(svga_block_taped(x, wts, opts.act).output); };
  auto check = [&](const std::string& name, std::span<T> values, std::span<const T> analytic) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + opts.step;
      const double up = loss();
      values[i] = saved - opts.step;
      const double down = loss();
      values[i] = saved;
      const double a = analytic[i];
      const double fd = (up - down) / (2.0 * opts.step);
      const double denom = std::max({std::abs(a), std::abs(fd), opts.denominator_floor});
      const double rel = std::abs(a - fd) / denom;
      ++report.coordinates_checked;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  };
  check("input", x.data(), grads.input.data());
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].trainable()) check(params[p].name, params[p].data, gparams[p].data);
  }
  return report;
}

/// Samples a random block and input of `shape` (resampling away from max
/// ties and zero pre-activations) and runs grad_check_block on it.
inline GradCheckReport grad_check_svga(Shape4 shape, std::int64_t k, std::uint64_t seed,
                                       const GradCheckOptions& opts = {}) {
  using T = double;
  if (shape.numel() > 4096) throw ConfigError("grad_check_svga: at most 4096 input elements");
  SvgaBlockWeights<T> wts(shape.c, k, 4);
  Tensor4<T> x(shape);
  for (int attempt = 0; attempt <= opts.max_resamples; ++attempt) {
    std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(attempt));
    detail::randomize_block(wts, rng, opts.weight_std);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (T& v : x.data()) v = normal(rng);
    const SvgaBlockTape<T> tape = svga_block_taped(x, wts, opts.act);
    const bool near_kink = tape.maxrel.min_margin < opts.kink_margin ||
                           (opts.act == Activation::Gelu && tape.min_abs_preactivation() < opts.kink_margin);
    if (!near_kink) {
      GradCheckReport report = grad_check_block(x, wts, opts);
      report.resamples = attempt;
      return report;
    }
  }
  GradCheckReport report;
  report.ok = false;
  report.failure = "could not sample a point away from nondifferentiable regions";
  return report;
}

}  // namespace mvig
