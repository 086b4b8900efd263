#pragma once

// Parameterised building blocks shared by every stage: conv + BN units,
// fully connected layers, and the named-parameter view used for
// initialisation, counting and serialisation.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvig/ops.hpp"

namespace mvig {

enum class ParamKind { Weight, Bias, BnGamma, BnBeta, BnMean, BnVar };

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

inline bool is_trainable(ParamKind k) { return k != ParamKind::BnMean && k != ParamKind::BnVar; }

/// Mutable view of one named parameter tensor.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<T> data;
  ParamKind kind;

  bool trainable() const { return is_trainable(kind); }
};

template <typename T>
using ParamVisitor = std::function<void(ParamRef<T>)>;

template <typename T>
void visit_bn_params(BatchNormParams<T>& bn, const std::string& prefix, const ParamVisitor<T>& fn) {
  const std::vector<std::size_t> s{bn.channels()};
  fn({join_name(prefix, "gamma"), s, bn.gamma, ParamKind::BnGamma});
  fn({join_name(prefix, "beta"), s, bn.beta, ParamKind::BnBeta});
  fn({join_name(prefix, "running_mean"), s, bn.mean, ParamKind::BnMean});
  fn({join_name(prefix, "running_var"), s, bn.var, ParamKind::BnVar});
}

/// Convolution followed by inference-mode batch norm.
template <typename T>
struct ConvBn {
  ConvSpec spec;
  Tensor4<T> weight;
  std::vector<T> bias;
  BatchNormParams<T> bn;

  ConvBn() = default;
  /// Zero kernel and bias, identity batch norm.
  explicit ConvBn(const ConvSpec& s)
      : spec(s), weight(s.weight_shape()), bias(s.out_channels, T(0)), bn(BatchNormParams<T>::identity(s.out_channels)) {
    s.validate();
  }

  Tensor4<T> forward(const Tensor4<T>& x) const {
    return batchnorm_infer(conv2d(x, spec, weight, std::span<const T>(bias)), bn);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    const Shape4 ws = weight.shape();
    fn({join_name(prefix, "conv.weight"), {ws.n, ws.c, ws.h, ws.w}, weight.data(), ParamKind::Weight});
    fn({join_name(prefix, "conv.bias"), {bias.size()}, bias, ParamKind::Bias});
    visit_bn_params(bn, join_name(prefix, "bn"), fn);
  }
};

/// Fully connected layer with weight shaped (out_features, in_features).
template <typename T>
struct Linear {
  Tensor2<T> weight;
  std::vector<T> bias;

  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features)
      : weight(out_features, in_features), bias(out_features, T(0)) {}

  std::size_t in_features() const { return weight.c(); }
  std::size_t out_features() const { return weight.n(); }

  Tensor2<T> forward(const Tensor2<T>& x) const { return linear(x, weight, std::span<const T>(bias)); }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn({join_name(prefix, "weight"), {weight.n(), weight.c()}, weight.data(), ParamKind::Weight});
    fn({join_name(prefix, "bias"), {bias.size()}, bias, ParamKind::Bias});
  }
};

/// Collects every parameter of `obj` in visit order.
template <typename T, typename Obj>
std::vector<ParamRef<T>> collect_params(Obj& obj, const std::string& prefix = {}) {
  std::vector<ParamRef<T>> out;
  obj.visit(prefix, [&](ParamRef<T> p) { out.push_back(std::move(p)); });
  return out;
}

}  // namespace mvig
