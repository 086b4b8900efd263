#pragma once

// Reference NCHW kernels. Every kernel is a pure function of its inputs and
// uses a fixed accumulation order, so repeated runs are bitwise identical.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvig/error.hpp"
#include "mvig/tensor.hpp"

namespace mvig {

inline constexpr double kDefaultBnEps = 1e-5;

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kh = 1, kw = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  static ConvSpec pointwise(std::size_t in, std::size_t out) { return {in, out, 1, 1, 1, 0, 1}; }
  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                         std::size_t padding, std::size_t groups = 1) {
    return {in, out, k, k, stride, padding, groups};
  }

  void validate() const {
    if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("ConvSpec: channels " + std::to_string(in_channels) + "->" +
                        std::to_string(out_channels) + " not divisible by groups " + std::to_string(groups));
    }
    if (kh == 0 || kw == 0 || stride == 0) throw ConfigError("ConvSpec: kernel and stride must be >= 1");
  }

  Shape4 weight_shape() const { return {out_channels, in_channels / groups, kh, kw}; }

  std::size_t out_dim(std::size_t dim, std::size_t kernel) const {
    if (dim + 2 * padding < kernel) throw ConfigError("ConvSpec: kernel larger than padded input");
    return (dim + 2 * padding - kernel) / stride + 1;
  }
};

namespace detail {

inline std::size_t wrap(std::int64_t v, std::size_t period) {
  const auto p = static_cast<std::int64_t>(period);
  const std::int64_t r = v % p;
  return static_cast<std::size_t>(r < 0 ? r + p : r);
}

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <typename T>
T gelu_scalar(T x) {
  return x * T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

}  // namespace detail

/// Circular shift: out[n,c,i,j] = x[n,c,(i-down) mod h,(j-right) mod w].
template <typename T>
Tensor4<T> roll_2d(const Tensor4<T>& x, std::int64_t down, std::int64_t right) {
  const std::size_t h = x.h(), w = x.w();
  const std::size_t dr = detail::wrap(down, h);
  const std::size_t dc = detail::wrap(right, w);
  Tensor4<T> out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t si = (i + h - dr) % h;
        const T* srow = src.data() + si * w;
        T* drow = dst.data() + i * w;
        // Split the row at the wrap point: two contiguous copies.
        std::copy(srow + (w - dc), srow + w, drow);
        std::copy(srow, srow + (w - dc), drow + dc);
      }
    }
  }
  return out;
}

/// Cross-correlation with zero padding. weights: (out, in/groups, kh, kw).
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvSpec& spec, const Tensor4<T>& weights, std::span<const T> bias) {
  spec.validate();
  if (x.c() != spec.in_channels) {
    throw ConfigError("conv2d: input has " + std::to_string(x.c()) + " channels, spec expects " +
                      std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    throw ConfigError("conv2d: weight shape " + weights.shape().str() + " != expected " +
                      spec.weight_shape().str());
  }
  if (!bias.empty() && bias.size() != spec.out_channels) {
    throw ConfigError("conv2d: bias length does not match out_channels");
  }

  const std::size_t H = x.h(), W = x.w();
  const std::size_t OH = spec.out_dim(H, spec.kh), OW = spec.out_dim(W, spec.kw);
  const std::size_t in_per_group = spec.in_channels / spec.groups;
  const std::size_t out_per_group = spec.out_channels / spec.groups;
  const auto pad = static_cast<std::int64_t>(spec.padding);
  const auto stride = static_cast<std::int64_t>(spec.stride);

  Tensor4<T> out(Shape4{x.n(), spec.out_channels, OH, OW});
  std::vector<T> acc(OH * OW);

  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      const std::size_t g = oc / out_per_group;
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t icg = 0; icg < in_per_group; ++icg) {
        const T* src = x.plane(n, g * in_per_group + icg).data();
        for (std::size_t ky = 0; ky < spec.kh; ++ky) {
          for (std::size_t kx = 0; kx < spec.kw; ++kx) {
            const T wv = weights.at(oc, icg, ky, kx);
            // Valid output columns: 0 <= ox*stride - pad + kx < W.
            const std::int64_t off_x = static_cast<std::int64_t>(kx) - pad;
            std::int64_t ox_lo = off_x >= 0 ? 0 : (-off_x + stride - 1) / stride;
            std::int64_t ox_hi = (static_cast<std::int64_t>(W) - 1 - off_x);
            ox_hi = ox_hi < 0 ? -1 : std::min<std::int64_t>(ox_hi / stride, static_cast<std::int64_t>(OW) - 1);
            if (ox_lo > ox_hi) continue;
            for (std::size_t oy = 0; oy < OH; ++oy) {
              const std::int64_t iy = static_cast<std::int64_t>(oy) * stride - pad + static_cast<std::int64_t>(ky);
              if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
              const T* srow = src + static_cast<std::size_t>(iy) * W;
              T* arow = acc.data() + oy * OW;
              for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                arow[ox] += wv * srow[ox * stride + off_x];
              }
            }
          }
        }
      }
      const T b = bias.empty() ? T(0) : bias[oc];
      auto dst = out.plane(n, oc);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = acc[i] + b;
    }
  }
  return out;
}

/// Per-channel statistics for inference-mode batch norm.
template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta, mean, var;
  T eps = T(kDefaultBnEps);

  static BatchNormParams identity(std::size_t channels, T eps = T(kDefaultBnEps)) {
    return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)), std::vector<T>(channels, T(0)),
            std::vector<T>(channels, T(1)), eps};
  }
  std::size_t channels() const { return gamma.size(); }

  void validate(std::size_t channels) const {
    if (gamma.size() != channels || beta.size() != channels || mean.size() != channels || var.size() != channels) {
      throw ConfigError("batchnorm: per-channel vectors must have length " + std::to_string(channels));
    }
    for (T v : var) {
      if (!(v >= T(0))) throw ConfigError("batchnorm: negative variance");
      if (!(v + eps > T(0))) throw ConfigError("batchnorm: var + eps must be positive");
    }
  }
};

/// out = gamma * (x - mean) / sqrt(var + eps) + beta, per channel.
template <typename T>
Tensor4<T> batchnorm_infer(const Tensor4<T>& x, const BatchNormParams<T>& bn) {
  bn.validate(x.c());
  Tensor4<T> out(x.shape());
  for (std::size_t c = 0; c < x.c(); ++c) {
    const T denom = std::sqrt(bn.var[c] + bn.eps);
    for (std::size_t n = 0; n < x.n(); ++n) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = bn.gamma[c] * (src[i] - bn.mean[c]) / denom + bn.beta[c];
      }
    }
  }
  return out;
}

template <typename T>
Tensor2<T> batchnorm_infer(const Tensor2<T>& x, const BatchNormParams<T>& bn) {
  bn.validate(x.c());
  Tensor2<T> out(x.n(), x.c());
  for (std::size_t c = 0; c < x.c(); ++c) {
    const T denom = std::sqrt(bn.var[c] + bn.eps);
    for (std::size_t n = 0; n < x.n(); ++n) {
      out.at(n, c) = bn.gamma[c] * (x.at(n, c) - bn.mean[c]) / denom + bn.beta[c];
    }
  }
  return out;
}

/// Exact GeLU: x * Phi(x).
template <typename T>
Tensor4<T> gelu(Tensor4<T> x) {
  for (T& v : x.data()) v = detail::gelu_scalar(v);
  return x;
}

template <typename T>
Tensor2<T> gelu(Tensor2<T> x) {
  for (T& v : x.data()) v = detail::gelu_scalar(v);
  return x;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ConfigError("concat_channels: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  Tensor4<T> out(Shape4{a.n(), a.c() + b.c(), a.h(), a.w()});
  const std::size_t pa = a.c() * a.h() * a.w(), pb = b.c() * b.h() * b.w();
  auto dst = out.data().begin();
  for (std::size_t n = 0; n < a.n(); ++n) {
    dst = std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(n * pa), pa, dst);
    dst = std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(n * pb), pb, dst);
  }
  return out;
}

/// Inverse of concat_channels: splits off the first `first_channels` channels.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& x, std::size_t first_channels) {
  if (first_channels == 0 || first_channels >= x.c()) throw ConfigError("split_channels: bad split point");
  Tensor4<T> a(Shape4{x.n(), first_channels, x.h(), x.w()});
  Tensor4<T> b(Shape4{x.n(), x.c() - first_channels, x.h(), x.w()});
  const std::size_t pa = a.c() * x.h() * x.w(), pb = b.c() * x.h() * x.w();
  auto src = x.data().begin();
  for (std::size_t n = 0; n < x.n(); ++n) {
    std::copy_n(src, pa, a.data().begin() + static_cast<std::ptrdiff_t>(n * pa));
    src += static_cast<std::ptrdiff_t>(pa);
    std::copy_n(src, pb, b.data().begin() + static_cast<std::ptrdiff_t>(n * pb));
    src += static_cast<std::ptrdiff_t>(pb);
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor4<T> elem_add(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "elem_add");
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <typename T>
Tensor4<T> elem_sub(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "elem_sub");
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

/// Elementwise max; on ties the second operand (the running value) is kept.
template <typename T>
Tensor4<T> elem_max(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "elem_max");
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data()[i] = a.data()[i] > b.data()[i] ? a.data()[i] : b.data()[i];
  }
  return out;
}

template <typename T>
Tensor2<T> global_avg_pool(const Tensor4<T>& x) {
  Tensor2<T> out(x.n(), x.c());
  const T count = static_cast<T>(x.h() * x.w());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      T sum = T(0);
      for (T v : x.plane(n, c)) sum += v;
      out.at(n, c) = sum / count;
    }
  }
  return out;
}

/// y = x W^T + b with weight shaped (out_features, in_features).
template <typename T>
Tensor2<T> linear(const Tensor2<T>& x, const Tensor2<T>& weight, std::span<const T> bias) {
  if (weight.c() != x.c()) {
    throw ConfigError("linear: weight expects " + std::to_string(weight.c()) + " inputs, got " +
                      std::to_string(x.c()));
  }
  if (!bias.empty() && bias.size() != weight.n()) throw ConfigError("linear: bias length mismatch");
  Tensor2<T> out(x.n(), weight.n());
  for (std::size_t i = 0; i < x.n(); ++i) {
    auto xi = x.row(i);
    for (std::size_t o = 0; o < weight.n(); ++o) {
      auto wo = weight.row(o);
      T acc = T(0);
      for (std::size_t j = 0; j < xi.size(); ++j) acc += xi[j] * wo[j];
      out.at(i, o) = acc + (bias.empty() ? T(0) : bias[o]);
    }
  }
  return out;
}

}  // namespace mvig
