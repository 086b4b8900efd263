#pragma once

// Sparse Vision Graph Attention.
//
// Every pixel is connected to every K-th pixel of its row and column. The
// connectivity depends only on (H, W, K), so max-relative aggregation is done
// with circular rolls over the whole feature map instead of a per-image
// neighbour search and 4D <-> 3D reshapes.
//
// The roll path (max_relative_roll / mrconv_roll) is the production kernel.
// max_relative_gather / mrconv_gather_oracle enumerate each pixel's neighbours
// explicitly and exist to certify the roll path bit for bit.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvig/layers.hpp"
#include "mvig/ops.hpp"
#include "mvig/tensor.hpp"

namespace mvig {

/// Fixed row/column connectivity for an (h, w) grid with stride k.
struct FixedGraph {
  std::size_t h = 0, w = 0, k = 0;
  /// Rightward circular offsets {mK : m >= 1, mK < w}.
  std::vector<std::size_t> row_offsets;
  /// Downward circular offsets {mK : m >= 1, mK < h}.
  std::vector<std::size_t> col_offsets;

  /// Explicit neighbours per pixel; the zero self-term is not included.
  std::size_t neighbor_count() const { return row_offsets.size() + col_offsets.size(); }
};

inline FixedGraph build_fixed_offsets(std::size_t h, std::size_t w, std::int64_t k) {
  if (k <= 0) throw ConfigError("build_fixed_offsets: k must be >= 1, got " + std::to_string(k));
  if (h == 0 || w == 0) throw ConfigError("build_fixed_offsets: grid dimensions must be >= 1");
  FixedGraph g{h, w, static_cast<std::size_t>(k), {}, {}};
  for (std::size_t off = g.k; off < w; off += g.k) g.row_offsets.push_back(off);
  for (std::size_t off = g.k; off < h; off += g.k) g.col_offsets.push_back(off);
  return g;
}

/// Instrumentation for the max fold: counts contributions per pixel.
struct FoldCounter {
  std::size_t self_terms = 0;      // m = 0 iterations (relative feature is exactly zero)
  std::size_t neighbor_terms = 0;  // m >= 1 iterations
};

/// X_j of the roll formulation: running elementwise max of X - roll(X, mK)
/// over downward then rightward rolls, starting from zeros.
template <typename T>
Tensor4<T> max_relative_roll(const Tensor4<T>& x, std::int64_t k, FoldCounter* counter = nullptr) {
  if (k <= 0) throw ConfigError("max_relative_roll: k must be >= 1, got " + std::to_string(k));
  const auto h = static_cast<std::int64_t>(x.h());
  const auto w = static_cast<std::int64_t>(x.w());
  Tensor4<T> xj(x.shape(), T(0));
  for (std::int64_t m = 0; m * k < h; ++m) {
    xj = elem_max(elem_sub(x, roll_2d(x, m * k, 0)), xj);
    if (counter) (m == 0 ? counter->self_terms : counter->neighbor_terms)++;
  }
  for (std::int64_t m = 0; m * k < w; ++m) {
    xj = elem_max(elem_sub(x, roll_2d(x, 0, m * k)), xj);
    if (counter) (m == 0 ? counter->self_terms : counter->neighbor_terms)++;
  }
  return xj;
}

/// X_j by explicit per-pixel neighbour enumeration over `graph`.
template <typename T>
Tensor4<T> max_relative_gather(const Tensor4<T>& x, const FixedGraph& graph) {
  if (graph.h != x.h() || graph.w != x.w()) {
    throw ConfigError("mrconv_gather_oracle: graph is for " + std::to_string(graph.h) + "x" +
                      std::to_string(graph.w) + ", input is " + x.shape().str());
  }
  const std::size_t h = x.h(), w = x.w();
  Tensor4<T> xj(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const T self = x.at(n, c, i, j);
          T best = T(0);
          for (std::size_t off : graph.col_offsets) {
            const T rel = self - x.at(n, c, (i + h - off) % h, j);
            best = rel > best ? rel : best;
          }
          for (std::size_t off : graph.row_offsets) {
            const T rel = self - x.at(n, c, i, (j + w - off) % w);
            best = rel > best ? rel : best;
          }
          xj.at(n, c, i, j) = best;
        }
      }
    }
  }
  return xj;
}

template <typename T>
void check_mrconv_projection(const Tensor4<T>& x, const ConvBn<T>& proj) {
  if (proj.spec.in_channels != 2 * x.c() || proj.spec.kh != 1 || proj.spec.kw != 1 || proj.spec.groups != 1) {
    throw ConfigError("mrconv: projection must be a 1x1, groups=1 conv from " + std::to_string(2 * x.c()) +
                      " channels");
  }
}

/// Max-relative graph convolution via rolls: proj(concat(X, X_j)).
template <typename T>
Tensor4<T> mrconv_roll(const Tensor4<T>& x, std::int64_t k, const ConvBn<T>& proj) {
  check_mrconv_projection(x, proj);
  return proj.forward(concat_channels(x, max_relative_roll(x, k)));
}

template <typename T>
Tensor4<T> mrconv_gather_oracle(const Tensor4<T>& x, const FixedGraph& graph, const ConvBn<T>& proj) {
  check_mrconv_projection(x, proj);
  return proj.forward(concat_channels(x, max_relative_gather(x, graph)));
}

/// Grapher: Y = BN(fc_out(GeLU(MRConv(BN(fc_in(X)))))) + X.
template <typename T>
struct GrapherWeights {
  ConvBn<T> fc_in;      // C -> C
  ConvBn<T> graph_proj; // 2C -> 2C, the MRConv projection
  ConvBn<T> fc_out;     // 2C -> C

  GrapherWeights() = default;
  explicit GrapherWeights(std::size_t channels)
      : fc_in(ConvSpec::pointwise(channels, channels)),
        graph_proj(ConvSpec::pointwise(2 * channels, 2 * channels)),
        fc_out(ConvSpec::pointwise(2 * channels, channels)) {}

  std::size_t channels() const { return fc_in.spec.in_channels; }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fc_in.visit(join_name(prefix, "fc_in"), fn);
    graph_proj.visit(join_name(prefix, "graph_conv"), fn);
    fc_out.visit(join_name(prefix, "fc_out"), fn);
  }
};

/// Two-layer pointwise MLP with residual: Z = BN(fc2(GeLU(BN(fc1(X))))) + X.
template <typename T>
struct FfnWeights {
  ConvBn<T> fc1;  // C -> rC
  ConvBn<T> fc2;  // rC -> C
  std::size_t ratio = 4;

  FfnWeights() = default;
  FfnWeights(std::size_t channels, std::size_t hidden_ratio)
      : fc1(ConvSpec::pointwise(channels, hidden_ratio * channels)),
        fc2(ConvSpec::pointwise(hidden_ratio * channels, channels)),
        ratio(hidden_ratio) {
    if (hidden_ratio < 1) throw ConfigError("FfnWeights: hidden ratio must be >= 1");
  }

  std::size_t channels() const { return fc1.spec.in_channels; }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fc1.visit(join_name(prefix, "fc1"), fn);
    fc2.visit(join_name(prefix, "fc2"), fn);
  }
};

template <typename T>
struct SvgaBlockWeights {
  GrapherWeights<T> grapher;
  FfnWeights<T> ffn;
  std::int64_t k = 2;

  SvgaBlockWeights() = default;
  SvgaBlockWeights(std::size_t channels, std::int64_t stride_k, std::size_t ffn_ratio = 4)
      : grapher(channels), ffn(channels, ffn_ratio), k(stride_k) {
    if (stride_k < 1) throw ConfigError("SvgaBlockWeights: k must be >= 1");
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    grapher.visit(join_name(prefix, "grapher"), fn);
    ffn.visit(join_name(prefix, "ffn"), fn);
  }
};

template <typename T>
Tensor4<T> grapher_forward(const Tensor4<T>& x, const GrapherWeights<T>& wts, std::int64_t k) {
  if (x.c() != wts.channels()) {
    throw ConfigError("grapher_forward: input has " + std::to_string(x.c()) + " channels, block width is " +
                      std::to_string(wts.channels()));
  }
  const Tensor4<T> in = wts.fc_in.forward(x);
  const Tensor4<T> agg = gelu(mrconv_roll(in, k, wts.graph_proj));
  return elem_add(wts.fc_out.forward(agg), x);
}

template <typename T>
Tensor4<T> ffn_forward(const Tensor4<T>& x, const FfnWeights<T>& wts) {
  if (x.c() != wts.channels()) {
    throw ConfigError("ffn_forward: input has " + std::to_string(x.c()) + " channels, block width is " +
                      std::to_string(wts.channels()));
  }
  return elem_add(wts.fc2.forward(gelu(wts.fc1.forward(x))), x);
}

template <typename T>
Tensor4<T> svga_block_forward(const Tensor4<T>& x, const SvgaBlockWeights<T>& wts) {
  return ffn_forward(grapher_forward(x, wts.grapher, wts.k), wts.ffn);
}

}  // namespace mvig
