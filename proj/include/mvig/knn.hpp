#pragma once

// KNN-graph max-relative aggregation, the baseline that SVGA replaces.
// The graph is rebuilt for every input and the features are moved into a
// node-major (n, h*w, c) layout for the gather, then moved back. Both
// reshapes are real copies so that their cost shows up in benchmarks.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mvig/layers.hpp"
#include "mvig/svga.hpp"

namespace mvig {

/// Per-batch-element neighbour lists over flattened row-major pixel indices.
struct KnnAdjacency {
  std::size_t batch = 0;
  std::size_t num_nodes = 0;
  std::size_t k = 0;
  /// (batch, node, k) row-major.
  std::vector<std::uint32_t> neighbor_idx;

  std::span<const std::uint32_t> neighbors(std::size_t b, std::size_t node) const {
    return {neighbor_idx.data() + (b * num_nodes + node) * k, k};
  }
};

/// Node-major copy of a feature map: (n, c, h, w) -> (n, h*w, c).
template <typename T>
std::vector<T> to_node_major(const Tensor4<T>& x) {
  const std::size_t nodes = x.h() * x.w(), c = x.c();
  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto src = x.plane(n, ch);
      T* dst = out.data() + n * nodes * c + ch;
      for (std::size_t p = 0; p < nodes; ++p) dst[p * c] = src[p];
    }
  }
  return out;
}

/// Inverse of to_node_major.
template <typename T>
Tensor4<T> from_node_major(std::span<const T> nodes_major, Shape4 shape) {
  const std::size_t nodes = shape.h * shape.w, c = shape.c;
  Tensor4<T> out(shape);
  for (std::size_t n = 0; n < shape.n; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto dst = out.plane(n, ch);
      const T* src = nodes_major.data() + n * nodes * c + ch;
      for (std::size_t p = 0; p < nodes; ++p) dst[p] = src[p * c];
    }
  }
  return out;
}

/// Squared Euclidean distance between two node feature rows, summed in
/// channel order.
template <typename T>
T squared_distance(const T* a, const T* b, std::size_t c) {
  T acc = T(0);
  for (std::size_t i = 0; i < c; ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

/// k nearest pixels in feature space for every pixel, self excluded, ties
/// broken by lower flat index.
template <typename T>
KnnAdjacency knn_graph(const Tensor4<T>& x, std::size_t k) {
  const std::size_t nodes = x.h() * x.w(), c = x.c();
  if (k >= nodes) {
    throw ConfigError("knn_graph: k=" + std::to_string(k) + " must be smaller than the " + std::to_string(nodes) +
                      " pixels");
  }
  KnnAdjacency adj{x.n(), nodes, k, std::vector<std::uint32_t>(x.n() * nodes * k)};
  if (k == 0) return adj;

  const std::vector<T> feats = to_node_major(x);
  std::vector<T> dist(nodes);
  std::vector<std::uint32_t> order(nodes - 1);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* base = feats.data() + n * nodes * c;
    for (std::size_t p = 0; p < nodes; ++p) {
      for (std::size_t q = 0; q < nodes; ++q) dist[q] = squared_distance(base + p * c, base + q * c, c);
      std::size_t o = 0;
      for (std::size_t q = 0; q < nodes; ++q) {
        if (q != p) order[o++] = static_cast<std::uint32_t>(q);
      }
      const auto closer = [&](std::uint32_t a, std::uint32_t b) {
        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
      };
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);
      std::copy_n(order.begin(), k, adj.neighbor_idx.begin() + static_cast<std::ptrdiff_t>((n * nodes + p) * k));
    }
  }
  return adj;
}

/// Adjacency realising a FixedGraph: column-offset neighbours first, then
/// row-offset neighbours, each in increasing offset order.
inline KnnAdjacency adjacency_from_fixed_graph(const FixedGraph& g, std::size_t batch) {
  const std::size_t nodes = g.h * g.w, k = g.neighbor_count();
  KnnAdjacency adj{batch, nodes, k, std::vector<std::uint32_t>(batch * nodes * k)};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < g.h; ++i) {
      for (std::size_t j = 0; j < g.w; ++j) {
        auto* dst = adj.neighbor_idx.data() + (b * nodes + i * g.w + j) * k;
        for (std::size_t off : g.col_offsets) *dst++ = static_cast<std::uint32_t>(((i + g.h - off) % g.h) * g.w + j);
        for (std::size_t off : g.row_offsets) *dst++ = static_cast<std::uint32_t>(i * g.w + (j + g.w - off) % g.w);
      }
    }
  }
  return adj;
}

/// Aggregation half of the KNN MRConv: reshape to 3D, gather neighbours,
/// fold max(X(p) - X(q)) with zero, reshape back to 4D.
template <typename T>
Tensor4<T> max_relative_knn(const Tensor4<T>& x, const KnnAdjacency& adj) {
  const std::size_t nodes = x.h() * x.w(), c = x.c(), k = adj.k;
  if (adj.batch != x.n() || adj.num_nodes != nodes) {
    throw ConfigError("mrconv_knn: adjacency built for a different input shape");
  }
  const std::vector<T> feats = to_node_major(x);
  std::vector<T> gathered(nodes * k * c);
  std::vector<T> agg(x.size());
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* base = feats.data() + n * nodes * c;
    for (std::size_t p = 0; p < nodes; ++p) {
      auto nbrs = adj.neighbors(n, p);
      for (std::size_t s = 0; s < k; ++s) {
        if (nbrs[s] >= nodes) throw InternalError("mrconv_knn: neighbour index out of range");
        std::copy_n(base + static_cast<std::size_t>(nbrs[s]) * c, c, gathered.data() + (p * k + s) * c);
      }
    }
    for (std::size_t p = 0; p < nodes; ++p) {
      const T* self = base + p * c;
      T* out = agg.data() + (n * nodes + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        T best = T(0);
        for (std::size_t s = 0; s < k; ++s) {
          const T rel = self[ch] - gathered[(p * k + s) * c + ch];
          best = rel > best ? rel : best;
        }
        out[ch] = best;
      }
    }
  }
  return from_node_major<T>(agg, x.shape());
}

template <typename T>
Tensor4<T> mrconv_knn(const Tensor4<T>& x, const KnnAdjacency& adj, const ConvBn<T>& proj) {
  check_mrconv_projection(x, proj);
  return proj.forward(concat_channels(x, max_relative_knn(x, adj)));
}

}  // namespace mvig
