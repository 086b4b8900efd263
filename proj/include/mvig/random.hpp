#pragma once

#include <cstdint>
#include <random>

#include "mvig/layers.hpp"
#include "mvig/svga.hpp"

namespace mvig {

template <typename T>
void fill_normal(std::span<T> values, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (T& v : values) v = static_cast<T>(normal(rng));
}

/// Random conv weights/biases and a non-trivial batch norm.
template <typename T>
void randomize(ConvBn<T>& layer, std::mt19937_64& rng, double weight_std = 0.2) {
  std::normal_distribution<double> normal(0.0, weight_std);
  std::uniform_real_distribution<double> positive(0.5, 1.5);
  layer.visit({}, [&](ParamRef<T> p) {
    for (T& v : p.data) {
      switch (p.kind) {
        case ParamKind::BnGamma:
        case ParamKind::BnVar: v = static_cast<T>(positive(rng)); break;
        default: v = static_cast<T>(normal(rng)); break;
      }
    }
  });
}

template <typename T>
SvgaBlockWeights<T> random_svga_block(std::size_t channels, std::int64_t k, std::mt19937_64& rng,
                                      double weight_std = 0.2) {
  SvgaBlockWeights<T> w(channels, k, 4);
  for (auto* layer : {&w.grapher.fc_in, &w.grapher.graph_proj, &w.grapher.fc_out, &w.ffn.fc1, &w.ffn.fc2}) {
    randomize(*layer, rng, weight_std);
  }
  return w;
}

}  // namespace mvig
