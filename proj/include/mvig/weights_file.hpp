#pragma once

// Binary weights container, little-endian throughout:
//
//   "MVIG"            4 bytes magic
//   version           u32 (currently 1)
//   variant           u32 length + UTF-8 bytes
//   entry count       u32
//   per entry:        u32 name length + UTF-8 name, u32 rank, rank x u32 dims,
//                     prod(dims) x f32

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mvig/arch.hpp"

namespace mvig {

inline constexpr std::array<char, 4> kWeightsMagic{'M', 'V', 'I', 'G'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(std::string("truncated file reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
  const std::uint32_t len = get_u32(is, what);
  if (len > (1u << 16)) throw FormatError(std::string("implausible length for ") + what);
  std::string s(len, '\0');
  if (!is.read(s.data(), len)) throw FormatError(std::string("truncated file reading ") + what);
  return s;
}

}  // namespace detail

inline void save_weights(std::ostream& os, const ModelWeights<float>& model) {
  // visit() hands out mutable views; nothing below writes through them.
  auto params = const_cast<ModelWeights<float>&>(model).named_parameters();
  os.write(kWeightsMagic.data(), 4);
  detail::put_u32(os, kWeightsVersion);
  detail::put_string(os, model.cfg.name);
  detail::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_string(os, p.name);
    detail::put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t d : p.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : p.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw FormatError("failed writing weights");
}

inline void save_weights(const std::string& path, const ModelWeights<float>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  save_weights(os, model);
}

/// Reads a weights file. Entries must match, name for name and shape for
/// shape, the layout of the variant recorded in the header; when
/// `expected_variant` is non-empty the header must also name that variant.
inline ModelWeights<float> load_weights(std::istream& is, const std::string& expected_variant = {}) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kWeightsMagic) throw FormatError("bad magic: not an MVIG weights file");
  const std::uint32_t version = detail::get_u32(is, "version");
  if (version != kWeightsVersion) throw FormatError("unsupported weights format version " + std::to_string(version));
  const std::string variant = detail::get_string(is, "variant name");
  if (!expected_variant.empty() && variant != expected_variant) {
    throw FormatError("weights are for variant '" + variant + "', expected '" + expected_variant + "'");
  }
  VariantConfig cfg;
  try {
    cfg = variant_config(variant);
  } catch (const InputError&) {
    throw FormatError("weights file names unknown variant '" + variant + "'");
  }
  ModelWeights<float> model(cfg);
  auto params = model.named_parameters();
  const std::uint32_t count = detail::get_u32(is, "entry count");
  if (count != params.size()) {
    throw FormatError("entry count " + std::to_string(count) + " does not match variant " + variant + " (" +
                      std::to_string(params.size()) + " tensors)");
  }
  for (auto& p : params) {
    const std::string name = detail::get_string(is, "entry name");
    if (name != p.name) throw FormatError("unexpected entry '" + name + "', expected '" + p.name + "'");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    if (rank != p.shape.size()) throw FormatError("rank mismatch for '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = detail::get_u32(is, "dims");
      if (dim != p.shape[d]) {
        throw FormatError("shape mismatch for '" + name + "': dim " + std::to_string(d) + " is " +
                          std::to_string(dim) + ", expected " + std::to_string(p.shape[d]));
      }
    }
    for (float& v : p.data) v = std::bit_cast<float>(detail::get_u32(is, "tensor data"));
  }
  return model;
}

inline ModelWeights<float> load_weights(const std::string& path, const std::string& expected_variant = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  return load_weights(is, expected_variant);
}

}  // namespace mvig
