// SPDX-License-Identifier: Apache-2.0
#pragma once

// LBT1 tensor files: "LBT1", u32 rank, rank x u32 dims, then the row-major
// float32 payload. Every integer and float is little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "lemb/error.hpp"
#include "lemb/tensor.hpp"

namespace lemb::lbt {

inline constexpr std::array<char, 4> kMagic{'L', 'B', 'T', '1'};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode(const Tensor<float>& t) {
  std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Tensor<float> decode(const std::vector<unsigned char>& bytes,
                            const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) {
    return ParseError(origin + ": " + why);
  };
  if (bytes.size() < 8 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    throw fail("missing LBT1 magic");
  const std::uint32_t rank = detail::get_u32(bytes.data() + 4);
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw fail("truncated header");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i)
    shape[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
  const std::size_t n = shape_size(shape);
  if (bytes.size() != header + 4 * n)
    throw fail("payload holds " + std::to_string(bytes.size() - header) +
               " bytes, shape " + shape_string(shape) + " needs " +
               std::to_string(4 * n));
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i)
    data[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + header + 4 * i));
  return Tensor<float>(std::move(shape), std::move(data));
}

inline void write(const std::filesystem::path& path, const Tensor<float>& t) {
  const auto bytes = encode(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Tensor<float> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode(bytes, path.string());
}

}  // namespace lemb::lbt
