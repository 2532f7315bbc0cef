// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
//
// Tensor container format used for checkpoints, latent libraries and dense
// ground-truth maps:
//
//   magic "GAFT" | u32 version | records...
//   record: u32 name length | UTF-8 name | u8 dtype (0 = f32) |
//           u32 rank | u64 extents[rank] | row-major little-endian payload
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "genassets/tensor.hpp"

namespace ga {

inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  // Host is little-endian on every supported target; bytes go out as-is.
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  GA_CHECK(is.good(), IoError, "tensor container: unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

struct TensorEntryInfo {
  std::string name;
  Shape shape;
};

// Names are written in map order (lexicographic), so identical contents give
// identical bytes.
inline void write_container(const std::string& path, const std::map<std::string, Tensorf>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  GA_CHECK(os.good(), IoError, "cannot open for writing: " + path);
  os.write("GAFT", 4);
  detail::write_le<std::uint32_t>(os, kContainerVersion);
  for (const auto& [name, t] : tensors) {
    GA_CHECK(t.defined(), ValueError, "undefined tensor in container: " + name);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_le<std::uint8_t>(os, 0);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  GA_CHECK(os.good(), IoError, "short write: " + path);
}

namespace detail {

inline void read_header(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  GA_CHECK(is.good() && std::memcmp(magic, "GAFT", 4) == 0, IoError,
           "not a tensor container (bad magic): " + path);
  const auto version = read_le<std::uint32_t>(is);
  GA_CHECK(version == kContainerVersion, IoError,
           "unsupported tensor container version " + std::to_string(version) + ": " + path);
}

inline bool read_entry_header(std::istream& is, const std::string& path, std::string& name,
                              Shape& shape) {
  if (is.peek() == std::char_traits<char>::eof()) return false;
  const auto name_len = read_le<std::uint32_t>(is);
  GA_CHECK(name_len < (1u << 20), IoError, "tensor container: implausible name length: " + path);
  name.resize(name_len);
  is.read(name.data(), name_len);
  GA_CHECK(is.good(), IoError, "tensor container: truncated name: " + path);
  const auto dtype = read_le<std::uint8_t>(is);
  GA_CHECK(dtype == 0, IoError, "tensor container: unknown dtype tag: " + path);
  const auto rank = read_le<std::uint32_t>(is);
  GA_CHECK(rank <= 8, IoError, "tensor container: implausible rank: " + path);
  shape.clear();
  for (std::uint32_t i = 0; i < rank; ++i)
    shape.push_back(static_cast<std::int64_t>(read_le<std::uint64_t>(is)));
  return true;
}

}  // namespace detail

inline std::map<std::string, Tensorf> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GA_CHECK(is.good(), IoError, "cannot open: " + path);
  detail::read_header(is, path);
  std::map<std::string, Tensorf> out;
  std::string name;
  Shape shape;
  while (detail::read_entry_header(is, path, name, shape)) {
    const std::int64_t n = shape_numel(shape);
    std::vector<float> vals(static_cast<std::size_t>(n));
    is.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    GA_CHECK(is.good(), IoError, "tensor container: truncated payload for '" + name + "': " + path);
    out.emplace(name, Tensorf::from(shape, std::move(vals)));
  }
  return out;
}

// Reads names and shapes only, seeking past payloads.
inline std::vector<TensorEntryInfo> inspect_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  GA_CHECK(is.good(), IoError, "cannot open: " + path);
  is.seekg(0, std::ios::end);
  const std::int64_t file_size = static_cast<std::int64_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  detail::read_header(is, path);
  std::vector<TensorEntryInfo> out;
  std::string name;
  Shape shape;
  while (detail::read_entry_header(is, path, name, shape)) {
    out.push_back({name, shape});
    const std::int64_t payload = shape_numel(shape) * static_cast<std::int64_t>(sizeof(float));
    GA_CHECK(static_cast<std::int64_t>(is.tellg()) + payload <= file_size, IoError,
             "tensor container: truncated payload for '" + name + "': " + path);
    is.seekg(payload, std::ios::cur);
    is.peek();
  }
  return out;
}

}  // namespace ga
