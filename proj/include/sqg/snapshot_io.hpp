#pragma once

// Binary snapshot files, little-endian:
//   "SQGF" | u32 version | u32 N | f64 L | f64 alpha | f64 kappa | f64 t | N*N f64 (row-major)

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "sqg/errors.hpp"
#include "sqg/fields.hpp"

namespace sqg {

inline constexpr std::array<char, 4> kSnapshotMagic{'S', 'Q', 'G', 'F'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

struct SnapshotHeader {
  std::uint32_t version = kSnapshotVersion;
  std::uint32_t N = 0;
  double L = 0.0;
  double alpha = 0.0;
  double kappa = 0.0;
  double t = 0.0;
};

struct Snapshot {
  SnapshotHeader header;
  ScalarField theta;
};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  buf.insert(buf.end(), bytes.begin(), bytes.end());
}

template <class T>
T get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 4 * 8;

}  // namespace detail

inline std::vector<unsigned char> encode_snapshot(const ScalarField& theta, double alpha, double kappa,
                                                  double t) {
  std::vector<unsigned char> buf;
  buf.reserve(detail::kHeaderBytes + theta.values.size() * 8);
  buf.insert(buf.end(), kSnapshotMagic.begin(), kSnapshotMagic.end());
  detail::put_le<std::uint32_t>(buf, kSnapshotVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(theta.grid.N));
  detail::put_le<double>(buf, theta.grid.L);
  detail::put_le<double>(buf, alpha);
  detail::put_le<double>(buf, kappa);
  detail::put_le<double>(buf, t);
  for (double v : theta.values) {
    detail::put_le<double>(buf, v);
  }
  return buf;
}

inline Snapshot decode_snapshot(const std::vector<unsigned char>& buf, const std::string& origin) {
  if (buf.size() < detail::kHeaderBytes || std::memcmp(buf.data(), kSnapshotMagic.data(), 4) != 0) {
    throw DataError("not a snapshot file (bad magic): " + origin);
  }
  Snapshot s;
  const unsigned char* p = buf.data() + 4;
  s.header.version = detail::get_le<std::uint32_t>(p);
  s.header.N = detail::get_le<std::uint32_t>(p + 4);
  s.header.L = detail::get_le<double>(p + 8);
  s.header.alpha = detail::get_le<double>(p + 16);
  s.header.kappa = detail::get_le<double>(p + 24);
  s.header.t = detail::get_le<double>(p + 32);
  if (s.header.version != kSnapshotVersion) {
    throw DataError("unsupported snapshot version " + std::to_string(s.header.version) + ": " + origin);
  }
  const std::size_t n = s.header.N;
  if (buf.size() != detail::kHeaderBytes + n * n * 8) {
    throw DataError("truncated snapshot file: " + origin);
  }
  Grid g;
  try {
    g = Grid::make(static_cast<int>(n), s.header.L);
  } catch (const ParameterError& e) {
    throw DataError(std::string("bad snapshot grid in ") + origin + ": " + e.what());
  }
  s.theta = ScalarField(g);
  const unsigned char* v = buf.data() + detail::kHeaderBytes;
  for (std::size_t k = 0; k < n * n; ++k) {
    s.theta.values[k] = detail::get_le<double>(v + 8 * k);
  }
  return s;
}

inline void write_snapshot(const std::filesystem::path& path, const ScalarField& theta, double alpha,
                           double kappa, double t) {
  const auto buf = encode_snapshot(theta, alpha, kappa, t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot open snapshot for writing: " + path.string());
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw DataError("failed writing snapshot: " + path.string());
  }
}

inline Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("missing snapshot file: " + path.string());
  }
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_snapshot(buf, path.string());
}

}  // namespace sqg
