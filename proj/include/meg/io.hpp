// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>

#include "meg/autodiff.hpp"
#include "meg/errors.hpp"

namespace meg::io {

std::string sha256_hex(std::string_view bytes);
std::string sha256_raw(std::string_view bytes);  // 32 bytes
std::string file_sha256(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian binary encoder.
class ByteWriter {
 public:
  void put_u32(std::uint32_t v) { put_raw(&v, sizeof v); }
  void put_u64(std::uint64_t v) { put_raw(&v, sizeof v); }
  void put_i64(std::int64_t v) { put_raw(&v, sizeof v); }
  void put_f64(double v) { put_raw(&v, sizeof v); }
  void put_string(std::string_view s) {
    put_u64(s.size());
    buffer_.append(s.data(), s.size());
  }
  template <typename S>
  void put_matrix(const Mat<S>& m) {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    put_u32(std::is_same_v<S, float> ? 1u : 2u);
    put_u64(static_cast<std::uint64_t>(m.rows()));
    put_u64(static_cast<std::uint64_t>(m.cols()));
    put_raw(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()));
  }
  void put_raw(const void* data, std::size_t n) { buffer_.append(static_cast<const char*>(data), n); }

  const std::string& bytes() const { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t get_u32() { return get_pod<std::uint32_t>(); }
  std::uint64_t get_u64() { return get_pod<std::uint64_t>(); }
  std::int64_t get_i64() { return get_pod<std::int64_t>(); }
  double get_f64() { return get_pod<double>(); }
  std::string get_string() {
    const std::uint64_t n = get_u64();
    require(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  template <typename S>
  Mat<S> get_matrix() {
    const std::uint32_t tag = get_u32();
    if (tag != (std::is_same_v<S, float> ? 1u : 2u)) throw IntegrityError("matrix element type mismatch");
    const std::uint64_t rows = get_u64(), cols = get_u64();
    if (cols != 0 && rows > (data_.size() / sizeof(S)) / cols) throw IntegrityError("matrix size exceeds payload");
    const std::uint64_t bytes = rows * cols * sizeof(S);
    require(bytes);
    Mat<S> m(static_cast<Index>(rows), static_cast<Index>(cols));
    std::memcpy(m.data(), data_.data() + pos_, bytes);
    pos_ += bytes;
    return m;
  }
  void get_raw(void* out, std::size_t n) {
    require(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename T>
  T get_pod() {
    T v;
    get_raw(&v, sizeof v);
    return v;
  }
  void require(std::uint64_t n) const {
    if (n > data_.size() - pos_) throw IntegrityError("unexpected end of data (truncated file?)");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Self-checking container: 8-byte magic, version, payload size, payload,
/// SHA-256 of the payload.
std::string seal(std::string_view magic, std::uint32_t version, std::string_view payload);
/// Verifies magic, version and checksum; returns the payload.
std::string unseal(std::string_view magic, std::uint32_t version, std::string_view bytes, const std::string& what);

inline constexpr std::string_view kArrayMagic = "MEGARRAY";
inline constexpr std::uint32_t kArrayVersion = 1;

void write_array(const std::filesystem::path& path, const Mat<float>& values);
Mat<float> read_array(const std::filesystem::path& path);

}  // namespace meg::io
