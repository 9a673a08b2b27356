#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "disco/error.hpp"

namespace disco::detail {

static_assert(std::endian::native == std::endian::little,
              "byte codecs assume a little-endian host");

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(&v, sizeof v); }
  void u64(std::uint64_t v) { put(&v, sizeof v); }
  void f64(double v) { put(&v, sizeof v); }
  void u32_be(std::uint32_t v) { u32(__builtin_bswap32(v)); }
  void bytes(std::string_view s) { put(s.data(), s.size()); }
  void f64_array(std::span<const double> v) { put(v.data(), v.size_bytes()); }
  void u64_array(std::span<const std::uint64_t> v) { put(v.data(), v.size_bytes()); }

  std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

 private:
  void put(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, ErrorCode truncated_code)
      : bytes_(bytes), code_(truncated_code) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::uint32_t u32_be() { return __builtin_bswap32(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void f64_array(std::span<double> out) { copy_out(out.data(), out.size_bytes()); }
  void u64_array(std::span<std::uint64_t> out) { copy_out(out.data(), out.size_bytes()); }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  template <typename T>
  T get() {
    T v;
    copy_out(&v, sizeof v);
    return v;
  }
  void copy_out(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(code_, "unexpected end of input");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  ErrorCode code_;
};

}  // namespace disco::detail
