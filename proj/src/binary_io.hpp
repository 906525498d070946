#pragma once

// Little-endian fixed-width encoding shared by the dataset and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include "sdtt/common.hpp"

namespace sdtt::io {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.append(s);
  }
  template <typename T>
  void put_array(const T* data, std::size_t n) {
    bytes_.append(reinterpret_cast<const char*>(data), n * sizeof(T));
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() {
    auto n = get<std::uint32_t>();
    return std::string(get_bytes(n));
  }
  template <typename T>
  void get_array(T* out, std::size_t n) {
    need(n * sizeof(T));
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("truncated file");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace sdtt::io
