#pragma once

// Little-endian binary encoding shared by the corpus, checkpoint and
// similarity-matrix file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ordl/common.hpp"

namespace ordl::binio {

class Writer {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    auto u = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>(u & 0xff));
      if constexpr (sizeof(T) > 1) u = static_cast<U>(u >> 8);
    }
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      buf_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    } else {
      for (const T& v : values) put(v);
    }
  }

  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::string& buffer() const { return buf_; }

  void save(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  static Reader from_file(const std::filesystem::path& path);

  void expect_magic(std::string_view magic);

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    need(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u = static_cast<U>(u | (static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i)));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(u);
  }

  template <typename T>
  std::vector<T> get_array(std::size_t count) {
    if (count > (data_.size() - pos_) / sizeof(T)) fail("array extends past end of file");
    std::vector<T> out(count);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, count * sizeof(T));
      pos_ += count * sizeof(T);
    } else {
      for (auto& v : out) v = get<T>();
    }
    return out;
  }

  std::string get_string();

  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(std::string_view why) const;

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("unexpected end of file");
  }

  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace ordl::binio
