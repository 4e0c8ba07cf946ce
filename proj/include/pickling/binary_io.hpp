#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "pickling/errors.hpp"

// Little-endian primitive encoding used by every checkpoint container.
namespace pickling::binary {

namespace detail {
template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}
}  // namespace detail

template <typename T>
void write(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  value = detail::to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated binary stream");
  return detail::to_little(value);
}

inline void write_string(std::ostream& out, std::string_view text) {
  write<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline std::string read_string(std::istream& in) {
  const auto size = read<std::uint64_t>(in);
  if (size > (1ULL << 32)) throw IoError("implausible string length in binary stream");
  std::string text(size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(size));
  if (!in) throw IoError("truncated binary stream");
  return text;
}

inline void write_magic(std::ostream& out, std::string_view magic, std::uint32_t version) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write<std::uint32_t>(out, version);
}

// Returns the version after checking the magic bytes.
inline std::uint32_t expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw IoError("bad magic: expected " + std::string(magic));
  return read<std::uint32_t>(in);
}

}  // namespace pickling::binary
