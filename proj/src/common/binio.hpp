#pragma once

// Little-endian primitives shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "vlcp/error.hpp"

namespace vlcp::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void put_bytes(std::ostream& out, const std::string& s) {
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename Err = CheckpointError>
void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw Err(std::string("truncated input while reading ") + what);
}

template <typename Err = CheckpointError>
std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact<Err>(in, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

template <typename Err = CheckpointError>
std::uint64_t get_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  read_exact<Err>(in, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename Err = CheckpointError>
float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_u32<Err>(in, what));
}

template <typename Err = CheckpointError>
double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_u64<Err>(in, what));
}

}  // namespace vlcp::binio
