#pragma once

#include <charconv>
#include <string>

namespace nftl {

// Shortest round-trip decimal form. Keeps CSV output byte-stable across runs.
inline std::string csv_num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string csv_num(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace nftl
