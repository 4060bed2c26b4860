#pragma once

#include <charconv>
#include <cstdint>
#include <string>

#include "apss/errors.hpp"

namespace apss::detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint64_t parse_size(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + value + "'");
}

}  // namespace apss::detail
