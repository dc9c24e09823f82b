// SPDX-License-Identifier: Apache-2.0
//
// Strict text <-> value conversions shared by the config readers.

#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "meg/errors.hpp"

namespace meg::text {

/// Round-trip exact.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != value.size()) throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  return v;
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != value.size()) throw ConfigError("'" + key + "' expects an integer, got '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

}  // namespace meg::text
