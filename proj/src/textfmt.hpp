#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace recl::textfmt {

// Shortest text that parses back to the same double; locale independent.
inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline bool parse_number(const std::string& s, double& out) {
  if (s == "nan") { out = NAN; return true; }
  if (s == "inf") { out = INFINITY; return true; }
  if (s == "-inf") { out = -INFINITY; return true; }
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

}  // namespace recl::textfmt
