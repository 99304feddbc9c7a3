#pragma once

#include <charconv>
#include <string>

namespace ticketlab::detail {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

}  // namespace ticketlab::detail
