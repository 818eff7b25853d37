#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>

namespace topo {

/// Shortest decimal text that parses back to the identical double.
inline std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

/// Like format_real but always carries a decimal point or exponent, so that
/// map keys read as reals ("1.0" rather than "1").
inline std::string format_real_key(double value) {
  std::string text = format_real(value);
  if (text.find_first_of(".eEn") == std::string::npos) text += ".0";
  return text;
}

inline std::optional<double> parse_real(std::string_view text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

inline std::optional<long long> parse_integer(std::string_view text) {
  long long value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace topo
