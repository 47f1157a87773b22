#include "corpn/textio.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace corpn {

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s.size() > 1 && s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) {
    s.erase(0, 1);  // no "-0.000000"
  }
  return s;
}

double parse_double(std::string_view token) {
  const std::string s(token);
  if (s.empty()) throw FormatError("expected a number, got empty token");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || (errno == ERANGE && std::abs(v) == HUGE_VAL)) {
    throw FormatError("not a number: '" + s + "'");
  }
  return v;
}

long long parse_int(std::string_view token) {
  const std::string s(token);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw FormatError("not an integer: '" + s + "'");
  }
  return v;
}

TokenReader::TokenReader(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) tokens_.push_back(tok);
}

std::string TokenReader::next(std::string_view what) {
  if (done()) throw FormatError("unexpected end of record while reading " + std::string(what));
  return tokens_[pos_++];
}

void TokenReader::expect(std::string_view literal) {
  const std::string tok = next(literal);
  if (tok != literal) {
    throw FormatError("expected '" + std::string(literal) + "', got '" + tok + "'");
  }
}

std::size_t TokenReader::next_size(std::string_view what) {
  const long long v = parse_int(next(what));
  if (v < 0) throw FormatError(std::string(what) + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<double> TokenReader::next_doubles(std::size_t count, std::string_view what) {
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(next_double(what));
  return out;
}

void write_doubles(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    os << (i == 0 ? "" : " ") << hexfloat(values[i]);
  }
}

}  // namespace corpn
