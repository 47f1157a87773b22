#pragma once

#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace corpn {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact text form of a double (C99 hexadecimal float).
std::string hexfloat(double v);

/// Fixed decimal with the given number of fractional digits.
std::string fixed(double v, int digits = 6);

/// Parses a decimal or hexadecimal float; throws FormatError on junk.
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

/// Whitespace tokenizer over a text record with a named-field helper.
class TokenReader {
 public:
  explicit TokenReader(std::string_view text);

  bool done() const { return pos_ >= tokens_.size(); }
  std::string next(std::string_view what);
  void expect(std::string_view literal);
  double next_double(std::string_view what) { return parse_double(next(what)); }
  std::size_t next_size(std::string_view what);
  std::vector<double> next_doubles(std::size_t count, std::string_view what);

 private:
  std::vector<std::string> tokens_;
  std::size_t pos_ = 0;
};

void write_doubles(std::ostream& os, std::span<const double> values);

}  // namespace corpn
