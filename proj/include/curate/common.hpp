#pragma once

#include <compare>
#include <concepts>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>

namespace curate {

/// Input that violates a documented contract (bad file line, bad request,
/// precondition failure). The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A text file line that could not be parsed.
class ParseError : public ValidationError {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// An engine refused an otherwise well-formed submission (duplicate rating,
/// excluded worker, finalized task). `code` is a stable machine-readable tag.
class Rejected : public ValidationError {
 public:
  Rejected(std::string code, const std::string& what) : ValidationError(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// WordNet noun offset identifier, `n` followed by exactly eight digits.
class SynsetId {
 public:
  SynsetId() = default;
  explicit SynsetId(std::string value) : value_(std::move(value)) {
    if (!is_valid(value_))
      throw ValidationError("invalid synset id '" + value_ + "'");
  }

  static bool is_valid(std::string_view s) {
    if (s.size() != 9 || s[0] != 'n') return false;
    for (std::size_t i = 1; i < 9; ++i)
      if (s[i] < '0' || s[i] > '9') return false;
    return true;
  }

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  friend bool operator==(const SynsetId&, const SynsetId&) = default;
  friend auto operator<=>(const SynsetId&, const SynsetId&) = default;

 private:
  std::string value_;
};

using WorkerId = std::string;
using ImageId = std::string;

/// Exact non-negative fraction with small denominators.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Ratio make(std::int64_t n, std::int64_t d) {
    if (d == 0) throw std::domain_error("zero denominator");
    const auto g = std::gcd(n, d);
    return g == 0 ? Ratio{0, 1} : Ratio{n / g, d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  friend Ratio operator+(const Ratio& a, const Ratio& b) {
    const auto l = std::lcm(a.den, b.den);
    return make(a.num * (l / a.den) + b.num * (l / b.den), l);
  }
  friend bool operator==(const Ratio& a, const Ratio& b) {
    return a.num * b.den == b.num * a.den;
  }
  friend std::strong_ordering operator<=>(const Ratio& a, const Ratio& b) {
    return a.num * b.den <=> b.num * a.den;
  }
};

namespace detail {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// splitmix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

/// Incremental digest over a canonical byte stream. Fields are length-prefixed
/// so adjacent strings cannot alias.
class Digest {
 public:
  Digest& add(std::string_view s) {
    h_ = fnv1a(std::to_string(s.size()), h_);
    h_ = fnv1a(":", h_);
    h_ = fnv1a(s, h_);
    return *this;
  }
  template <std::integral T>
  Digest& add(T v) { return add(std::string_view(std::to_string(v))); }
  Digest& add(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return add(std::string_view(buf));
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const { return hex64(h_); }

 private:
  std::uint64_t h_ = kFnvOffset;
};

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace detail
}  // namespace curate

template <>
struct std::hash<curate::SynsetId> {
  std::size_t operator()(const curate::SynsetId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
