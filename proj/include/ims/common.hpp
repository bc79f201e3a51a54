#ifndef IMS_COMMON_HPP
#define IMS_COMMON_HPP

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace ims {

// Bad flags, unknown config keys, violated preconditions on user input.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unreadable, unparsable or semantically inconsistent data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses, degenerate spectra, and similar numerical failures.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a batch carries no usable spread (identical rows, empty spectrum).
class DegenerateInput : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// SplitMix64 finalizer; used to derive independent per-task seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0xD6E8FEB86659FD93ULL));
}

// 17 significant digits; parses back to the identical double.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Fixed-width form for human-facing reports.
inline std::string format_report(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace ims

#endif  // IMS_COMMON_HPP
