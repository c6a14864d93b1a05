#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dr {

/// Shape or rank violation in a tensor operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced where the contract requires finite output.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (bad magic, count mismatch, ...).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing/truncated file or failed read/write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated API precondition (non-scalar grad output, empty dataset, ...).
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// FNV-1a over a byte string; used for config hashes embedded in artifacts.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v, int digits = 16) {
  static const char* k = "0123456789abcdef";
  std::string s(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = k[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace dr
