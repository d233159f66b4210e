#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace segfool {

/// Caller broke a documented precondition (shape mismatch, bad geometry, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A file on disk does not match its declared format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad run configuration (unknown key, out-of-range value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure mid-computation (non-finite loss, divergence).
class ComputeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SEGFOOL_REQUIRE(cond, msg)                      \
  do {                                                  \
    if (!(cond)) throw ::segfool::ContractViolation(msg); \
  } while (0)

/// Dense boolean image mask, row-major.
struct Mask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> on;  // 0 or 1, rows*cols entries

  Mask() = default;
  Mask(int r, int c) : rows(r), cols(c), on(static_cast<std::size_t>(r) * c, 0) {}

  std::uint8_t& at(int r, int c) { return on[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t at(int r, int c) const { return on[static_cast<std::size_t>(r) * cols + c]; }

  long count() const { return std::accumulate(on.begin(), on.end(), 0L); }
  bool empty_mask() const { return count() == 0; }
  std::size_t size() const { return on.size(); }

  Mask complement() const {
    Mask out(rows, cols);
    for (std::size_t i = 0; i < on.size(); ++i) out.on[i] = on[i] ? 0 : 1;
    return out;
  }

  void unite(const Mask& other) {
    for (std::size_t i = 0; i < on.size(); ++i) on[i] = (on[i] || other.on[i]) ? 1 : 0;
  }

  bool operator==(const Mask& o) const {
    return rows == o.rows && cols == o.cols && on == o.on;
  }
};

inline long mask_intersection(const Mask& a, const Mask& b) {
  long n = 0;
  for (std::size_t i = 0; i < a.on.size(); ++i) n += (a.on[i] && b.on[i]) ? 1 : 0;
  return n;
}

inline long mask_union_count(const Mask& a, const Mask& b) {
  long n = 0;
  for (std::size_t i = 0; i < a.on.size(); ++i) n += (a.on[i] || b.on[i]) ? 1 : 0;
  return n;
}

}  // namespace segfool
