#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace milo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Invalid user input: bad dimensions, out-of-range parameters, malformed config.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable data file.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed (factorization, divergence).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A nonnegative quantity that may be unbounded. Infinity is an explicit flag,
/// never encoded in `value`.
struct MaybeInfinite {
  double value = 0.0;
  bool infinite = false;

  static MaybeInfinite finite(double v) { return {v, false}; }
  static MaybeInfinite unbounded() { return {0.0, true}; }
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ConfigError(message);
}

}  // namespace milo
