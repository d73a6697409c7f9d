#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace deviate {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Smallest linear density value carried through the code; log-space values
/// are clamped at its logarithm.
inline constexpr double kDensityFloor = 1e-300;
inline constexpr double kLogDensityFloor = -690.7755278982137;  // log(1e-300)

// Error taxonomy. Every error carries a short machine code used by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage_error", what) {}
};
struct EstimationError : Error {
  explicit EstimationError(const std::string& what) : Error("estimation_error", what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error("numeric_error", what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

/// splitmix64 finalizer, used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// A seeded random stream. Children derived with split() depend only on the
/// parent seed and the child key, never on how many draws the parent made.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 42) : seed_(seed), engine_(mix_seed(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  RngStream split(std::uint64_t key) const { return RngStream(mix_seed(seed_ ^ mix_seed(key + 1))); }

  std::mt19937_64& engine() noexcept { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

}  // namespace deviate
