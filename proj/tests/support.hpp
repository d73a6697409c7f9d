#pragma once

#include "deviate/estimation.hpp"
#include "deviate/kernels.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <vector>

namespace testing_support {

using deviate::Matrix;
using deviate::ParamPoint;
using deviate::RngStream;
using deviate::Vector;

/// Fourth-order central difference of a scalar function of t at 0.
template <typename F>
double derivative_5pt(const F& g, double h) {
  return (-g(2 * h) + 8 * g(h) - 8 * g(-h) + g(-2 * h)) / (12 * h);
}

/// The unit symmetric direction for entry (u, v): e_u e_v^T + e_v e_u^T,
/// halved on the diagonal so the directional derivative is trace(G E).
inline Matrix sym_direction(Eigen::Index d, Eigen::Index u, Eigen::Index v) {
  Matrix e = Matrix::Zero(d, d);
  e(u, v) += 1.0;
  e(v, u) += 1.0;
  if (u == v) e(u, u) = 1.0;
  return e;
}

inline void require_ascent(const deviate::FitResult& fit) {
  for (std::size_t i = 1; i < fit.trace.size(); ++i) {
    if (fit.stop_reason == deviate::StopReason::degenerate && i + 1 == fit.trace.size()) break;
    REQUIRE(fit.trace[i] >= fit.trace[i - 1] - 1e-9);
  }
  REQUIRE(fit.max_descent <= 1e-9);
}

}  // namespace testing_support
