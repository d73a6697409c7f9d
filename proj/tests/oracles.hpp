#pragma once

// Independent reference computations shared by the unit and acceptance suites.

#include "deviate/losses.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <utility>

namespace testing_support {

using deviate::Matrix;
using deviate::ParamG;
using deviate::ParamPoint;
using deviate::RngStream;
using deviate::Vector;
using deviate::point_distance;

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
inline Matrix random_spd(Eigen::Index d, RngStream& rng, double lo = 0.3, double hi = 3.0) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  const Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix q = qr.householderQ();
  Vector ev(d);
  for (Eigen::Index i = 0; i < d; ++i) ev(i) = rng.uniform(lo, hi);
  Matrix s = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

inline ParamPoint random_point(Eigen::Index d, RngStream& rng) {
  Vector mu(d);
  for (Eigen::Index i = 0; i < d; ++i) mu(i) = rng.uniform(-2.0, 2.0);
  return {mu, random_spd(d, rng)};
}

/// Random pair in a compact domain; a share of pairs has tied lambdas or
/// tied points so the boundary cases are exercised.
inline std::pair<ParamG, ParamG> random_pair(Eigen::Index d, RngStream& rng) {
  auto draw = [&] { return ParamG(rng.uniform(0.01, 1.0), random_point(d, rng)); };
  ParamG a = draw(), b = draw();
  const double u = rng.uniform();
  if (u < 0.1) b.lambda = a.lambda;
  else if (u < 0.2) b.point = a.point;
  return {a, b};
}

/// W_r^r between (1-l) d_A + l d_P and (1-l*) d_A + l* d_Q. Couplings form a
/// one-parameter family indexed by the mass t kept on (A, A); the cost is
/// linear in t, so it is minimized at an end of the feasible interval.
inline double oracle_w(const ParamG& g, const ParamG& gs, const ParamPoint& anchor, double r) {
  const double a = std::pow(point_distance(g.point, anchor), r);
  const double b = std::pow(point_distance(gs.point, anchor), r);
  const double c = std::pow(point_distance(g.point, gs.point), r);
  const double l = g.lambda, ls = gs.lambda;
  const double t_lo = std::max(0.0, 1.0 - l - ls), t_hi = std::min(1.0 - l, 1.0 - ls);
  auto cost = [&](double t) {
    const double aq = (1.0 - l) - t;   // A -> Q
    const double pa = (1.0 - ls) - t;  // P -> A
    const double pq = l - pa;          // P -> Q
    return aq * b + pa * a + pq * c;
  };
  return std::min(cost(t_lo), cost(t_hi));
}

}  // namespace testing_support
