#pragma once

#include "deviate/model.hpp"

#include <vector>

namespace deviate {

enum class QuadratureMethod {
  automatic,    // adaptive_1d when d == 1, monte_carlo otherwise
  adaptive_1d,
  monte_carlo,
};

struct QuadratureSpec {
  QuadratureMethod method = QuadratureMethod::automatic;
  double abs_tol = 1e-8;
  double rel_tol = 1e-10;
  Eigen::Index mc_samples = 200000;

  void validate() const;
};

/// A distance value with its error bar. For quadrature std_error is zero and
/// abs_error is the integrator's bound; for Monte Carlo std_error is the
/// estimated standard error of the value.
struct DistanceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double abs_error = 0.0;
  long evaluations = 0;
};

/// V(p, q) = 1/2 int |p - q|.
/// Monte Carlo mode needs rng; the proposal is the equal-weight mixture
/// (p + q)/2, sampled half from each density.
DistanceEstimate total_variation(const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                                 const QuadratureSpec& spec = {}, RngStream* rng = nullptr);

/// h(p, q) with h^2 = 1/2 int (sqrt p - sqrt q)^2.
DistanceEstimate hellinger(const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                           const QuadratureSpec& spec = {}, RngStream* rng = nullptr);

/// Integration breakpoints for d = 1: centre and centre +- 12 scales of h0
/// and of both f components, sorted and without duplicates.
std::vector<double> breakpoints_1d(const DeviatedModel& m, const ParamG& g1, const ParamG& g2);

}  // namespace deviate
