#include "deviate/distances.hpp"

#include "support.hpp"

#include <boost/math/constants/constants.hpp>
#include <boost/math/distributions/normal.hpp>

using namespace deviate;
using namespace testing_support;

namespace {

const double kPi = boost::math::constants::pi<double>();
const CompactDomain kDomain = CompactDomain::box(1, -20.0, 20.0, 0.01, 100.0);

DeviatedModel gauss_gauss(Eigen::Index d = 1) {
  return DeviatedModel(KernelFamily::gaussian(d), ParamPoint::standard(d), KernelFamily::gaussian(d),
                       CompactDomain::box(d, -20.0, 20.0, 0.01, 100.0));
}

double phi(double x) { return boost::math::cdf(boost::math::normal(), x); }

}  // namespace

TEST_CASE("identical mixtures are at distance zero") {
  const DeviatedModel m(KernelFamily::cauchy(1), ParamPoint::standard(1), KernelFamily::gaussian(1), kDomain);
  const ParamG g = ParamG::scalar(0.5, 2.5, 0.25);
  CHECK(total_variation(m, g, g).value <= 1e-8);
  CHECK(hellinger(m, g, g).value <= 1e-8);
}

TEST_CASE("well separated components are at distance one") {
  const DeviatedModel m = gauss_gauss();
  const double v = total_variation(m, ParamG::scalar(0.0, 19.0, 1.0), ParamG::scalar(1.0, 19.0, 1.0)).value;
  CHECK(std::abs(v - 1.0) < 1e-3);
}

TEST_CASE("closed-form Gaussian oracles") {
  const DeviatedModel m = gauss_gauss();
  const ParamG n01 = ParamG::scalar(0.0, 0.0, 1.0);  // h0 = N(0,1)
  const ParamG n11 = ParamG::scalar(1.0, 1.0, 1.0);
  CHECK(std::abs(total_variation(m, n01, n11).value - (2 * phi(0.5) - 1)) < 1e-6);
  const double h = hellinger(m, n01, n11).value;
  CHECK(std::abs(h * h - (1 - std::exp(-1.0 / 8))) < 1e-6);

  // Unequal variances: Bhattacharyya coefficient and the two crossing points.
  const ParamG wide = ParamG::scalar(1.0, 0.5, 4.0);
  const double s1 = 1.0, s2 = 2.0, d = 0.5;
  const double bc = std::sqrt(2 * s1 * s2 / (s1 * s1 + s2 * s2)) * std::exp(-d * d / (4 * (s1 * s1 + s2 * s2)));
  const double hw = hellinger(m, n01, wide).value;
  CHECK(std::abs(hw * hw - (1 - bc)) < 1e-6);
  // Crossings of N(0,1) and N(0.5,4): roots of a quadratic.
  const double qa = 1 / (s2 * s2) - 1, qb = -2 * d / (s2 * s2), qc = d * d / (s2 * s2) + 2 * std::log(s2 / s1);
  const double disc = std::sqrt(qb * qb - 4 * qa * qc);
  double x1 = (-qb - disc) / (2 * qa), x2 = (-qb + disc) / (2 * qa);
  if (x1 > x2) std::swap(x1, x2);
  const double p_mass = phi(x2) - phi(x1);  // N(0,1) dominates between the crossings
  const double q_mass = phi((x2 - d) / s2) - phi((x1 - d) / s2);
  CHECK(std::abs(total_variation(m, n01, wide).value - (p_mass - q_mass)) < 1e-6);
}

TEST_CASE("heavy-tailed oracle: Cauchy location shift") {
  const DeviatedModel m(KernelFamily::cauchy(1), ParamPoint::standard(1), KernelFamily::cauchy(1), kDomain);
  for (double shift : {0.3, 3.0, 15.0}) {
    const double v = total_variation(m, ParamG::scalar(0.0, 0.0, 1.0), ParamG::scalar(1.0, shift, 1.0)).value;
    CHECK(std::abs(v - 2 / kPi * std::atan(shift / 2)) < 1e-6);
  }
}

TEST_CASE("symmetry, range and the Le Cam sandwich") {
  const DeviatedModel m(KernelFamily::cauchy(1), ParamPoint::standard(1), KernelFamily::gaussian(1), kDomain);
  RngStream rng(17);
  for (int i = 0; i < 100; ++i) {
    const ParamG a = ParamG::scalar(rng.uniform(), rng.uniform(-5.0, 5.0), rng.uniform(0.05, 4.0));
    const ParamG b = ParamG::scalar(rng.uniform(), rng.uniform(-5.0, 5.0), rng.uniform(0.05, 4.0));
    const double v = total_variation(m, a, b).value;
    const double h = hellinger(m, a, b).value;
    CHECK(std::abs(v - total_variation(m, b, a).value) < 1e-8);
    CHECK(std::abs(h - hellinger(m, b, a).value) < 1e-8);
    CHECK(v >= -1e-8);
    CHECK(v <= 1.0 + 1e-8);
    CHECK(h <= 1.0 + 1e-8);
    CHECK(h * h <= v + 1e-6);
    CHECK(v <= std::sqrt(2.0) * h + 1e-6);
  }
}

TEST_CASE("Monte Carlo in two dimensions") {
  const DeviatedModel m = gauss_gauss(2);
  const ParamG p(0.0, ParamPoint::standard(2));
  const ParamG q(1.0, ParamPoint(Vector{{0.8, 0.6}}, Matrix::Identity(2, 2)));

  SUBCASE("matches the Gaussian shift oracle") {
    RngStream rng(18);
    const DistanceEstimate v = total_variation(m, p, q, QuadratureSpec{}, &rng);
    CHECK(v.std_error > 0.0);
    CHECK(std::abs(v.value - (2 * phi(0.5) - 1)) < 4 * v.std_error);
    RngStream rng2(19);
    const DistanceEstimate h = hellinger(m, p, q, QuadratureSpec{}, &rng2);
    CHECK(std::abs(h.value - std::sqrt(1 - std::exp(-1.0 / 8))) < 4 * h.std_error);
  }
  SUBCASE("doubling the sample size shrinks the standard error by about sqrt(2)") {
    double ratio_sum = 0.0;
    const int trials = 8;
    for (int t = 0; t < trials; ++t) {
      QuadratureSpec small, large;
      small.mc_samples = 20000;
      large.mc_samples = 40000;
      RngStream a(100 + t), b(200 + t);
      ratio_sum += total_variation(m, p, q, small, &a).std_error / total_variation(m, p, q, large, &b).std_error;
    }
    const double mean_ratio = ratio_sum / trials;
    MESSAGE("mean standard-error ratio for doubled samples: " << mean_ratio);
    CHECK(mean_ratio > 1.2);
    CHECK(mean_ratio < 2.8);
  }
  SUBCASE("Monte Carlo needs a random stream") {
    CHECK_THROWS_AS(total_variation(m, p, q), UsageError);
  }
}

TEST_CASE("quadrature settings") {
  const DeviatedModel m = gauss_gauss();
  const ParamG a = ParamG::scalar(0.3, 1.0, 1.0), b = ParamG::scalar(0.6, -1.0, 2.0);
  QuadratureSpec few;
  few.mc_samples = 10;
  CHECK_THROWS_AS(total_variation(m, a, b, few), UsageError);
  QuadratureSpec neg;
  neg.abs_tol = 0.0;
  CHECK_THROWS_AS(total_variation(m, a, b, neg), UsageError);
  QuadratureSpec impossible;
  impossible.abs_tol = 1e-300;
  impossible.rel_tol = 1e-300;
  CHECK_THROWS_AS(total_variation(m, a, b, impossible), NumericError);

  // One-dimensional Monte Carlo agrees with quadrature.
  QuadratureSpec mc;
  mc.method = QuadratureMethod::monte_carlo;
  RngStream rng(20);
  const DistanceEstimate est = total_variation(m, a, b, mc, &rng);
  CHECK(std::abs(est.value - total_variation(m, a, b).value) < 4 * est.std_error);
}

TEST_CASE("breakpoints cover every component") {
  const DeviatedModel m(KernelFamily::cauchy(1), ParamPoint::standard(1), KernelFamily::gaussian(1), kDomain);
  const auto bp = breakpoints_1d(m, ParamG::scalar(0.5, 2.5, 0.25), ParamG::scalar(0.5, -4.0, 1.0));
  CHECK(std::is_sorted(bp.begin(), bp.end()));
  for (double c : {0.0, 2.5, -4.0}) CHECK(std::find(bp.begin(), bp.end(), c) != bp.end());
}
