#include "deviate/kernels.hpp"

#include "support.hpp"

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <limits>

using namespace deviate;
using namespace testing_support;

namespace {

const double kPi = boost::math::constants::pi<double>();

std::vector<KernelFamily> all_families() {
  return {KernelFamily::gaussian(1),
          KernelFamily::gaussian(2),
          KernelFamily::gaussian(3),
          KernelFamily::gaussian_location(Matrix{{1.5, 0.3}, {0.3, 0.8}}),
          KernelFamily::student_t(1, 3.0),
          KernelFamily::student_t(2, 5.0),
          KernelFamily::cauchy(1),
          KernelFamily::cauchy(2)};
}

double rel_err(double analytic, double numeric) { return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-12); }

Vector random_x_near(const ParamPoint& p, RngStream& rng) {
  Vector x(p.dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = p.mu(i) + rng.uniform(-2.5, 2.5);
  return x;
}

}  // namespace

TEST_CASE("pdf at the mode of standard densities") {
  CHECK(pdf(KernelFamily::gaussian(1), Vector::Zero(1), ParamPoint::standard(1)) ==
        doctest::Approx(0.3989422804).epsilon(1e-10));
  CHECK(pdf(KernelFamily::cauchy(1), Vector::Zero(1), ParamPoint::standard(1)) ==
        doctest::Approx(0.3183098862).epsilon(1e-10));
}

TEST_CASE("bivariate Gaussian with identity covariance factorizes") {
  const double one = std::exp(-0.5) / std::sqrt(2 * kPi);
  const Vector x = Vector::Ones(2);
  CHECK(pdf(KernelFamily::gaussian(2), x, ParamPoint::standard(2)) == doctest::Approx(one * one).epsilon(1e-13));
}

TEST_CASE("input validation") {
  const KernelFamily g = KernelFamily::gaussian(1);
  CHECK_THROWS_AS(pdf(g, Vector::Zero(1), ParamPoint::scalar(0.0, -1.0)), DomainError);
  CHECK_THROWS_AS(pdf(g, Vector::Zero(2), ParamPoint::standard(1)), UsageError);
  CHECK_THROWS_AS(pdf(KernelFamily::gaussian(2), Vector::Zero(2), ParamPoint(Vector::Zero(2), Matrix{{1, 0.5}, {0, 1}})),
                  DomainError);
  CHECK_THROWS_AS(KernelFamily::student_t(1, 1.0), UsageError);
}

TEST_CASE("univariate densities integrate to one") {
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();
  const ParamPoint p = ParamPoint::scalar(0.7, 2.3);

  const KernelFamily gauss = KernelFamily::gaussian(1);
  const double g_mass = gauss_kronrod<double, 61>::integrate(
      [&](double x) { return pdf(gauss, Vector::Constant(1, x), p); }, -50.0, 50.0, 15, 1e-13);
  CHECK(std::abs(g_mass - 1.0) < 1e-6);

  // Heavy tails: integrate in theta with x = mu + s tan(theta).
  for (const KernelFamily& fam : {KernelFamily::cauchy(1), KernelFamily::student_t(1, 3.0)}) {
    const double s = std::sqrt(p.sigma(0, 0));
    const double mass = gauss_kronrod<double, 61>::integrate(
        [&](double th) {
          const double c = std::cos(th);
          return pdf(fam, Vector::Constant(1, p.mu(0) + s * std::tan(th)), p) * s / (c * c);
        },
        -kPi / 2, kPi / 2, 15, 1e-13);
    CHECK(std::abs(mass - 1.0) < 1e-6);
  }

  const double via_inf = gauss_kronrod<double, 61>::integrate(
      [&](double x) { return pdf(KernelFamily::cauchy(1), Vector::Constant(1, x), ParamPoint::standard(1)); }, -inf,
      inf, 20, 1e-12);
  CHECK(std::abs(via_inf - 1.0) < 1e-6);
}

TEST_CASE("exp(log_pdf) matches pdf") {
  RngStream rng(11);
  for (const KernelFamily& fam : all_families()) {
    for (int i = 0; i < 100; ++i) {
      const ParamPoint p = random_point(fam.dim(), rng);
      const Vector x = random_x_near(p, rng);
      const double v = pdf(fam, x, p);
      if (v > 1e-300) CHECK(std::abs(std::exp(log_pdf(fam, x, p)) - v) <= 1e-12 * v);
    }
  }
}

TEST_CASE("Gaussian derivative examples") {
  const KernelFamily g = KernelFamily::gaussian(1);
  const ParamPoint std1 = ParamPoint::standard(1);
  CHECK(grad_params(g, Vector::Zero(1), std1).d_mu(0) == doctest::Approx(0.0));
  const double expected = std::exp(-0.5) / std::sqrt(2 * kPi);
  CHECK(grad_params(g, Vector::Ones(1), std1).d_mu(0) == doctest::Approx(expected).epsilon(1e-12));
  const double fd = derivative_5pt(
      [&](double t) { return pdf(g, Vector::Ones(1), ParamPoint::scalar(t, 1.0)); }, 1e-5);
  CHECK(fd == doctest::Approx(expected).epsilon(1e-9));

  const ParamPoint p = ParamPoint::scalar(0.4, 1.7);
  CHECK(hessian_mu(g, Vector::Constant(1, 0.4), p)(0, 0) ==
        doctest::Approx(-pdf(g, Vector::Constant(1, 0.4), p) / 1.7).epsilon(1e-12));
}

TEST_CASE("analytic parameter gradients match finite differences on 200 points per family") {
  RngStream rng(7);
  for (const KernelFamily& fam : all_families()) {
    CAPTURE(fam.describe());
    const Eigen::Index d = fam.dim();
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      ParamPoint p = random_point(d, rng);
      if (!fam.has_scale_parameter()) p.sigma = fam.fixed_sigma();
      const Vector x = random_x_near(p, rng);
      const ParamGradient g = grad_params(fam, x, p);
      const double h = 1e-3;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double fd = derivative_5pt(
            [&](double t) {
              ParamPoint q = p;
              q.mu(k) += t;
              return pdf(fam, x, q);
            },
            h);
        worst = std::max(worst, rel_err(g.d_mu(k), fd));
      }
      if (!fam.has_scale_parameter()) continue;
      for (Eigen::Index u = 0; u < d; ++u) {
        for (Eigen::Index v = u; v < d; ++v) {
          const Matrix e = sym_direction(d, u, v);
          const double fd = derivative_5pt(
              [&](double t) {
                ParamPoint q = p;
                q.sigma += t * e;
                return pdf(fam, x, q);
              },
              h);
          worst = std::max(worst, rel_err((g.d_sigma.cwiseProduct(e)).sum(), fd));
        }
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("location Hessian matches finite differences of the gradient") {
  RngStream rng(8);
  for (const KernelFamily& fam : all_families()) {
    CAPTURE(fam.describe());
    const Eigen::Index d = fam.dim();
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      ParamPoint p = random_point(d, rng);
      if (!fam.has_scale_parameter()) p.sigma = fam.fixed_sigma();
      const Vector x = random_x_near(p, rng);
      const Matrix hm = hessian_mu(fam, x, p);
      CHECK((hm - hm.transpose()).cwiseAbs().maxCoeff() < 1e-15);
      for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = 0; b < d; ++b) {
          const double fd = derivative_5pt(
              [&](double t) {
                ParamPoint q = p;
                q.mu(b) += t;
                return grad_params(fam, x, q).d_mu(a);
              },
              1e-3);
          worst = std::max(worst, rel_err(hm(a, b), fd));
        }
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("Gaussian location-scale densities satisfy the heat equation") {
  RngStream rng(3);
  for (Eigen::Index d : {1, 2, 3}) {
    const KernelFamily g = KernelFamily::gaussian(d);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const ParamPoint p = random_point(d, rng);
      const Vector x = random_x_near(p, rng);
      const Matrix r = hessian_mu(g, x, p) - 2.0 * grad_params(g, x, p).d_sigma;
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("Student-t densities do not satisfy the heat equation") {
  const KernelFamily t = KernelFamily::student_t(1, 3.0);
  const ParamPoint p = ParamPoint::scalar(0.2, 1.3);
  const Vector x = Vector::Constant(1, 1.1);
  const double r = hessian_mu(t, x, p)(0, 0) - 2.0 * grad_params(t, x, p).d_sigma(0, 0);
  CHECK(std::abs(r) > 1e-3);
}

TEST_CASE("sampling") {
  SUBCASE("Gaussian mean") {
    RngStream rng(42);
    const Matrix s = sample(KernelFamily::gaussian(1), ParamPoint::standard(1), 100000, rng);
    CHECK(std::abs(s.mean()) < 4.0 / std::sqrt(1e5));
  }
  SUBCASE("Cauchy median") {
    RngStream rng(42);
    const Matrix s = sample(KernelFamily::cauchy(1), ParamPoint::standard(1), 100000, rng);
    std::vector<double> v(s.data(), s.data() + s.size());
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    CHECK(std::abs(v[v.size() / 2]) < 0.02);
  }
  SUBCASE("multivariate covariance") {
    RngStream rng(5);
    const Matrix sigma{{2.0, 0.6}, {0.6, 1.0}};
    const Matrix s = sample(KernelFamily::gaussian(2), ParamPoint(Vector::Zero(2), sigma), 200000, rng);
    const Matrix c = s.transpose() * s / static_cast<double>(s.rows());
    CHECK((c - sigma).cwiseAbs().maxCoeff() < 0.03);
  }
  SUBCASE("seeded draws repeat exactly") {
    RngStream a(9), b(9);
    const KernelFamily t = KernelFamily::student_t(2, 3.0);
    const ParamPoint p = ParamPoint::standard(2);
    CHECK(sample(t, p, 1000, a) == sample(t, p, 1000, b));
  }
}

TEST_CASE("log-Cholesky map round trips and pushes gradients forward") {
  RngStream rng(21);
  const Matrix sigma = random_spd(3, rng);
  const Matrix theta = log_cholesky_from_sigma(sigma);
  CHECK((sigma_from_log_cholesky(theta) - sigma).cwiseAbs().maxCoeff() < 1e-12);

  // Chain rule oracle: d/dtheta_ij of log f equals the pushed-forward gradient.
  const KernelFamily g = KernelFamily::gaussian(3);
  const Vector mu = Vector::Zero(3);
  const Vector x = Vector::Constant(3, 0.4);
  const Matrix grad = PreparedKernel(g, ParamPoint(mu, sigma)).grad_log(x).d_sigma;
  const Matrix chol = Eigen::LLT<Matrix>(sigma).matrixL();
  const Matrix pushed = log_cholesky_pushforward(chol, grad);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double fd = derivative_5pt(
          [&](double t) {
            Matrix th = theta;
            th(i, j) += t;
            return log_pdf(g, x, ParamPoint(mu, sigma_from_log_cholesky(th)));
          },
          1e-4);
      CHECK(pushed(i, j) == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}
