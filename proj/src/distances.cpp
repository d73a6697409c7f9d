#include "deviate/distances.hpp"

#include "deviate/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace deviate {

void QuadratureSpec::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol >= 0.0)) throw UsageError("quadrature: tolerances must be positive");
  if (mc_samples < 1000) throw UsageError("quadrature: mc_samples must be >= 1000");
}

std::vector<double> breakpoints_1d(const DeviatedModel& m, const ParamG& g1, const ParamG& g2) {
  std::vector<double> pts;
  auto add = [&pts](const KernelFamily& fam, const ParamPoint& p) {
    const double c = p.mu(0);
    const double s = std::sqrt(fam.effective_sigma(p)(0, 0));
    for (double k : {-12.0, -3.0, 0.0, 3.0, 12.0}) pts.push_back(c + k * s);
  };
  add(m.h0_family, m.h0_point);
  add(m.f, g1.point);
  add(m.f, g2.point);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

namespace {

enum class Integrand { tv, hellinger_sq };

QuadratureMethod resolve(const DeviatedModel& m, QuadratureMethod method) {
  if (method == QuadratureMethod::automatic) {
    return m.dim() == 1 ? QuadratureMethod::adaptive_1d : QuadratureMethod::monte_carlo;
  }
  if (method == QuadratureMethod::adaptive_1d && m.dim() != 1) {
    throw UsageError("quadrature: adaptive_1d requires dimension 1");
  }
  return method;
}

double pointwise(Integrand kind, double p, double q) {
  if (kind == Integrand::tv) return 0.5 * std::abs(p - q);
  const double diff = std::sqrt(p) - std::sqrt(q);
  return 0.5 * diff * diff;
}

DistanceEstimate integrate_1d(Integrand kind, const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                              const QuadratureSpec& spec) {
  const PreparedModel p1(m, g1), p2(m, g2);
  Vector x(1);
  auto f = [&](double t) {
    x(0) = t;
    return pointwise(kind, p1.pdf(x), p2.pdf(x));
  };
  const quad::Result r = quad::integrate_real_line(f, breakpoints_1d(m, g1, g2), spec.abs_tol, spec.rel_tol);
  if (!r.converged || !std::isfinite(r.value)) {
    std::ostringstream msg;
    msg << "quadrature did not converge: value=" << r.value << " error=" << r.abs_error
        << " abs_tol=" << spec.abs_tol << " evaluations=" << r.evaluations;
    throw NumericError(msg.str());
  }
  return {r.value, 0.0, r.abs_error, r.evaluations};
}

Vector log_density_rows(const PreparedModel& pm, const Matrix& x) {
  Vector out;
  mixture_log_density(pm.lambda(), pm.h0().log_pdf_rows(x), pm.f().log_pdf_rows(x), out);
  return out;
}

DistanceEstimate integrate_mc(Integrand kind, const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                              const QuadratureSpec& spec, RngStream* rng) {
  if (rng == nullptr) throw UsageError("quadrature: monte_carlo mode needs an rng");
  const PreparedModel p1(m, g1), p2(m, g2);
  const Eigen::Index half = spec.mc_samples / 2;
  // E_r[w] with r = (p+q)/2 equals (E_p[w] + E_q[w]) / 2; each half is
  // drawn from one density.
  double estimate = 0.0, variance = 0.0;
  for (const ParamG* g : {&g1, &g2}) {
    const Matrix x = sample_model(m, *g, half, *rng).data;
    const Vector lp = log_density_rows(p1, x);
    const Vector lq = log_density_rows(p2, x);
    Vector w(half);
    for (Eigen::Index i = 0; i < half; ++i) {
      const double p = std::exp(lp(i)), q = std::exp(lq(i));
      const double r = 0.5 * (p + q);
      w(i) = pointwise(kind, p, q) / r;
    }
    const double mean = w.mean();
    const double var = (w.array() - mean).square().sum() / static_cast<double>(half - 1);
    estimate += 0.5 * mean;
    variance += 0.25 * var / static_cast<double>(half);
  }
  return {estimate, std::sqrt(variance), 0.0, 2 * half};
}

DistanceEstimate integrate(Integrand kind, const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                           const QuadratureSpec& spec, RngStream* rng) {
  spec.validate();
  m.check(g1);
  m.check(g2);
  switch (resolve(m, spec.method)) {
    case QuadratureMethod::adaptive_1d:
      return integrate_1d(kind, m, g1, g2, spec);
    default:
      return integrate_mc(kind, m, g1, g2, spec, rng);
  }
}

}  // namespace

DistanceEstimate total_variation(const DeviatedModel& m, const ParamG& g1, const ParamG& g2,
                                 const QuadratureSpec& spec, RngStream* rng) {
  DistanceEstimate e = integrate(Integrand::tv, m, g1, g2, spec, rng);
  e.value = std::clamp(e.value, 0.0, 1.0);
  return e;
}

DistanceEstimate hellinger(const DeviatedModel& m, const ParamG& g1, const ParamG& g2, const QuadratureSpec& spec,
                           RngStream* rng) {
  DistanceEstimate e = integrate(Integrand::hellinger_sq, m, g1, g2, spec, rng);
  const double h2 = std::clamp(e.value, 0.0, 1.0);
  const double h = std::sqrt(h2);
  // Delta method on the square root; the bound is loose near zero.
  e.std_error = h > 0.0 ? e.std_error / (2.0 * h) : std::sqrt(e.std_error);
  e.abs_error = h > 0.0 ? std::min(e.abs_error / (2.0 * h), std::sqrt(e.abs_error)) : std::sqrt(e.abs_error);
  e.value = h;
  return e;
}

}  // namespace deviate
