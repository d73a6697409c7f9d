#include "deviate/losses.hpp"

#include <algorithm>
#include <cmath>

namespace deviate {

namespace {

void check_pair(const ParamG& g, const ParamG& g_star) {
  for (const ParamG* p : {&g, &g_star}) {
    if (!(p->lambda >= 0.0 && p->lambda <= 1.0)) throw DomainError("loss: lambda outside [0,1]");
  }
  if (g.point.mu.size() != g_star.point.mu.size() || g.point.sigma.rows() != g_star.point.sigma.rows()) {
    throw UsageError("loss: parameter dimensions differ");
  }
}

struct Geometry {
  double a;  // ||(dmu, dSigma)|| of G
  double b;  // same for G*
  double c;  // ||(mu,Sigma) - (mu*,Sigma*)||
};

Geometry geometry(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  check_pair(g, g_star);
  if (g.point.mu.size() != ctx.anchor.mu.size()) throw UsageError("loss: anchor dimension differs");
  return {point_distance(g.point, ctx.anchor), point_distance(g_star.point, ctx.anchor),
          point_distance(g.point, g_star.point)};
}

}  // namespace

double loss_K(const ParamG& g, const ParamG& g_star) {
  check_pair(g, g_star);
  return std::abs(g.lambda - g_star.lambda) + (g.lambda + g_star.lambda) * point_distance(g.point, g_star.point);
}

double loss_D(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  const auto [a, b, c] = geometry(g, g_star, ctx);
  const double l = g.lambda, ls = g_star.lambda, lmin = std::min(l, ls);
  const double value = l * a * a + ls * b * b - lmin * (a * a + b * b) + (l * a + ls * b) * c;
  return std::max(value, 0.0);
}

double loss_Dbar(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  const auto [a, b, c] = geometry(g, g_star, ctx);
  const double l = g.lambda, ls = g_star.lambda;
  return std::abs(ls - l) * a * b + c * (l * a + ls * b);
}

namespace {

struct SplitGeometry {
  double mu4, sig2;            // ||dmu||^4 + ||dSigma||^2 pieces for G
  double mu4_star, sig2_star;  // same for G*
  double mu_sq, sig;           // ||dmu||^2, ||dSigma|| for G
  double mu_sq_star, sig_star;
  double cross_mu, cross_sig;  // ||mu - mu*||, ||Sigma - Sigma*||
};

SplitGeometry split_geometry(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  check_pair(g, g_star);
  SplitGeometry s{};
  const double dmu = (g.point.mu - ctx.anchor.mu).norm();
  const double dsig = (g.point.sigma - ctx.anchor.sigma).norm();
  const double dmu_s = (g_star.point.mu - ctx.anchor.mu).norm();
  const double dsig_s = (g_star.point.sigma - ctx.anchor.sigma).norm();
  s.mu_sq = dmu * dmu;
  s.sig = dsig;
  s.mu_sq_star = dmu_s * dmu_s;
  s.sig_star = dsig_s;
  s.mu4 = s.mu_sq * s.mu_sq;
  s.sig2 = dsig * dsig;
  s.mu4_star = s.mu_sq_star * s.mu_sq_star;
  s.sig2_star = dsig_s * dsig_s;
  s.cross_mu = (g.point.mu - g_star.point.mu).norm();
  s.cross_sig = (g.point.sigma - g_star.point.sigma).norm();
  return s;
}

}  // namespace

double loss_Q(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  const SplitGeometry s = split_geometry(g, g_star, ctx);
  const double l = g.lambda, ls = g_star.lambda, lmin = std::min(l, ls);
  const double own = s.mu4 + s.sig2, own_star = s.mu4_star + s.sig2_star;
  const double value = l * own + ls * own_star - lmin * (own + own_star) +
                       (l * (s.mu_sq + s.sig) + ls * (s.mu_sq_star + s.sig_star)) *
                           (s.cross_mu * s.cross_mu + s.cross_sig);
  return std::max(value, 0.0);
}

double loss_Qprime(const ParamG& g, const ParamG& g_star, const LossContext& ctx) {
  const SplitGeometry s = split_geometry(g, g_star, ctx);
  const double l = g.lambda, ls = g_star.lambda, lmin = std::min(l, ls);
  const double own = s.mu4 + s.sig2, own_star = s.mu4_star + s.sig2_star;
  const double cross = std::pow(s.cross_mu, 4) + s.cross_sig * s.cross_sig;
  return std::max(l * own + lmin * cross + ls * own_star - lmin * (own + own_star), 0.0);
}

double loss_Dr(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r) {
  if (!(r >= 1.0)) throw UsageError("loss_Dr: r must be >= 1");
  const auto [a, b, c] = geometry(g, g_star, ctx);
  const double ar = std::pow(a, r), br = std::pow(b, r), cr = std::pow(c, r);
  const double l = g.lambda, ls = g_star.lambda;
  return std::max(l * ar + ls * br - std::min(l, ls) * (ar + br - cr), 0.0);
}

double wasserstein_two_atom(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r) {
  if (!(r >= 1.0)) throw UsageError("wasserstein_two_atom: r must be >= 1");
  const auto [a, b, c] = geometry(g, g_star, ctx);
  const double ar = std::pow(a, r), br = std::pow(b, r), cr = std::pow(c, r);
  const double l = g.lambda, ls = g_star.lambda;
  if (ar + br >= cr) {
    // Keep min(l, l*) of the moving mass on the direct route.
    return l * ar + ls * br - std::min(l, ls) * (ar + br - cr);
  }
  if (l + ls <= 1.0) {
    // Both moving atoms route through the anchor.
    return l * ar + ls * br;
  }
  // Forced overlap of l + l* - 1 on the direct route.
  return (1.0 - ls) * ar + (1.0 - l) * br + (l + ls - 1.0) * cr;
}

double transport_oracle(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r) {
  if (!(r >= 1.0)) throw UsageError("transport_oracle: r must be >= 1");
  check_pair(g, g_star);
  // Atoms: G = {anchor: 1-l, P: l}, G* = {anchor: 1-l*, P*: l*}.
  const double l = g.lambda, ls = g_star.lambda;
  const Matrix cost{{0.0, std::pow(point_distance(ctx.anchor, g_star.point), r)},
                    {std::pow(point_distance(g.point, ctx.anchor), r), std::pow(point_distance(g.point, g_star.point), r)}};
  // Couplings are parameterized by s = pi(anchor, anchor); feasibility is
  // max(0, 1-l-l*) <= s <= min(1-l, 1-l*). The cost is linear in s.
  const double s_lo = std::max(0.0, 1.0 - l - ls);
  const double s_hi = std::min(1.0 - l, 1.0 - ls);
  auto plan_cost = [&](double s) {
    const Matrix plan{{s, 1.0 - l - s}, {1.0 - ls - s, l + ls - 1.0 + s}};
    return plan.cwiseProduct(cost).sum();
  };
  return std::max(std::min(plan_cost(s_lo), plan_cost(s_hi)), 0.0);
}

}  // namespace deviate
