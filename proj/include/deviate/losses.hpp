#pragma once

#include "deviate/model.hpp"

namespace deviate {

/// Norm conventions shared by every loss: Euclidean for vectors, Frobenius
/// for matrices, and sqrt(|a|^2 + |B|_F^2) for a concatenated pair (a, B).
struct LossContext {
  ParamPoint anchor;  // (mu0, Sigma0)

  explicit LossContext(ParamPoint a) : anchor(std::move(a)) { validate(anchor); }
  static LossContext for_model(const DeviatedModel& m) { return LossContext(m.anchor()); }
};

template <typename DerivedA, typename DerivedB>
double concat_norm(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return std::sqrt(a.squaredNorm() + b.squaredNorm());
}

/// ||(mu, Sigma) - (mu', Sigma')||
inline double point_distance(const ParamPoint& p, const ParamPoint& q) {
  return concat_norm(p.mu - q.mu, p.sigma - q.sigma);
}

/// K = |lambda - lambda*| + (lambda + lambda*) ||(mu,Sigma) - (mu*,Sigma*)||
double loss_K(const ParamG& g, const ParamG& g_star);

/// D with the bracket read as a sum:
///   lambda a^2 + lambda* b^2 - min(lambda,lambda*)(a^2 + b^2) + (lambda a + lambda* b) c
/// where a = ||(dmu, dSigma)||, b = ||(dmu*, dSigma*)|| relative to the anchor and
/// c = ||(mu,Sigma) - (mu*,Sigma*)||.
double loss_D(const ParamG& g, const ParamG& g_star, const LossContext& ctx);

/// |lambda* - lambda| a b + c (lambda a + lambda* b); within a factor 2 of D.
double loss_Dbar(const ParamG& g, const ParamG& g_star, const LossContext& ctx);

/// Weakly identifiable (location-scale Gaussian) loss, mixing |dmu|^4 with |dSigma|^2.
double loss_Q(const ParamG& g, const ParamG& g_star, const LossContext& ctx);

/// Sum-of-Wasserstein surrogate dominated by Q up to a constant.
double loss_Qprime(const ParamG& g, const ParamG& g_star, const LossContext& ctx);

/// lambda a^r + lambda* b^r - min(lambda,lambda*)(a^r + b^r - c^r), r >= 1.
double loss_Dr(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r);

/// W_r^r between (1-lambda) delta_anchor + lambda delta_(mu,Sigma) and the
/// same construction for G*, by the three-case closed form.
double wasserstein_two_atom(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r);

/// W_r^r by direct minimization over the 2x2 couplings of the two measures.
double transport_oracle(const ParamG& g, const ParamG& g_star, const LossContext& ctx, double r);

}  // namespace deviate
