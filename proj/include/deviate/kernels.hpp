#pragma once

#include "deviate/core.hpp"

#include <string>

namespace deviate {

/// Location/scale parameter (mu, Sigma) of a kernel family.
struct ParamPoint {
  Vector mu;
  Matrix sigma;

  ParamPoint() = default;
  ParamPoint(Vector m, Matrix s) : mu(std::move(m)), sigma(std::move(s)) {}

  static ParamPoint scalar(double mu, double variance) {
    return {Vector::Constant(1, mu), Matrix::Constant(1, 1, variance)};
  }
  static ParamPoint standard(Eigen::Index d) { return {Vector::Zero(d), Matrix::Identity(d, d)}; }

  Eigen::Index dim() const { return mu.size(); }
};

/// Throws DomainError unless sigma is symmetric (1e-12) with smallest
/// eigenvalue >= eig_floor, or UsageError on shape mismatch.
void validate(const ParamPoint& p, double eig_floor = 1e-8);

/// Symmetrizes sigma and raises its eigenvalues into [eig_lo, eig_hi].
Matrix clamp_eigenvalues(const Matrix& sigma, double eig_lo, double eig_hi);

/// Compact parameter set Theta x Omega: a box for mu, eigenvalue bounds for Sigma.
struct CompactDomain {
  Vector lo;
  Vector hi;
  double eig_lo = 1e-8;
  double eig_hi = 1e8;

  static CompactDomain box(Eigen::Index d, double mu_lo, double mu_hi, double eig_lo, double eig_hi);

  void validate() const;
  bool contains(const ParamPoint& p, double slack = 1e-12) const;
  /// Nearest point of the domain: mu clamped to the box, Sigma eigenvalues clamped.
  ParamPoint project(const ParamPoint& p) const;
};

enum class FamilyTag {
  gaussian_location_scale,
  gaussian_location_fixed_sigma,
  student_t_fixed_dof,
  cauchy_standard,
};

std::string to_string(FamilyTag tag);
FamilyTag family_tag_from_string(const std::string& name);

/// A parametric density family f(.|mu, Sigma) in dimension d.
///
/// The location family ignores the Sigma of its ParamPoint and always uses
/// its fixed Sigma. cauchy_standard is the multivariate Student-t with one
/// degree of freedom; it is standard at ParamPoint::standard(d).
class KernelFamily {
 public:
  static KernelFamily gaussian(Eigen::Index d);
  static KernelFamily gaussian_location(Matrix fixed_sigma);
  static KernelFamily student_t(Eigen::Index d, double dof);
  static KernelFamily cauchy(Eigen::Index d);

  FamilyTag tag() const noexcept { return tag_; }
  Eigen::Index dim() const noexcept { return dim_; }
  double dof() const noexcept { return dof_; }
  const Matrix& fixed_sigma() const noexcept { return fixed_sigma_; }
  bool is_gaussian() const noexcept {
    return tag_ == FamilyTag::gaussian_location_scale || tag_ == FamilyTag::gaussian_location_fixed_sigma;
  }
  /// False for the location family: Sigma is a hyperparameter there.
  bool has_scale_parameter() const noexcept { return tag_ != FamilyTag::gaussian_location_fixed_sigma; }

  double eig_floor() const noexcept { return eig_floor_; }
  void set_eig_floor(double floor);

  /// The Sigma actually used when evaluating at p.
  const Matrix& effective_sigma(const ParamPoint& p) const {
    return has_scale_parameter() ? p.sigma : fixed_sigma_;
  }
  /// p with Sigma replaced by the effective one.
  ParamPoint effective(const ParamPoint& p) const { return {p.mu, effective_sigma(p)}; }

  std::string describe() const;

 private:
  KernelFamily(FamilyTag tag, Eigen::Index d) : tag_(tag), dim_(d) {}

  FamilyTag tag_;
  Eigen::Index dim_;
  double dof_ = 0.0;  // Student-t only
  Matrix fixed_sigma_;
  double eig_floor_ = 1e-8;
};

/// Derivatives of a density with respect to (mu, Sigma).
///
/// d_sigma uses the symmetric-matrix convention: for any symmetric direction
/// E, d/dt f(Sigma + tE) = trace(d_sigma * E). With it the Gaussian family
/// satisfies d2f/dmu dmu^T = 2 df/dSigma exactly.
struct ParamGradient {
  Vector d_mu;
  Matrix d_sigma;
};

/// A kernel evaluated at a fixed, validated ParamPoint. Factorizes Sigma once.
class PreparedKernel {
 public:
  PreparedKernel(const KernelFamily& family, const ParamPoint& p);

  double log_pdf(const Eigen::Ref<const Vector>& x) const;
  double pdf(const Eigen::Ref<const Vector>& x) const;
  /// log density of every row of data (n x d).
  Vector log_pdf_rows(const Matrix& data) const;

  ParamGradient grad(const Eigen::Ref<const Vector>& x) const;
  ParamGradient grad_log(const Eigen::Ref<const Vector>& x) const;
  Matrix hessian_mu(const Eigen::Ref<const Vector>& x) const;

  const KernelFamily& family() const noexcept { return family_; }
  const ParamPoint& point() const noexcept { return point_; }

 private:
  /// Returns q = r^T Sigma^-1 r and fills u = Sigma^-1 r.
  double whiten(const Eigen::Ref<const Vector>& x, Vector& u) const;
  /// Multiplier a(q) such that grad_mu log f = a * u.
  double shape_factor(double q) const;

  KernelFamily family_;
  ParamPoint point_;  // effective point
  Eigen::LLT<Matrix> llt_;
  Matrix sigma_inv_;
  double log_norm_ = 0.0;
  // d == 1 fast path
  double mu1_ = 0.0;
  double inv_var1_ = 0.0;
};

double log_pdf(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p);
double pdf(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p);
ParamGradient grad_params(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p);
Matrix hessian_mu(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p);

/// n i.i.d. draws as the rows of an n x d matrix.
Matrix sample(const KernelFamily& family, const ParamPoint& p, Eigen::Index n, RngStream& rng);

/// Chain rule from a Sigma gradient (symmetric convention) to the
/// log-Cholesky coordinates of Sigma = L L^T, where the diagonal of L is
/// stored as its logarithm. Returns a lower-triangular matrix.
Matrix log_cholesky_pushforward(const Matrix& chol_factor, const Matrix& grad_sigma);

/// Inverse of the log-Cholesky map: lower-triangular theta -> L L^T.
Matrix sigma_from_log_cholesky(const Matrix& theta);
Matrix log_cholesky_from_sigma(const Matrix& sigma);

}  // namespace deviate
