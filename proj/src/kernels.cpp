#include "deviate/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace deviate {

namespace {

void check_dim(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    std::ostringstream os;
    os << what << ": dimension mismatch (expected " << expected << ", got " << got << ")";
    throw UsageError(os.str());
  }
}

}  // namespace

void validate(const ParamPoint& p, double eig_floor) {
  const auto d = p.mu.size();
  if (d < 1) throw UsageError("ParamPoint: empty location vector");
  if (p.sigma.rows() != d || p.sigma.cols() != d) throw UsageError("ParamPoint: sigma must be d x d");
  if (!p.mu.allFinite() || !p.sigma.allFinite()) throw DomainError("ParamPoint: non-finite entries");
  if ((p.sigma - p.sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw DomainError("ParamPoint: sigma is not symmetric");
  const double min_eig = d == 1 ? p.sigma(0, 0) : Eigen::SelfAdjointEigenSolver<Matrix>(p.sigma, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (!(min_eig >= eig_floor)) {
    std::ostringstream os;
    os << "ParamPoint: sigma smallest eigenvalue " << min_eig << " below floor " << eig_floor;
    throw DomainError(os.str());
  }
}

Matrix clamp_eigenvalues(const Matrix& sigma, double eig_lo, double eig_hi) {
  if (sigma.rows() == 1) return Matrix::Constant(1, 1, std::clamp(sigma(0, 0), eig_lo, eig_hi));
  const Matrix sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector ev = es.eigenvalues().cwiseMax(eig_lo).cwiseMin(eig_hi);
  Matrix out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

CompactDomain CompactDomain::box(Eigen::Index d, double mu_lo, double mu_hi, double eig_lo, double eig_hi) {
  CompactDomain dom{Vector::Constant(d, mu_lo), Vector::Constant(d, mu_hi), eig_lo, eig_hi};
  dom.validate();
  return dom;
}

void CompactDomain::validate() const {
  if (lo.size() == 0 || lo.size() != hi.size()) throw UsageError("CompactDomain: box bounds must be non-empty and of equal length");
  if ((lo.array() >= hi.array()).any()) throw UsageError("CompactDomain: need lo < hi per coordinate");
  if (!(eig_lo > 0.0 && eig_lo < eig_hi)) throw UsageError("CompactDomain: need 0 < eig_lo < eig_hi");
}

bool CompactDomain::contains(const ParamPoint& p, double slack) const {
  if (p.mu.size() != lo.size()) return false;
  if ((p.mu.array() < lo.array() - slack).any() || (p.mu.array() > hi.array() + slack).any()) return false;
  const Matrix sym = 0.5 * (p.sigma + p.sigma.transpose());
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues();
  return ev.minCoeff() >= eig_lo * (1 - 1e-9) - slack && ev.maxCoeff() <= eig_hi * (1 + 1e-9) + slack;
}

ParamPoint CompactDomain::project(const ParamPoint& p) const {
  check_dim(lo.size(), p.mu.size(), "CompactDomain::project");
  return {p.mu.cwiseMax(lo).cwiseMin(hi), clamp_eigenvalues(p.sigma, eig_lo, eig_hi)};
}

std::string to_string(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::gaussian_location_scale: return "gaussian_location_scale";
    case FamilyTag::gaussian_location_fixed_sigma: return "gaussian_location_fixed_sigma";
    case FamilyTag::student_t_fixed_dof: return "student_t_fixed_dof";
    case FamilyTag::cauchy_standard: return "cauchy_standard";
  }
  return "unknown";
}

FamilyTag family_tag_from_string(const std::string& name) {
  for (auto tag : {FamilyTag::gaussian_location_scale, FamilyTag::gaussian_location_fixed_sigma,
                   FamilyTag::student_t_fixed_dof, FamilyTag::cauchy_standard}) {
    if (to_string(tag) == name) return tag;
  }
  // Short aliases for the command line.
  if (name == "gaussian") return FamilyTag::gaussian_location_scale;
  if (name == "gaussian_location") return FamilyTag::gaussian_location_fixed_sigma;
  if (name == "student_t" || name == "t") return FamilyTag::student_t_fixed_dof;
  if (name == "cauchy") return FamilyTag::cauchy_standard;
  throw UsageError("unknown kernel family '" + name + "'");
}

KernelFamily KernelFamily::gaussian(Eigen::Index d) {
  if (d < 1) throw UsageError("KernelFamily: dimension must be positive");
  return KernelFamily(FamilyTag::gaussian_location_scale, d);
}

KernelFamily KernelFamily::gaussian_location(Matrix fixed_sigma) {
  KernelFamily k(FamilyTag::gaussian_location_fixed_sigma, fixed_sigma.rows());
  validate(ParamPoint(Vector::Zero(fixed_sigma.rows()), fixed_sigma));
  k.fixed_sigma_ = std::move(fixed_sigma);
  return k;
}

KernelFamily KernelFamily::student_t(Eigen::Index d, double dof) {
  if (d < 1) throw UsageError("KernelFamily: dimension must be positive");
  if (!(dof > 1.0) || !std::isfinite(dof) || std::fmod(dof, 2.0) != 1.0) {
    throw UsageError("KernelFamily: Student-t degrees of freedom must be an odd integer above 1 (use cauchy for 1)");
  }
  KernelFamily k(FamilyTag::student_t_fixed_dof, d);
  k.dof_ = dof;
  return k;
}

KernelFamily KernelFamily::cauchy(Eigen::Index d) {
  if (d < 1) throw UsageError("KernelFamily: dimension must be positive");
  KernelFamily k(FamilyTag::cauchy_standard, d);
  k.dof_ = 1.0;
  return k;
}

void KernelFamily::set_eig_floor(double floor) {
  if (!(floor > 0.0)) throw UsageError("eig_floor must be positive");
  eig_floor_ = floor;
}

std::string KernelFamily::describe() const {
  std::ostringstream os;
  os << to_string(tag_) << "(d=" << dim_;
  if (tag_ == FamilyTag::student_t_fixed_dof) os << ", dof=" << dof_;
  if (tag_ == FamilyTag::gaussian_location_fixed_sigma && dim_ == 1) os << ", sigma=" << fixed_sigma_(0, 0);
  os << ")";
  return os.str();
}

PreparedKernel::PreparedKernel(const KernelFamily& family, const ParamPoint& p)
    : family_(family), point_(family.effective(p)) {
  check_dim(family.dim(), p.mu.size(), "kernel parameter");
  validate(point_, family.eig_floor());
  const double d = static_cast<double>(family.dim());
  llt_.compute(point_.sigma);
  if (llt_.info() != Eigen::Success) throw DomainError("kernel: sigma is not positive definite");
  sigma_inv_ = llt_.solve(Matrix::Identity(family.dim(), family.dim()));
  const double log_det = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  if (family.is_gaussian()) {
    log_norm_ = -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
  } else {
    const double nu = family.dof();
    log_norm_ = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * std::numbers::pi) -
                0.5 * log_det;
  }
  if (family.dim() == 1) {
    mu1_ = point_.mu(0);
    inv_var1_ = 1.0 / point_.sigma(0, 0);
  }
}

double PreparedKernel::whiten(const Eigen::Ref<const Vector>& x, Vector& u) const {
  check_dim(family_.dim(), x.size(), "kernel argument");
  const Vector r = x - point_.mu;
  u = sigma_inv_ * r;
  return r.dot(u);
}

double PreparedKernel::shape_factor(double q) const {
  if (family_.is_gaussian()) return 1.0;
  const double nu = family_.dof();
  return (nu + static_cast<double>(family_.dim())) / (nu + q);
}

double PreparedKernel::log_pdf(const Eigen::Ref<const Vector>& x) const {
  double q;
  if (family_.dim() == 1) {
    if (x.size() != 1) check_dim(1, x.size(), "kernel argument");
    const double r = x(0) - mu1_;
    q = r * r * inv_var1_;
  } else {
    Vector u;
    q = whiten(x, u);
  }
  if (family_.is_gaussian()) return log_norm_ - 0.5 * q;
  const double nu = family_.dof();
  return log_norm_ - 0.5 * (nu + static_cast<double>(family_.dim())) * std::log1p(q / nu);
}

double PreparedKernel::pdf(const Eigen::Ref<const Vector>& x) const {
  return std::max(std::exp(log_pdf(x)), kDensityFloor);
}

Vector PreparedKernel::log_pdf_rows(const Matrix& data) const {
  check_dim(family_.dim(), data.cols(), "kernel data");
  Vector q;
  if (family_.dim() == 1) {
    q = (data.col(0).array() - mu1_).square() * inv_var1_;
  } else {
    Matrix centered = data.rowwise() - point_.mu.transpose();
    // Solve L z = r^T for all rows at once; q = |z|^2.
    Matrix z = llt_.matrixL().solve(centered.transpose());
    q = z.colwise().squaredNorm().transpose();
  }
  if (family_.is_gaussian()) return (log_norm_ - 0.5 * q.array()).matrix();
  const double nu = family_.dof();
  const double half = 0.5 * (nu + static_cast<double>(family_.dim()));
  return (log_norm_ - half * (q.array() / nu).log1p()).matrix();
}

ParamGradient PreparedKernel::grad_log(const Eigen::Ref<const Vector>& x) const {
  Vector u;
  const double q = whiten(x, u);
  const double a = shape_factor(q);
  ParamGradient g;
  g.d_mu = a * u;
  if (family_.has_scale_parameter()) {
    g.d_sigma = 0.5 * (a * u * u.transpose() - sigma_inv_);
  } else {
    g.d_sigma = Matrix::Zero(family_.dim(), family_.dim());
  }
  return g;
}

ParamGradient PreparedKernel::grad(const Eigen::Ref<const Vector>& x) const {
  ParamGradient g = grad_log(x);
  const double f = std::exp(log_pdf(x));
  g.d_mu *= f;
  g.d_sigma *= f;
  return g;
}

Matrix PreparedKernel::hessian_mu(const Eigen::Ref<const Vector>& x) const {
  Vector u;
  const double q = whiten(x, u);
  const double a = shape_factor(q);
  const double f = std::exp(log_pdf(x));
  // Hessian of log f is b u u^T - a Sigma^-1 with b = 0 for the Gaussian and
  // b = 2 a^2 / (nu + d) for Student-t; Hessian of f adds the outer product
  // of the log-gradient.
  double b = 0.0;
  if (!family_.is_gaussian()) b = 2.0 * a * a / (family_.dof() + static_cast<double>(family_.dim()));
  return f * ((a * a + b) * u * u.transpose() - a * sigma_inv_);
}

double log_pdf(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p) {
  return PreparedKernel(family, p).log_pdf(x);
}

double pdf(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p) {
  return PreparedKernel(family, p).pdf(x);
}

ParamGradient grad_params(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p) {
  return PreparedKernel(family, p).grad(x);
}

Matrix hessian_mu(const KernelFamily& family, const Eigen::Ref<const Vector>& x, const ParamPoint& p) {
  return PreparedKernel(family, p).hessian_mu(x);
}

Matrix sample(const KernelFamily& family, const ParamPoint& p, Eigen::Index n, RngStream& rng) {
  if (n < 1) throw UsageError("sample: n must be at least 1");
  const PreparedKernel prepared(family, p);
  const auto d = family.dim();
  const Matrix chol = Eigen::LLT<Matrix>(prepared.point().sigma).matrixL();
  const Vector& mu = prepared.point().mu;
  Matrix out(n, d);
  Vector z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(j) = rng.normal();
    double scale = 1.0;
    if (!family.is_gaussian()) {
      const double w = std::chi_squared_distribution<double>(family.dof())(rng.engine());
      scale = 1.0 / std::sqrt(w / family.dof());
    }
    out.row(i) = (mu + scale * (chol * z)).transpose();
  }
  return out;
}

Matrix log_cholesky_pushforward(const Matrix& chol_factor, const Matrix& grad_sigma) {
  Matrix g = 2.0 * grad_sigma * chol_factor;
  Matrix out = g.triangularView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, i) *= chol_factor(i, i);
  return out;
}

Matrix sigma_from_log_cholesky(const Matrix& theta) {
  Matrix l = theta.triangularView<Eigen::StrictlyLower>();
  for (Eigen::Index i = 0; i < theta.rows(); ++i) l(i, i) = std::exp(theta(i, i));
  return l * l.transpose();
}

Matrix log_cholesky_from_sigma(const Matrix& sigma) {
  Matrix l = Eigen::LLT<Matrix>(sigma).matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) l(i, i) = std::log(l(i, i));
  return l;
}

}  // namespace deviate
