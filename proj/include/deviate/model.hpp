#pragma once

#include "deviate/kernels.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace deviate {

/// G = (lambda, mu, Sigma).
struct ParamG {
  double lambda = 0.0;
  ParamPoint point;

  ParamG() = default;
  ParamG(double l, ParamPoint p) : lambda(l), point(std::move(p)) {}
  static ParamG scalar(double lambda, double mu, double variance) {
    return {lambda, ParamPoint::scalar(mu, variance)};
  }
};

/// The deviated model (1 - lambda) h0 + lambda f(.|mu, Sigma) with h0 known.
struct DeviatedModel {
  KernelFamily h0_family;
  ParamPoint h0_point;
  KernelFamily f;
  CompactDomain domain;

  DeviatedModel(KernelFamily h0_family, ParamPoint h0_point, KernelFamily f, CompactDomain domain);

  Eigen::Index dim() const { return f.dim(); }
  /// Anchor (mu0, Sigma0) used by the losses; the h0 parameter point.
  const ParamPoint& anchor() const { return h0_point; }

  /// Throws DomainError unless lambda in [0,1] and the point lies in the domain.
  void check(const ParamG& g) const;
};

/// Model with both densities pre-factorized; the evaluation workhorse.
class PreparedModel {
 public:
  PreparedModel(const DeviatedModel& m, const ParamG& g);

  double log_pdf(const Eigen::Ref<const Vector>& x) const;
  double pdf(const Eigen::Ref<const Vector>& x) const;

  const PreparedKernel& h0() const noexcept { return h0_; }
  const PreparedKernel& f() const noexcept { return f_; }
  double lambda() const noexcept { return lambda_; }

 private:
  PreparedKernel h0_;
  PreparedKernel f_;
  double lambda_;
};

double model_pdf(const DeviatedModel& m, const ParamG& g, const Eigen::Ref<const Vector>& x);
double model_log_pdf(const DeviatedModel& m, const ParamG& g, const Eigen::Ref<const Vector>& x);

struct LogLikelihood {
  double value = 0.0;
  std::size_t clamped = 0;  // points whose density fell below 1e-300
};

/// Sum of log model densities over the rows of data; never -inf.
LogLikelihood log_likelihood_detail(const DeviatedModel& m, const ParamG& g, const Matrix& data);
double log_likelihood(const DeviatedModel& m, const ParamG& g, const Matrix& data);

/// Per-row log mixture density given precomputed component log densities.
/// Entries are clamped at log(1e-300); returns the clamp count.
std::size_t mixture_log_density(double lambda, const Vector& log_h0, const Vector& log_f, Vector& out);

struct Dataset {
  Matrix data;                       // n x d
  std::optional<std::vector<bool>> labels;  // true = drawn from f; diagnostics only
};

/// n draws; row i comes from f with probability lambda.
Dataset sample_model(const DeviatedModel& m, const ParamG& g, Eigen::Index n, RngStream& rng);

/// CSV with header x1,...,xd[,label]. Labels are optional on read.
void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace deviate
