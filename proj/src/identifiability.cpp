#include "deviate/identifiability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deviate {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::distinguishable: return "distinguishable";
    case Verdict::not_distinguishable: return "not_distinguishable";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const RankTestReport& r) {
  j = nlohmann::json{{"smallest_singular_value", r.smallest_singular_value},
                     {"largest_singular_value", r.largest_singular_value},
                     {"condition_number", r.condition_number},
                     {"n_grid_points", r.n_grid_points},
                     {"n_functions", r.n_functions},
                     {"relative_threshold", r.relative_threshold},
                     {"threshold", r.threshold},
                     {"verdict", to_string(r.verdict)},
                     {"function_labels", r.function_labels},
                     {"singular_values", std::vector<double>(r.singular_values.begin(), r.singular_values.end())},
                     {"null_vector", std::vector<double>(r.null_vector.begin(), r.null_vector.end())}};
  if (std::isfinite(r.heat_alignment)) j["heat_alignment"] = r.heat_alignment;
}

namespace {

double halton(std::uint64_t index, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

constexpr std::uint64_t kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

}  // namespace

Matrix default_grid(const std::vector<std::pair<KernelFamily, ParamPoint>>& components, Eigen::Index n_points) {
  if (components.empty()) throw UsageError("default_grid: no components");
  if (n_points < 2) throw UsageError("default_grid: need at least two points");
  const Eigen::Index d = components.front().second.dim();
  if (d > static_cast<Eigen::Index>(std::size(kPrimes))) throw UsageError("default_grid: dimension too large");
  Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (const auto& [fam, p] : components) {
    if (p.dim() != d) throw UsageError("default_grid: components differ in dimension");
    const Vector scale = fam.effective_sigma(p).diagonal().cwiseSqrt();
    lo = lo.cwiseMin(p.mu - 8.0 * scale);
    hi = hi.cwiseMax(p.mu + 8.0 * scale);
  }
  Matrix grid(n_points, d);
  if (d == 1) {
    grid.col(0) = Vector::LinSpaced(n_points, lo(0), hi(0));
    return grid;
  }
  for (Eigen::Index i = 0; i < n_points; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double u = halton(static_cast<std::uint64_t>(i + 1), kPrimes[k]);
      grid(i, k) = lo(k) + u * (hi(k) - lo(k));
    }
  }
  return grid;
}

namespace {

/// Symmetric coordinate directions of Sigma: e_u e_u^T on the diagonal and
/// e_u e_v^T + e_v e_u^T off it (u < v).
struct SigmaCoord {
  Eigen::Index u, v;
  Matrix direction(Eigen::Index d) const {
    Matrix e = Matrix::Zero(d, d);
    e(u, v) = 1.0;
    e(v, u) = 1.0;
    return e;
  }
};

std::vector<SigmaCoord> sigma_coords(const KernelFamily& family) {
  std::vector<SigmaCoord> out;
  if (!family.has_scale_parameter()) return out;
  for (Eigen::Index u = 0; u < family.dim(); ++u) {
    for (Eigen::Index v = u; v < family.dim(); ++v) out.push_back({u, v});
  }
  return out;
}

std::string idx(Eigen::Index i) { return std::to_string(i); }
std::string idx(const SigmaCoord& c) { return std::to_string(c.u) + "," + std::to_string(c.v); }

void check_grid(const Matrix& grid, Eigen::Index n_functions, const Vector* weights) {
  if (grid.rows() < 3 * n_functions) {
    throw UsageError("identifiability: grid needs at least " + std::to_string(3 * n_functions) + " points, got " +
                     std::to_string(grid.rows()));
  }
  if (!grid.allFinite()) throw UsageError("identifiability: grid contains non-finite values");
  if (weights != nullptr && (weights->size() != grid.rows() || !(weights->array() > 0.0).all())) {
    throw UsageError("identifiability: weights must be positive, one per grid point");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(grid.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < grid.cols(); ++j) {
      if (grid(a, j) != grid(b, j)) return grid(a, j) < grid(b, j);
    }
    return false;
  };
  std::sort(order.begin(), order.end(), less);
  const double span = std::max(1.0, grid.cwiseAbs().maxCoeff());
  for (std::size_t i = 1; i < order.size(); ++i) {
    if ((grid.row(order[i]) - grid.row(order[i - 1])).cwiseAbs().maxCoeff() <= 1e-12 * span) {
      throw UsageError("identifiability: grid contains duplicate points");
    }
  }
}

/// Column-normalizes M, takes its SVD and fills the verdict.
RankTestReport rank_test(Matrix mat, std::vector<std::string> labels, double relative_threshold,
                         const Vector* weights, Vector& column_norms, Matrix& right_vectors) {
  if (!(relative_threshold > 0.0 && relative_threshold < 1.0)) {
    throw UsageError("identifiability: relative threshold must lie in (0,1)");
  }
  if (weights != nullptr) mat = weights->asDiagonal() * mat;
  column_norms = mat.colwise().norm().transpose();
  for (Eigen::Index k = 0; k < mat.cols(); ++k) {
    if (column_norms(k) > 0.0) mat.col(k) /= column_norms(k);
  }
  Eigen::JacobiSVD<Matrix> svd(mat, Eigen::ComputeThinV);
  RankTestReport r;
  r.singular_values = svd.singularValues();
  r.largest_singular_value = r.singular_values(0);
  r.smallest_singular_value = r.singular_values(r.singular_values.size() - 1);
  r.condition_number = r.smallest_singular_value > 0.0 ? r.largest_singular_value / r.smallest_singular_value
                                                       : std::numeric_limits<double>::infinity();
  r.n_grid_points = static_cast<int>(mat.rows());
  r.n_functions = static_cast<int>(mat.cols());
  r.relative_threshold = relative_threshold;
  r.threshold = relative_threshold * r.largest_singular_value;
  if (r.smallest_singular_value <= r.threshold) {
    r.verdict = Verdict::not_distinguishable;
  } else if (r.smallest_singular_value <= 10.0 * r.threshold) {
    r.verdict = Verdict::inconclusive;
  } else {
    r.verdict = Verdict::distinguishable;
  }
  r.function_labels = std::move(labels);
  right_vectors = svd.matrixV();
  Vector raw = right_vectors.col(right_vectors.cols() - 1);
  for (Eigen::Index k = 0; k < raw.size(); ++k) {
    if (column_norms(k) > 0.0) raw(k) /= column_norms(k);
  }
  // Fix the sign so that the largest entry is positive.
  Eigen::Index arg = 0;
  raw.cwiseAbs().maxCoeff(&arg);
  if (raw(arg) < 0.0) raw = -raw;
  r.null_vector = raw / raw.norm();
  return r;
}

/// Per-point evaluator for f and its parameter derivatives up to order two.
class DerivativeBundle {
 public:
  DerivativeBundle(const KernelFamily& family, const ParamPoint& p)
      : family_(family), point_(family.effective(p)), coords_(sigma_coords(family)), base_(family, p) {
    const auto d = family.dim();
    step_ = 1e-5 * point_.sigma.trace() / static_cast<double>(d);
    for (const auto& c : coords_) {
      const Matrix dir = c.direction(d);
      plus_.emplace_back(family, ParamPoint(point_.mu, point_.sigma + step_ * dir));
      minus_.emplace_back(family, ParamPoint(point_.mu, point_.sigma - step_ * dir));
    }
  }

  Eigen::Index first_order_count() const { return 1 + family_.dim() + static_cast<Eigen::Index>(coords_.size()); }

  std::vector<std::string> labels(bool second_order, const std::string& suffix) const {
    const auto d = family_.dim();
    std::vector<std::string> out{"f" + suffix};
    for (Eigen::Index i = 0; i < d; ++i) out.push_back("d_mu[" + idx(i) + "]" + suffix);
    for (const auto& c : coords_) out.push_back("d_sigma[" + idx(c) + "]" + suffix);
    if (!second_order) return out;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i; j < d; ++j) out.push_back("d2_mu[" + idx(i) + "," + idx(j) + "]" + suffix);
    }
    for (Eigen::Index i = 0; i < d; ++i) {
      for (const auto& c : coords_) out.push_back("d2_mu_sigma[" + idx(i) + ";" + idx(c) + "]" + suffix);
    }
    for (std::size_t a = 0; a < coords_.size(); ++a) {
      for (std::size_t b = a; b < coords_.size(); ++b) {
        out.push_back("d2_sigma[" + idx(coords_[a]) + ";" + idx(coords_[b]) + "]" + suffix);
      }
    }
    return out;
  }

  /// Values at x in the order given by labels().
  void evaluate(const Vector& x, bool second_order, std::vector<double>& out) const {
    const auto d = family_.dim();
    out.clear();
    out.push_back(base_.pdf(x));
    const ParamGradient g = base_.grad(x);
    for (Eigen::Index i = 0; i < d; ++i) out.push_back(g.d_mu(i));
    for (const auto& c : coords_) out.push_back(sigma_component(g.d_sigma, c));
    if (!second_order) return;
    const Matrix h = base_.hessian_mu(x);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i; j < d; ++j) out.push_back(h(i, j));
    }
    std::vector<ParamGradient> gp, gm;
    for (std::size_t k = 0; k < coords_.size(); ++k) {
      gp.push_back(plus_[k].grad(x));
      gm.push_back(minus_[k].grad(x));
    }
    const double inv = 1.0 / (2.0 * step_);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (std::size_t k = 0; k < coords_.size(); ++k) out.push_back((gp[k].d_mu(i) - gm[k].d_mu(i)) * inv);
    }
    for (std::size_t a = 0; a < coords_.size(); ++a) {
      for (std::size_t b = a; b < coords_.size(); ++b) {
        // d/dSigma_b of the Sigma_a first derivative.
        out.push_back((sigma_component(gp[b].d_sigma, coords_[a]) - sigma_component(gm[b].d_sigma, coords_[a])) * inv);
      }
    }
  }

  /// Heat-equation relations as coefficient vectors over labels(true).
  std::vector<Vector> heat_relations() const {
    const auto d = family_.dim();
    const auto n_first = first_order_count();
    const auto total = static_cast<Eigen::Index>(labels(true, "").size());
    std::vector<Vector> out;
    Eigen::Index pos = n_first;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = i; j < d; ++j, ++pos) {
        Vector h = Vector::Zero(total);
        h(pos) = 1.0;
        const auto it = std::find_if(coords_.begin(), coords_.end(),
                                     [&](const SigmaCoord& c) { return c.u == i && c.v == j; });
        const auto k = static_cast<Eigen::Index>(it - coords_.begin());
        h(1 + d + k) = i == j ? -2.0 : -1.0;
        out.push_back(h);
      }
    }
    return out;
  }

 private:
  /// Coordinate derivative along the symmetric direction of c.
  static double sigma_component(const Matrix& d_sigma, const SigmaCoord& c) {
    return c.u == c.v ? d_sigma(c.u, c.u) : 2.0 * d_sigma(c.u, c.v);
  }

  KernelFamily family_;
  ParamPoint point_;
  std::vector<SigmaCoord> coords_;
  PreparedKernel base_;
  std::vector<PreparedKernel> plus_, minus_;
  double step_ = 1e-5;
};

}  // namespace

RankTestReport check_first_order_distinguishability(const DeviatedModel& m, const ParamPoint& point,
                                                    const Matrix& grid, double relative_threshold,
                                                    const Vector* weights) {
  m.check(ParamG(0.5, point));
  if (grid.cols() != m.dim()) throw UsageError("identifiability: grid dimension differs from the model");
  const DerivativeBundle bundle(m.f, point);
  std::vector<std::string> labels{"h0"};
  for (auto& l : bundle.labels(false, "")) labels.push_back(l);
  const auto k = static_cast<Eigen::Index>(labels.size());
  check_grid(grid, k, weights);
  const PreparedKernel h0(m.h0_family, m.h0_point);
  Matrix mat(grid.rows(), k);
  std::vector<double> vals;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    const Vector x = grid.row(r).transpose();
    mat(r, 0) = h0.pdf(x);
    bundle.evaluate(x, false, vals);
    for (std::size_t c = 0; c < vals.size(); ++c) mat(r, static_cast<Eigen::Index>(c) + 1) = vals[c];
  }
  Vector norms;
  Matrix v;
  return rank_test(std::move(mat), std::move(labels), relative_threshold, weights, norms, v);
}

RankTestReport check_second_order_identifiability(const KernelFamily& family, const std::vector<ParamPoint>& points,
                                                  const Matrix& grid, double relative_threshold,
                                                  const Vector* weights) {
  if (points.empty()) throw UsageError("identifiability: no parameter points");
  if (grid.cols() != family.dim()) throw UsageError("identifiability: grid dimension differs from the family");
  for (std::size_t a = 0; a < points.size(); ++a) {
    validate(family.effective(points[a]), family.eig_floor());
    for (std::size_t b = 0; b < a; ++b) {
      const bool same_mu = (points[a].mu - points[b].mu).norm() < 1e-12;
      const bool same_sigma = !family.has_scale_parameter() ||
                              (points[a].sigma - points[b].sigma).norm() < 1e-12;
      if (same_mu && same_sigma) throw UsageError("identifiability: parameter points must be distinct");
    }
  }
  std::vector<DerivativeBundle> bundles;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bundles.emplace_back(family, points[i]);
    const std::string suffix = points.size() > 1 ? "@" + std::to_string(i) : "";
    for (auto& l : bundles.back().labels(true, suffix)) labels.push_back(std::move(l));
  }
  const auto k = static_cast<Eigen::Index>(labels.size());
  check_grid(grid, k, weights);
  Matrix mat(grid.rows(), k);
  std::vector<double> vals;
  for (Eigen::Index r = 0; r < grid.rows(); ++r) {
    const Vector x = grid.row(r).transpose();
    Eigen::Index col = 0;
    for (const auto& b : bundles) {
      b.evaluate(x, true, vals);
      for (double v : vals) mat(r, col++) = v;
    }
  }
  Vector norms;
  Matrix right;
  RankTestReport report = rank_test(std::move(mat), std::move(labels), relative_threshold, weights, norms, right);

  if (family.tag() == FamilyTag::gaussian_location_scale) {
    // Numerical null space (at least one direction), mapped back to the
    // unnormalized functions and orthonormalized.
    Eigen::Index null_dim = 0;
    for (Eigen::Index s = 0; s < report.singular_values.size(); ++s) {
      if (report.singular_values(s) <= report.threshold) ++null_dim;
    }
    null_dim = std::max<Eigen::Index>(null_dim, 1);
    Matrix basis = right.rightCols(null_dim);
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
      if (norms(r) > 0.0) basis.row(r) /= norms(r);
    }
    const Matrix q = Eigen::HouseholderQR<Matrix>(basis).householderQ() * Matrix::Identity(basis.rows(), null_dim);
    double alignment = 1.0;
    Eigen::Index offset = 0;
    for (const auto& b : bundles) {
      const auto width = static_cast<Eigen::Index>(b.labels(true, "").size());
      for (const Vector& h_local : b.heat_relations()) {
        Vector h = Vector::Zero(k);
        h.segment(offset, width) = h_local;
        alignment = std::min(alignment, (q.transpose() * h).norm() / h.norm());
      }
      offset += width;
    }
    report.heat_alignment = alignment;
  }
  return report;
}

double heat_pde_residual(const KernelFamily& family, const std::vector<std::pair<Vector, ParamPoint>>& samples) {
  double worst = 0.0;
  for (const auto& [x, p] : samples) {
    const PreparedKernel k(family, p);
    const Matrix lhs = k.hessian_mu(x);
    const Matrix rhs = 2.0 * k.grad(x).d_sigma;
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace deviate
