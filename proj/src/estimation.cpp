#include "deviate/estimation.hpp"

#include "deviate/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace deviate {

void EmConfig::validate() const {
  if (max_iter < 1) throw UsageError("EmConfig: max_iter must be positive");
  if (!(tol_loglik > 0.0) || !(tol_param > 0.0)) throw UsageError("EmConfig: tolerances must be positive");
  if (n_restarts < 1 && extra_inits.empty()) throw UsageError("EmConfig: need at least one restart");
  if (lambda_init_grid.empty()) throw UsageError("EmConfig: lambda_init_grid is empty");
  for (double l : lambda_init_grid) {
    if (!(l > 0.0 && l < 1.0)) throw UsageError("EmConfig: lambda_init_grid values must lie strictly inside (0,1)");
  }
  if (!(eig_floor > 0.0)) throw UsageError("EmConfig: eig_floor must be positive");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::loglik: return "loglik";
    case StopReason::param: return "param";
    case StopReason::max_iter: return "max_iter";
    case StopReason::degenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

/// Rows sorted lexicographically, so fits do not depend on row order.
Matrix canonical_rows(const Matrix& data) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (data(a, j) != data(b, j)) return data(a, j) < data(b, j);
    }
    return false;
  });
  Matrix out(data.rows(), data.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(order[i]);
  return out;
}

MStepMode resolve_mode(const DeviatedModel& m, const EmConfig& cfg) {
  if (cfg.m_step_mode) {
    if (*cfg.m_step_mode == MStepMode::closed_form_gaussian && !m.f.is_gaussian()) {
      throw UsageError("EmConfig: closed-form M-step requires a Gaussian kernel");
    }
    return *cfg.m_step_mode;
  }
  return m.f.is_gaussian() ? MStepMode::closed_form_gaussian : MStepMode::numeric_ascent;
}

double param_change(const ParamG& a, const ParamG& b) {
  double c = std::abs(a.lambda - b.lambda);
  c = std::max(c, (a.point.mu - b.point.mu).cwiseAbs().maxCoeff());
  c = std::max(c, (a.point.sigma - b.point.sigma).cwiseAbs().maxCoeff());
  return c;
}

/// Everything an EM run needs besides its initializer.
class EmEngine {
 public:
  EmEngine(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg)
      : m_(m), data_(data), cfg_(cfg), mode_(resolve_mode(m, cfg)) {
    if (data.cols() != m.dim()) throw UsageError("em_fit: data dimension differs from the model");
    if (data.rows() < 2) throw UsageError("em_fit: need at least two observations");
    if (!data.allFinite()) throw UsageError("em_fit: data contain non-finite values");
    f_ = m.f;
    f_.set_eig_floor(std::min(cfg.eig_floor, m.domain.eig_lo));
    log_h0_ = PreparedKernel(m.h0_family, m.h0_point).log_pdf_rows(data);
    eig_lo_ = std::max(cfg.eig_floor, m.domain.eig_lo);
  }

  ParamG project(const ParamG& g) const {
    ParamG out;
    out.lambda = std::clamp(g.lambda, 0.0, 1.0);
    out.point.mu = g.point.mu.cwiseMax(m_.domain.lo).cwiseMin(m_.domain.hi);
    out.point.sigma = m_.f.has_scale_parameter() ? clamp_eigenvalues(g.point.sigma, eig_lo_, m_.domain.eig_hi)
                                                 : m_.f.fixed_sigma();
    return out;
  }

  /// E-step: log-likelihood at g, responsibilities into w.
  double expectation(const ParamG& g, Vector& w) const {
    const Vector log_f = PreparedKernel(f_, g.point).log_pdf_rows(data_);
    Vector lp;
    mixture_log_density(g.lambda, log_h0_, log_f, lp);
    if (g.lambda > 0.0) {
      w = (std::log(g.lambda) + log_f.array() - lp.array()).exp().min(1.0).matrix();
    } else {
      w = Vector::Zero(data_.rows());
    }
    return lp.sum();
  }

  /// M-step given responsibilities; returns nullopt when the f-mass vanishes.
  std::optional<ParamG> maximization(const ParamG& g, const Vector& w) const {
    const double mass = w.sum();
    if (!(mass >= 1e-12)) return std::nullopt;
    ParamG next;
    next.lambda = std::clamp(mass / static_cast<double>(data_.rows()), 0.0, 1.0);
    if (mode_ == MStepMode::closed_form_gaussian) {
      Vector mu = (data_.transpose() * w) / mass;
      mu = mu.cwiseMax(m_.domain.lo).cwiseMin(m_.domain.hi);
      next.point.mu = mu;
      if (m_.f.has_scale_parameter()) {
        const Matrix centered = data_.rowwise() - mu.transpose();
        Matrix s = (centered.transpose() * w.asDiagonal() * centered) / mass;
        next.point.sigma = clamp_eigenvalues(s, eig_lo_, m_.domain.eig_hi);
      } else {
        next.point.sigma = m_.f.fixed_sigma();
      }
    } else {
      next.point = numeric_ascent(g.point, w);
    }
    return next;
  }

  FitResult run(const ParamG& init) const {
    FitResult res;
    ParamG g = project(init);
    Vector w;
    double ll = expectation(g, w);
    res.trace.push_back(ll);
    res.stop_reason = StopReason::max_iter;
    for (int it = 1; it <= cfg_.max_iter; ++it) {
      auto next = maximization(g, w);
      if (!next) {
        res.degenerate = true;
        res.stop_reason = StopReason::degenerate;
        g = ParamG(0.0, project(init).point);
        ll = expectation(g, w);
        res.n_iter = it;
        res.trace.push_back(ll);
        break;
      }
      const double ll_next = expectation(*next, w);
      const double dparam = param_change(g, *next);
      const double dll = std::abs(ll_next - ll) / std::max(1.0, std::abs(ll));
      res.max_descent = std::max(res.max_descent, ll - ll_next);
      g = std::move(*next);
      ll = ll_next;
      res.trace.push_back(ll);
      res.n_iter = it;
      if (dll < cfg_.tol_loglik) {
        res.stop_reason = StopReason::loglik;
        res.converged = true;
        break;
      }
      if (dparam < cfg_.tol_param) {
        res.stop_reason = StopReason::param;
        res.converged = true;
        break;
      }
    }
    res.g_hat = std::move(g);
    res.loglik = ll;
    return res;
  }

  const Matrix& data() const { return data_; }
  const EmConfig& cfg() const { return cfg_; }

 private:
  /// Weighted objective sum_i w_i log f(x_i | mu, Sigma(theta)).
  double weighted_objective(const ParamPoint& p, const Vector& w) const {
    try {
      return w.dot(PreparedKernel(f_, p).log_pdf_rows(data_));
    } catch (const DomainError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  /// Damped gradient ascent with backtracking in (mu, log-Cholesky) coordinates.
  ParamPoint numeric_ascent(const ParamPoint& start, const Vector& w) const {
    const auto d = m_.dim();
    const bool scale = m_.f.has_scale_parameter();
    const double mass = w.sum();
    ParamPoint cur = f_.effective(start);
    double obj = weighted_objective(cur, w);
    Matrix theta = log_cholesky_from_sigma(cur.sigma);
    for (int step = 0; step < 50; ++step) {
      const PreparedKernel k(f_, cur);
      Vector g_mu = Vector::Zero(d);
      Matrix g_sigma = Matrix::Zero(d, d);
      for (Eigen::Index i = 0; i < data_.rows(); ++i) {
        if (w(i) == 0.0) continue;
        const ParamGradient g = k.grad_log(data_.row(i).transpose());
        g_mu += w(i) * g.d_mu;
        g_sigma += w(i) * g.d_sigma;
      }
      const Matrix chol = Eigen::LLT<Matrix>(cur.sigma).matrixL();
      const Matrix g_theta = scale ? log_cholesky_pushforward(chol, g_sigma) : Matrix::Zero(d, d);
      // Scale mu steps by Sigma so the unit step is dimensionally sensible.
      const Vector dir_mu = cur.sigma * g_mu / mass;
      const Matrix dir_theta = g_theta / mass;
      if (dir_mu.norm() + dir_theta.norm() < 1e-14) break;
      double t = 1.0;
      bool improved = false;
      for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
        ParamPoint trial;
        trial.mu = (cur.mu + t * dir_mu).cwiseMax(m_.domain.lo).cwiseMin(m_.domain.hi);
        const Matrix theta_trial = theta + t * dir_theta;
        trial.sigma = scale ? clamp_eigenvalues(sigma_from_log_cholesky(theta_trial), eig_lo_, m_.domain.eig_hi)
                            : m_.f.fixed_sigma();
        const double trial_obj = weighted_objective(trial, w);
        if (trial_obj > obj) {
          cur = std::move(trial);
          obj = trial_obj;
          theta = scale ? log_cholesky_from_sigma(cur.sigma) : theta;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    return cur;
  }

  const DeviatedModel& m_;
  const Matrix& data_;
  const EmConfig& cfg_;
  MStepMode mode_;
  KernelFamily f_ = KernelFamily::gaussian(1);
  Vector log_h0_;
  double eig_lo_ = 1e-8;
};

ParamG initializer_on(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, int restart, RngStream& rng) {
  const auto n = data.rows();
  const auto& grid = cfg.lambda_init_grid;
  const double lambda = grid[static_cast<std::size_t>(restart) % grid.size()];
  const Eigen::Index pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
  const Vector mu = data.row(pick).transpose();
  Matrix sigma;
  if (m.f.has_scale_parameter()) {
    const Eigen::Index k = std::min<Eigen::Index>(n, std::max<Eigen::Index>(10, n / 20));
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(data.row(i).transpose() - mu).squaredNorm(), i};
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    Matrix nb(k, data.cols());
    for (Eigen::Index i = 0; i < k; ++i) nb.row(i) = data.row(dist[static_cast<std::size_t>(i)].second);
    const Matrix centered = nb.rowwise() - nb.colwise().mean();
    sigma = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(k - 1, 1));
  } else {
    sigma = m.f.fixed_sigma();
  }
  return {lambda, {mu, sigma}};
}

}  // namespace

ParamG em_initializer(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, int restart, RngStream& rng) {
  const EmEngine engine(m, data, cfg);
  return engine.project(initializer_on(m, data, cfg, restart, rng));
}

FitResult em_run(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const ParamG& init) {
  cfg.validate();
  const Matrix sorted = canonical_rows(data);
  return EmEngine(m, sorted, cfg).run(init);
}

ParamG em_step(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const ParamG& g) {
  const Matrix sorted = canonical_rows(data);
  const EmEngine engine(m, sorted, cfg);
  Vector w;
  engine.expectation(g, w);
  auto next = engine.maximization(g, w);
  return next ? *next : ParamG(0.0, g.point);
}

FitResult em_fit(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const RngStream& rng) {
  cfg.validate();
  const Matrix sorted = canonical_rows(data);
  const EmEngine engine(m, sorted, cfg);

  std::optional<FitResult> best;
  std::vector<double> logliks;
  double max_descent = 0.0;
  const int total = cfg.n_restarts + static_cast<int>(cfg.extra_inits.size());
  for (int r = 0; r < total; ++r) {
    ParamG init;
    if (r < cfg.n_restarts) {
      RngStream stream = rng.split(static_cast<std::uint64_t>(r));
      init = initializer_on(m, sorted, cfg, r, stream);
    } else {
      init = cfg.extra_inits[static_cast<std::size_t>(r - cfg.n_restarts)];
    }
    FitResult res = engine.run(init);
    res.restart_index = r;
    logliks.push_back(res.loglik);
    max_descent = std::max(max_descent, res.max_descent);
    if (!std::isfinite(res.loglik)) continue;
    if (!best || res.loglik > best->loglik) best = std::move(res);
  }
  if (!best) {
    std::ostringstream os;
    os << "em_fit: all " << total << " restarts produced non-finite log-likelihoods";
    throw EstimationError(os.str());
  }
  best->restart_logliks = std::move(logliks);
  best->max_descent = max_descent;
  return std::move(*best);
}

std::vector<std::pair<double, double>> profile_loglik_lambda(const DeviatedModel& m, const Matrix& data,
                                                             const ParamPoint& point,
                                                             const std::vector<double>& lambda_grid) {
  if (lambda_grid.empty()) throw UsageError("profile_loglik_lambda: empty grid");
  if (data.rows() < 1) throw UsageError("profile_loglik_lambda: empty data");
  for (double l : lambda_grid) {
    if (!(l >= 0.0 && l <= 1.0)) throw UsageError("profile_loglik_lambda: grid values must lie in [0,1]");
  }
  m.check(ParamG(0.5, point));
  const Vector log_h0 = PreparedKernel(m.h0_family, m.h0_point).log_pdf_rows(data);
  const Vector log_f = PreparedKernel(m.f, point).log_pdf_rows(data);
  std::vector<std::pair<double, double>> out;
  out.reserve(lambda_grid.size());
  Vector lp;
  for (double l : lambda_grid) {
    mixture_log_density(l, log_h0, log_f, lp);
    out.emplace_back(l, lp.sum());
  }
  return out;
}


void to_json(nlohmann::json& j, const ParamG& g) {
  j = nlohmann::json{{"lambda", g.lambda},
                     {"mu", std::vector<double>(g.point.mu.data(), g.point.mu.data() + g.point.mu.size())},
                     {"sigma", json_io::matrix_json(g.point.sigma)}};
}

void to_json(nlohmann::json& j, const FitResult& r) {
  to_json(j, r.g_hat);
  j["loglik"] = r.loglik;
  j["n_iter"] = r.n_iter;
  j["converged"] = r.converged;
  j["restart_index"] = r.restart_index;
  j["stop_reason"] = to_string(r.stop_reason);
  j["degenerate"] = r.degenerate;
}

}  // namespace deviate
