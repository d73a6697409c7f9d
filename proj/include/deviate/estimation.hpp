#pragma once

#include "deviate/model.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace deviate {

enum class MStepMode { closed_form_gaussian, numeric_ascent };

struct EmConfig {
  int max_iter = 2000;
  double tol_loglik = 1e-10;  // relative change
  double tol_param = 1e-9;
  int n_restarts = 8;
  std::vector<double> lambda_init_grid{0.1, 0.3, 0.5, 0.7, 0.9};
  /// Chosen from the kernel family when unset.
  std::optional<MStepMode> m_step_mode;
  double eig_floor = 1e-8;
  /// Extra initializers tried after the random restarts.
  std::vector<ParamG> extra_inits;

  void validate() const;
};

enum class StopReason { loglik, param, max_iter, degenerate };
std::string to_string(StopReason r);

struct FitResult {
  ParamG g_hat;
  double loglik = 0.0;
  int n_iter = 0;
  bool converged = false;
  StopReason stop_reason = StopReason::max_iter;
  bool degenerate = false;
  std::vector<double> trace;
  /// Largest single-iteration log-likelihood decrease seen in any restart;
  /// 0 when every iteration of every restart ascended.
  double max_descent = 0.0;
  int restart_index = 0;
  /// Final log-likelihood of every restart, in restart order.
  std::vector<double> restart_logliks;
};

/// Maximum likelihood estimate of G by EM with multiple restarts. h0 is held
/// fixed; rows of data are never reordered so fits are label-blind.
FitResult em_fit(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const RngStream& rng);

/// Single EM run from a given initializer (no restarts).
FitResult em_run(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const ParamG& init);

/// One EM update from g; used to check fixed points.
ParamG em_step(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, const ParamG& g);

/// Log-likelihood at each lambda of the grid with (mu, Sigma) held fixed.
std::vector<std::pair<double, double>> profile_loglik_lambda(const DeviatedModel& m, const Matrix& data,
                                                             const ParamPoint& point,
                                                             const std::vector<double>& lambda_grid);

/// Initial (lambda, mu, Sigma) for restart r: lambda from the grid, mu a
/// random data row, Sigma the covariance of its k nearest neighbours with
/// k = max(10, n/20).
ParamG em_initializer(const DeviatedModel& m, const Matrix& data, const EmConfig& cfg, int restart, RngStream& rng);

void to_json(nlohmann::json& j, const FitResult& r);
void to_json(nlohmann::json& j, const ParamG& g);

}  // namespace deviate
