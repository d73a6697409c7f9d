#pragma once

#include "deviate/estimation.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace deviate {

/// A kernel family plus, for h0, its parameter point.
struct KernelSpec {
  FamilyTag family = FamilyTag::gaussian_location_scale;
  int dim = 1;
  double dof = 0.0;          // student_t_fixed_dof only
  Matrix fixed_sigma;        // gaussian_location_fixed_sigma only
  ParamPoint point;          // h0 only

  KernelFamily build() const;
};

enum class LambdaRule { constant, n_pow_quarter, n_pow_three_eighths, n_pow_half };
std::string to_string(LambdaRule r);
LambdaRule lambda_rule_from_string(const std::string& s);

/// Either a constant, or a drift toward the anchor:
///   mu*(n) = mu0 + scale * n^-rate
///   Sigma*(n) = (Sigma0^{1/2} + scale * n^-rate * I)^2
struct DriftRule {
  bool drifting = false;
  Vector mu_value;      // constant mu
  Matrix sigma_value;   // constant Sigma
  Vector mu_scale;      // drifting mu
  double sigma_scale = 0.0;  // drifting Sigma
  double rate = 0.125;
};

struct ScenarioSpec {
  std::string name;
  KernelSpec h0;
  KernelSpec f;
  CompactDomain domain = CompactDomain::box(1, -20.0, 20.0, 0.01, 100.0);
  LambdaRule lambda_rule = LambdaRule::constant;
  double lambda_c = 0.5;
  DriftRule mu_rule;
  DriftRule sigma_rule;
  std::vector<int> n_grid;
  int n_reps = 64;
  std::uint64_t seed = 42;
  /// Adds an EM start at (lambda = 0.5, mu0, Sigma0).
  bool extra_init_at_anchor = false;
  long max_fits = 20000;

  void validate() const;
  DeviatedModel model() const;
  ParamG g_star(int n) const;
  double lambda_star(int n) const;
};

void to_json(nlohmann::json& j, const ScenarioSpec& s);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

/// case-i, case-ii, case-iii, case-iv, nondist-sigma-drift, nondist-mu-drift.
ScenarioSpec scenario_preset(const std::string& name);
std::vector<std::string> scenario_preset_names();

/// 8 log-spaced integers in [100, 10000].
std::vector<int> default_n_grid();

struct CellResult {
  int n = 0;
  int rep = 0;
  bool ok = false;
  std::string error;
  ParamG g_hat;
  double err_lambda = 0.0;
  double err_mu = 0.0;
  double err_sigma = 0.0;
  double hellinger = 0.0;
  double loglik = 0.0;
  bool converged = false;
  int n_iter = 0;
  double max_descent = 0.0;  // see FitResult::max_descent
  double seconds = 0.0;  // not part of any reproducible output
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_std_err = 0.0;
};

/// Per-n statistics of the log error of one channel, plus the fitted line.
struct ChannelSummary {
  std::string name;
  std::vector<int> n;
  std::vector<int> n_used;
  std::vector<double> mean_log;
  std::vector<double> q25, q50, q75;
  std::optional<SlopeFit> fit;
  /// Standard error of the slope from the replicate variance of each mean
  /// (propagated through the least-squares weights); scales as 1/sqrt(reps).
  double slope_std_err_replicate = 0.0;
};

struct RateStudyReport {
  ScenarioSpec spec;
  std::string kind;  // "parameter" or "density"
  std::string scenario_hash;
  std::vector<CellResult> cells;  // ordered by (n, rep)
  std::vector<ChannelSummary> channels;
  std::vector<std::string> plot_channels;
  int n_failed = 0;
  // Run metadata; excluded from the reproducible JSON.
  long n_new_fits = 0;
  long n_cached = 0;
  double wall_seconds = 0.0;

  const ChannelSummary& channel(const std::string& name) const;
};

/// Deterministic summary (no timings).
void to_json(nlohmann::json& j, const RateStudyReport& r);
/// Timings, thread count and cache statistics.
nlohmann::json metadata_json(const RateStudyReport& r, unsigned threads);

struct StudyOptions {
  unsigned threads = 1;
  /// Per-cell cache directory; no caching when empty.
  std::filesystem::path cache_dir;
};

RateStudyReport run_rate_study(const ScenarioSpec& spec, const EmConfig& em, const StudyOptions& opts = {});
RateStudyReport run_density_rate_study(const ScenarioSpec& spec, const EmConfig& em, const StudyOptions& opts = {});

/// Ordinary least squares of y on log n.
SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points);

/// Stable 64-bit hash of the scenario and EM settings.
std::string scenario_hash(const ScenarioSpec& spec, const EmConfig& em);

/// cells.csv (reproducible) and timing.csv (wall times).
void write_cells_csv(const RateStudyReport& r, const std::filesystem::path& path);
void write_timing_csv(const RateStudyReport& r, const std::filesystem::path& path);

/// One SVG per plotted channel plus histogram.svg of one simulated dataset.
std::vector<std::filesystem::path> emit_plots(const RateStudyReport& r, const std::filesystem::path& out_dir);

/// The dataset drawn for cell (n, rep); identical to the one the study fits.
Dataset cell_dataset(const ScenarioSpec& spec, int n, int rep);

nlohmann::json em_config_json(const EmConfig& em);

}  // namespace deviate
