#include "deviate/experiments.hpp"

#include "deviate/distances.hpp"
#include "deviate/json_io.hpp"
#include "deviate/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace deviate {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- specs

KernelFamily KernelSpec::build() const {
  switch (family) {
    case FamilyTag::gaussian_location_scale: return KernelFamily::gaussian(dim);
    case FamilyTag::gaussian_location_fixed_sigma:
      if (fixed_sigma.rows() != dim || fixed_sigma.cols() != dim) {
        throw UsageError("kernel spec: fixed_sigma must be dim x dim");
      }
      return KernelFamily::gaussian_location(fixed_sigma);
    case FamilyTag::student_t_fixed_dof: return KernelFamily::student_t(dim, dof);
    case FamilyTag::cauchy_standard: return KernelFamily::cauchy(dim);
  }
  throw UsageError("kernel spec: unknown family");
}

namespace {

json kernel_json(const KernelSpec& k, bool with_point) {
  json j{{"family", to_string(k.family)}, {"dim", k.dim}};
  if (k.family == FamilyTag::student_t_fixed_dof) j["dof"] = k.dof;
  if (k.family == FamilyTag::gaussian_location_fixed_sigma) j["fixed_sigma"] = json_io::matrix_json(k.fixed_sigma);
  if (with_point) {
    j["mu"] = json_io::vector_json(k.point.mu);
    j["sigma"] = json_io::matrix_json(k.point.sigma);
  }
  return j;
}

KernelSpec kernel_from(const json& j, bool with_point) {
  KernelSpec k;
  k.family = family_tag_from_string(j.at("family").get<std::string>());
  k.dim = j.value("dim", 1);
  if (k.dim < 1) throw UsageError("kernel spec: dim must be positive");
  if (k.family == FamilyTag::student_t_fixed_dof) k.dof = j.at("dof").get<double>();
  if (k.family == FamilyTag::gaussian_location_fixed_sigma) k.fixed_sigma = json_io::matrix_from(j.at("fixed_sigma"));
  if (with_point) {
    k.point.mu = json_io::vector_from(j.at("mu"));
    k.point.sigma = json_io::matrix_from(j.at("sigma"));
  }
  return k;
}

json mu_rule_json(const DriftRule& r) {
  if (r.drifting) return {{"rule", "drift"}, {"scale", json_io::vector_json(r.mu_scale)}, {"rate", r.rate}};
  return {{"rule", "const"}, {"value", json_io::vector_json(r.mu_value)}};
}

json sigma_rule_json(const DriftRule& r) {
  if (r.drifting) return {{"rule", "drift"}, {"scale", r.sigma_scale}, {"rate", r.rate}};
  return {{"rule", "const"}, {"value", json_io::matrix_json(r.sigma_value)}};
}

DriftRule mu_rule_from(const json& j) {
  DriftRule r;
  const auto rule = j.at("rule").get<std::string>();
  if (rule == "const") {
    r.mu_value = json_io::vector_from(j.at("value"));
  } else if (rule == "drift") {
    r.drifting = true;
    r.mu_scale = json_io::vector_from(j.at("scale"));
    r.rate = j.value("rate", 0.125);
  } else {
    throw UsageError("scenario: unknown mu rule '" + rule + "'");
  }
  return r;
}

DriftRule sigma_rule_from(const json& j) {
  DriftRule r;
  const auto rule = j.at("rule").get<std::string>();
  if (rule == "const") {
    r.sigma_value = json_io::matrix_from(j.at("value"));
  } else if (rule == "drift") {
    r.drifting = true;
    r.sigma_scale = j.at("scale").get<double>();
    r.rate = j.value("rate", 0.125);
  } else {
    throw UsageError("scenario: unknown sigma rule '" + rule + "'");
  }
  return r;
}

Matrix sym_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::string to_string(LambdaRule r) {
  switch (r) {
    case LambdaRule::constant: return "const";
    case LambdaRule::n_pow_quarter: return "c*n^-1/4";
    case LambdaRule::n_pow_three_eighths: return "c*n^-3/8";
    case LambdaRule::n_pow_half: return "c*n^-1/2";
  }
  return "unknown";
}

LambdaRule lambda_rule_from_string(const std::string& s) {
  for (LambdaRule r : {LambdaRule::constant, LambdaRule::n_pow_quarter, LambdaRule::n_pow_three_eighths,
                       LambdaRule::n_pow_half}) {
    if (to_string(r) == s) return r;
  }
  throw UsageError("scenario: unknown lambda rule '" + s + "'");
}

double ScenarioSpec::lambda_star(int n) const {
  const double nn = static_cast<double>(n);
  switch (lambda_rule) {
    case LambdaRule::constant: return lambda_c;
    case LambdaRule::n_pow_quarter: return lambda_c * std::pow(nn, -0.25);
    case LambdaRule::n_pow_three_eighths: return lambda_c * std::pow(nn, -0.375);
    case LambdaRule::n_pow_half: return lambda_c * std::pow(nn, -0.5);
  }
  return lambda_c;
}

ParamG ScenarioSpec::g_star(int n) const {
  const double nn = static_cast<double>(n);
  ParamPoint p;
  if (mu_rule.drifting) {
    p.mu = h0.point.mu + mu_rule.mu_scale * std::pow(nn, -mu_rule.rate);
  } else {
    p.mu = mu_rule.mu_value;
  }
  if (sigma_rule.drifting) {
    const auto d = h0.point.sigma.rows();
    const Matrix root = sym_sqrt(h0.point.sigma) +
                        sigma_rule.sigma_scale * std::pow(nn, -sigma_rule.rate) * Matrix::Identity(d, d);
    p.sigma = root * root;
  } else {
    p.sigma = sigma_rule.sigma_value;
  }
  if (f.family == FamilyTag::gaussian_location_fixed_sigma) p.sigma = f.fixed_sigma;
  return {lambda_star(n), std::move(p)};
}

DeviatedModel ScenarioSpec::model() const {
  return DeviatedModel(h0.build(), h0.point, f.build(), domain);
}

void ScenarioSpec::validate() const {
  if (name.empty()) throw UsageError("scenario: empty name");
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
      throw UsageError("scenario: name may only contain letters, digits, '-', '_' and '.'");
    }
  }
  if (n_grid.empty()) throw UsageError("scenario: empty n_grid");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 10) throw UsageError("scenario: sample sizes must be at least 10");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw UsageError("scenario: n_grid must be strictly increasing");
  }
  if (n_reps < 1) throw UsageError("scenario: n_reps must be positive");
  if (!(lambda_c > 0.0)) throw UsageError("scenario: lambda constant must be positive (lambda* = 0 is degenerate)");
  const long fits = static_cast<long>(n_grid.size()) * n_reps;
  if (fits > max_fits) {
    throw UsageError("scenario: " + std::to_string(fits) + " fits exceed the cap of " + std::to_string(max_fits));
  }
  if (mu_rule.drifting ? mu_rule.mu_scale.size() != f.dim : mu_rule.mu_value.size() != f.dim) {
    throw UsageError("scenario: mu rule dimension differs from f");
  }
  if (!sigma_rule.drifting && f.family != FamilyTag::gaussian_location_fixed_sigma &&
      (sigma_rule.sigma_value.rows() != f.dim || sigma_rule.sigma_value.cols() != f.dim)) {
    throw UsageError("scenario: sigma rule dimension differs from f");
  }
  const DeviatedModel m = model();
  for (int n : n_grid) {
    const ParamG g = g_star(n);
    if (!(g.lambda > 0.0 && g.lambda <= 1.0)) {
      throw UsageError("scenario: lambda*(" + std::to_string(n) + ") = " + std::to_string(g.lambda) +
                       " is outside (0, 1]");
    }
    m.check(g);
  }
}

void to_json(json& j, const ScenarioSpec& s) {
  j = json{{"name", s.name},
           {"h0", kernel_json(s.h0, true)},
           {"f", kernel_json(s.f, false)},
           {"domain",
            {{"mu_lo", json_io::vector_json(s.domain.lo)},
             {"mu_hi", json_io::vector_json(s.domain.hi)},
             {"eig_lo", s.domain.eig_lo},
             {"eig_hi", s.domain.eig_hi}}},
           {"g_star",
            {{"lambda_rule", to_string(s.lambda_rule)},
             {"lambda_c", s.lambda_c},
             {"mu", mu_rule_json(s.mu_rule)},
             {"sigma", sigma_rule_json(s.sigma_rule)}}},
           {"n_grid", s.n_grid},
           {"n_reps", s.n_reps},
           {"seed", s.seed},
           {"extra_init_at_anchor", s.extra_init_at_anchor},
           {"max_fits", s.max_fits}};
}

ScenarioSpec scenario_from_json(const json& j) {
  try {
    ScenarioSpec s;
    s.name = j.at("name").get<std::string>();
    s.h0 = kernel_from(j.at("h0"), true);
    s.f = kernel_from(j.at("f"), false);
    if (j.contains("domain")) {
      const auto& d = j.at("domain");
      s.domain.lo = json_io::vector_from(d.at("mu_lo"));
      s.domain.hi = json_io::vector_from(d.at("mu_hi"));
      s.domain.eig_lo = d.at("eig_lo").get<double>();
      s.domain.eig_hi = d.at("eig_hi").get<double>();
    } else {
      s.domain = CompactDomain::box(s.f.dim, -20.0, 20.0, 0.01, 100.0);
    }
    const auto& g = j.at("g_star");
    s.lambda_rule = lambda_rule_from_string(g.at("lambda_rule").get<std::string>());
    s.lambda_c = g.at("lambda_c").get<double>();
    s.mu_rule = mu_rule_from(g.at("mu"));
    s.sigma_rule = sigma_rule_from(g.at("sigma"));
    s.n_grid = j.contains("n_grid") ? j.at("n_grid").get<std::vector<int>>() : default_n_grid();
    s.n_reps = j.value("n_reps", 64);
    s.seed = j.value("seed", std::uint64_t{42});
    s.extra_init_at_anchor = j.value("extra_init_at_anchor", false);
    s.max_fits = j.value("max_fits", 20000L);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw UsageError(std::string("scenario file: ") + e.what());
  }
}

std::vector<int> default_n_grid() {
  std::vector<int> grid;
  for (int i = 0; i < 8; ++i) grid.push_back(static_cast<int>(std::lround(std::pow(10.0, 2.0 + 2.0 * i / 7.0))));
  return grid;
}

std::vector<std::string> scenario_preset_names() {
  return {"case-i", "case-ii", "case-iii", "case-iv", "nondist-sigma-drift", "nondist-mu-drift"};
}

ScenarioSpec scenario_preset(const std::string& name) {
  ScenarioSpec s;
  s.name = name;
  s.n_grid = default_n_grid();
  s.f.family = FamilyTag::gaussian_location_scale;
  if (name.rfind("case-", 0) == 0) {
    s.h0.family = FamilyTag::cauchy_standard;
    s.h0.point = ParamPoint::standard(1);
    s.lambda_c = 0.5;
    s.mu_rule.mu_value = Vector::Constant(1, 2.5);
    s.sigma_rule.sigma_value = Matrix::Constant(1, 1, 0.25);
    if (name == "case-i") {
      s.lambda_rule = LambdaRule::constant;
    } else if (name == "case-ii") {
      s.lambda_rule = LambdaRule::n_pow_quarter;
    } else if (name == "case-iii") {
      s.lambda_rule = LambdaRule::n_pow_three_eighths;
    } else if (name == "case-iv") {
      s.lambda_rule = LambdaRule::n_pow_half;
    } else {
      throw UsageError("unknown scenario preset '" + name + "'");
    }
    return s;
  }
  s.h0.family = FamilyTag::gaussian_location_scale;
  s.h0.point = ParamPoint::standard(1);
  s.lambda_c = 0.25;
  s.extra_init_at_anchor = true;
  if (name == "nondist-sigma-drift") {
    s.mu_rule.mu_value = Vector::Zero(1);
    s.sigma_rule.drifting = true;
    s.sigma_rule.sigma_scale = 1.0;
  } else if (name == "nondist-mu-drift") {
    s.mu_rule.drifting = true;
    s.mu_rule.mu_scale = Vector::Ones(1);
    s.sigma_rule.sigma_value = Matrix::Identity(1, 1);
  } else {
    throw UsageError("unknown scenario preset '" + name + "'");
  }
  return s;
}

// ---------------------------------------------------------------- cells

json em_config_json(const EmConfig& em) {
  json j{{"max_iter", em.max_iter},   {"tol_loglik", em.tol_loglik},
         {"tol_param", em.tol_param}, {"n_restarts", em.n_restarts},
         {"lambda_init_grid", em.lambda_init_grid}, {"eig_floor", em.eig_floor}};
  if (em.m_step_mode) {
    j["m_step_mode"] = *em.m_step_mode == MStepMode::closed_form_gaussian ? "closed_form_gaussian" : "numeric_ascent";
  }
  json inits = json::array();
  for (const ParamG& g : em.extra_inits) inits.push_back(g);
  j["extra_inits"] = inits;
  return j;
}

std::string scenario_hash(const ScenarioSpec& spec, const EmConfig& em) {
  const std::string text = json{{"scenario", spec}, {"em", em_config_json(em)}}.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

RngStream cell_rng(const ScenarioSpec& spec, int n, int rep) {
  return RngStream(spec.seed).split(static_cast<std::uint64_t>(n)).split(static_cast<std::uint64_t>(rep));
}

EmConfig study_em(const ScenarioSpec& spec, const EmConfig& em) {
  EmConfig out = em;
  if (spec.extra_init_at_anchor) out.extra_inits.push_back(ParamG(0.5, spec.h0.point));
  return out;
}

CellResult run_cell(const ScenarioSpec& spec, const DeviatedModel& m, const EmConfig& em, int n, int rep) {
  CellResult c;
  c.n = n;
  c.rep = rep;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const RngStream rng = cell_rng(spec, n, rep);
    const ParamG truth = spec.g_star(n);
    RngStream data_rng = rng.split(0);
    const Dataset ds = sample_model(m, truth, n, data_rng);
    const FitResult fit = em_fit(m, ds.data, em, rng.split(1));
    c.g_hat = fit.g_hat;
    c.loglik = fit.loglik;
    c.converged = fit.converged;
    c.n_iter = fit.n_iter;
    c.max_descent = fit.max_descent;
    c.err_lambda = std::abs(fit.g_hat.lambda - truth.lambda);
    c.err_mu = (fit.g_hat.point.mu - truth.point.mu).norm();
    c.err_sigma = (fit.g_hat.point.sigma - truth.point.sigma).norm();
    RngStream mc = rng.split(2);
    c.hellinger = hellinger(m, fit.g_hat, truth, QuadratureSpec{}, &mc).value;
    c.ok = true;
  } catch (const Error& e) {
    c.ok = false;
    c.error = e.code() + ": " + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

json cell_json(const CellResult& c) {
  json j{{"n", c.n}, {"rep", c.rep}, {"ok", c.ok}, {"seconds", c.seconds}};
  if (!c.ok) {
    j["error"] = c.error;
    return j;
  }
  j["g_hat"] = c.g_hat;
  j["err_lambda"] = c.err_lambda;
  j["err_mu"] = c.err_mu;
  j["err_sigma"] = c.err_sigma;
  j["hellinger"] = c.hellinger;
  j["loglik"] = c.loglik;
  j["converged"] = c.converged;
  j["n_iter"] = c.n_iter;
  j["max_descent"] = c.max_descent;
  return j;
}

std::optional<CellResult> cell_from_json(const json& j) {
  try {
    CellResult c;
    c.n = j.at("n").get<int>();
    c.rep = j.at("rep").get<int>();
    c.ok = j.at("ok").get<bool>();
    c.seconds = j.value("seconds", 0.0);
    if (!c.ok) {
      c.error = j.at("error").get<std::string>();
      return c;
    }
    const auto& g = j.at("g_hat");
    c.g_hat = ParamG(g.at("lambda").get<double>(),
                     ParamPoint(json_io::vector_from(g.at("mu")), json_io::matrix_from(g.at("sigma"))));
    c.err_lambda = j.at("err_lambda").get<double>();
    c.err_mu = j.at("err_mu").get<double>();
    c.err_sigma = j.at("err_sigma").get<double>();
    c.hellinger = j.at("hellinger").get<double>();
    c.loglik = j.at("loglik").get<double>();
    c.converged = j.at("converged").get<bool>();
    c.n_iter = j.at("n_iter").get<int>();
    c.max_descent = j.at("max_descent").get<double>();
    return c;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

fs::path cell_path(const fs::path& dir, int n, int rep) {
  return dir / ("n" + std::to_string(n) + "_r" + std::to_string(rep) + ".json");
}

std::optional<CellResult> load_cell(const fs::path& path, int n, int rep) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  auto c = cell_from_json(j);
  if (!c || c->n != n || c->rep != rep) return std::nullopt;
  return c;
}

void store_cell(const fs::path& path, const CellResult& c) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write cache file " + tmp.string());
    out << cell_json(c).dump() << '\n';
  }
  fs::rename(tmp, path);
}

constexpr double kLogFloor = 1e-16;

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

ChannelSummary summarize(const std::string& name, const ScenarioSpec& spec, const std::vector<CellResult>& cells,
                         double CellResult::*field) {
  ChannelSummary s;
  s.name = name;
  std::vector<std::pair<double, double>> points;
  std::vector<double> variances;
  for (int n : spec.n_grid) {
    std::vector<double> logs;
    for (const CellResult& c : cells) {
      if (c.n == n && c.ok) logs.push_back(std::log(std::max(c.*field, kLogFloor)));
    }
    s.n.push_back(n);
    s.n_used.push_back(static_cast<int>(logs.size()));
    if (logs.empty()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      s.mean_log.push_back(nan);
      s.q25.push_back(nan);
      s.q50.push_back(nan);
      s.q75.push_back(nan);
      continue;
    }
    const double mean = std::accumulate(logs.begin(), logs.end(), 0.0) / static_cast<double>(logs.size());
    double var = 0.0;
    for (double v : logs) var += (v - mean) * (v - mean);
    var = logs.size() > 1 ? var / static_cast<double>(logs.size() - 1) : 0.0;
    std::sort(logs.begin(), logs.end());
    s.mean_log.push_back(mean);
    s.q25.push_back(quantile_sorted(logs, 0.25));
    s.q50.push_back(quantile_sorted(logs, 0.5));
    s.q75.push_back(quantile_sorted(logs, 0.75));
    points.emplace_back(static_cast<double>(n), mean);
    variances.push_back(var / static_cast<double>(logs.size()));
  }
  if (points.size() >= 4) {
    s.fit = fit_loglog_slope(points);
    double xbar = 0.0;
    for (const auto& p : points) xbar += std::log(p.first);
    xbar /= static_cast<double>(points.size());
    double sxx = 0.0;
    for (const auto& p : points) sxx += (std::log(p.first) - xbar) * (std::log(p.first) - xbar);
    double v = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const double c = (std::log(points[k].first) - xbar) / sxx;
      v += c * c * variances[k];
    }
    s.slope_std_err_replicate = std::sqrt(v);
  }
  return s;
}

RateStudyReport run_study(const ScenarioSpec& spec, const EmConfig& em_in, const StudyOptions& opts,
                          const std::string& kind) {
  spec.validate();
  em_in.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const DeviatedModel m = spec.model();
  const EmConfig em = study_em(spec, em_in);

  RateStudyReport r;
  r.spec = spec;
  r.kind = kind;
  r.scenario_hash = scenario_hash(spec, em_in);
  r.plot_channels = kind == "density" ? std::vector<std::string>{"hellinger"}
                                      : std::vector<std::string>{"lambda", "mu", "sigma"};

  std::vector<std::pair<int, int>> keys;
  for (int n : spec.n_grid) {
    for (int rep = 0; rep < spec.n_reps; ++rep) keys.emplace_back(n, rep);
  }
  fs::path cache;
  if (!opts.cache_dir.empty()) {
    cache = opts.cache_dir / r.scenario_hash;
    std::error_code ec;
    fs::create_directories(cache, ec);
    if (ec) throw IoError("cannot create cache directory " + cache.string() + ": " + ec.message());
  }
  r.cells.resize(keys.size());
  std::vector<char> fresh(keys.size(), 0);
  parallel_for(keys.size(), opts.threads, [&](std::size_t i) {
    const auto [n, rep] = keys[i];
    if (!cache.empty()) {
      if (auto hit = load_cell(cell_path(cache, n, rep), n, rep)) {
        r.cells[i] = std::move(*hit);
        return;
      }
    }
    r.cells[i] = run_cell(spec, m, em, n, rep);
    fresh[i] = 1;
    if (!cache.empty()) store_cell(cell_path(cache, n, rep), r.cells[i]);
  });
  r.n_new_fits = std::count(fresh.begin(), fresh.end(), 1);
  r.n_cached = static_cast<long>(keys.size()) - r.n_new_fits;
  r.n_failed = static_cast<int>(std::count_if(r.cells.begin(), r.cells.end(), [](const CellResult& c) { return !c.ok; }));
  if (r.n_failed > 0 && 20L * r.n_failed >= static_cast<long>(r.cells.size())) {
    const auto first = std::find_if(r.cells.begin(), r.cells.end(), [](const CellResult& c) { return !c.ok; });
    throw EstimationError("rate study: " + std::to_string(r.n_failed) + " of " + std::to_string(r.cells.size()) +
                          " cells failed (first: " + first->error + ")");
  }
  r.channels.push_back(summarize("lambda", spec, r.cells, &CellResult::err_lambda));
  r.channels.push_back(summarize("mu", spec, r.cells, &CellResult::err_mu));
  r.channels.push_back(summarize("sigma", spec, r.cells, &CellResult::err_sigma));
  r.channels.push_back(summarize("hellinger", spec, r.cells, &CellResult::hellinger));
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

Dataset cell_dataset(const ScenarioSpec& spec, int n, int rep) {
  RngStream data_rng = cell_rng(spec, n, rep).split(0);
  return sample_model(spec.model(), spec.g_star(n), n, data_rng);
}

RateStudyReport run_rate_study(const ScenarioSpec& spec, const EmConfig& em, const StudyOptions& opts) {
  return run_study(spec, em, opts, "parameter");
}

RateStudyReport run_density_rate_study(const ScenarioSpec& spec, const EmConfig& em, const StudyOptions& opts) {
  return run_study(spec, em, opts, "density");
}

const ChannelSummary& RateStudyReport::channel(const std::string& name) const {
  for (const auto& c : channels) {
    if (c.name == name) return c;
  }
  throw UsageError("report has no channel '" + name + "'");
}

SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 4) throw UsageError("fit_loglog_slope: need at least 4 points");
  std::vector<double> x, y;
  for (const auto& [n, v] : points) {
    if (!(n > 0.0) || !std::isfinite(v)) throw UsageError("fit_loglog_slope: need positive n and finite values");
    x.push_back(std::log(n));
    y.push_back(v);
  }
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw UsageError("fit_loglog_slope: sample sizes must be distinct");
  }
  const double k = static_cast<double>(x.size());
  const double xbar = std::accumulate(x.begin(), x.end(), 0.0) / k;
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - xbar) * (x[i] - xbar);
    sxy += (x[i] - xbar) * (y[i] - ybar);
  }
  if (!(sxx > 0.0)) throw UsageError("fit_loglog_slope: degenerate abscissae");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = ybar - f.slope * xbar;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - f.intercept - f.slope * x[i];
    ssr += e * e;
  }
  f.slope_std_err = std::sqrt(ssr / (k - 2.0) / sxx);
  return f;
}

// ---------------------------------------------------------------- outputs

namespace {

json doubles_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return a;
}

}  // namespace

void to_json(json& j, const RateStudyReport& r) {
  json channels = json::object();
  for (const ChannelSummary& c : r.channels) {
    json cj{{"n", c.n},
            {"n_used", c.n_used},
            {"mean_log", doubles_json(c.mean_log)},
            {"q25_log", doubles_json(c.q25)},
            {"median_log", doubles_json(c.q50)},
            {"q75_log", doubles_json(c.q75)}};
    if (c.fit) {
      cj["slope"] = c.fit->slope;
      cj["intercept"] = c.fit->intercept;
      cj["slope_std_err"] = c.fit->slope_std_err;
      cj["slope_std_err_replicate"] = c.slope_std_err_replicate;
    }
    channels[c.name] = std::move(cj);
  }
  double max_descent = 0.0;
  for (const CellResult& c : r.cells) max_descent = std::max(max_descent, c.max_descent);
  j = json{{"scenario", r.spec},
           {"kind", r.kind},
           {"scenario_hash", r.scenario_hash},
           {"n_cells", r.cells.size()},
           {"n_failed", r.n_failed},
           {"max_loglik_descent", max_descent},
           {"log_error_floor", kLogFloor},
           {"channels", std::move(channels)}};
}

json metadata_json(const RateStudyReport& r, unsigned threads) {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  double cell_seconds = 0.0;
  for (const CellResult& c : r.cells) cell_seconds += c.seconds;
  return json{{"scenario", r.spec.name},
              {"scenario_hash", r.scenario_hash},
              {"seed", r.spec.seed},
              {"kind", r.kind},
              {"wall_seconds", r.wall_seconds},
              {"sum_cell_seconds", cell_seconds},
              {"threads", threads},
              {"new_fits", r.n_new_fits},
              {"cached_cells", r.n_cached},
              {"extra_init_at_anchor", r.spec.extra_init_at_anchor},
              {"finished_unix_time", secs}};
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_cells_csv(const RateStudyReport& r, const fs::path& path) {
  const auto d = r.spec.f.dim;
  std::ofstream out = open_out(path);
  out << "n,rep,lambda_hat";
  for (int i = 1; i <= d; ++i) out << ",mu_hat_" << i;
  for (int i = 1; i <= d; ++i) {
    for (int k = i; k <= d; ++k) out << ",sigma_hat_" << i << k;
  }
  out << ",err_lambda,err_mu,err_sigma,hellinger,loglik,converged,n_iter\n";
  for (const CellResult& c : r.cells) {
    out << c.n << ',' << c.rep;
    if (!c.ok) {
      const int blanks = 1 + d + d * (d + 1) / 2 + 7;
      for (int i = 0; i < blanks; ++i) out << ',';
      out << '\n';
      continue;
    }
    out << ',' << num(c.g_hat.lambda);
    for (Eigen::Index i = 0; i < d; ++i) out << ',' << num(c.g_hat.point.mu(i));
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index k = i; k < d; ++k) out << ',' << num(c.g_hat.point.sigma(i, k));
    }
    out << ',' << num(c.err_lambda) << ',' << num(c.err_mu) << ',' << num(c.err_sigma) << ',' << num(c.hellinger)
        << ',' << num(c.loglik) << ',' << (c.converged ? 1 : 0) << ',' << c.n_iter << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_timing_csv(const RateStudyReport& r, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "n,rep,seconds,ok,error\n";
  for (const CellResult& c : r.cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << c.n << ',' << c.rep << ',' << num(c.seconds) << ',' << (c.ok ? 1 : 0) << ',' << err << '\n';
  }
}

// ---------------------------------------------------------------- plots

namespace {

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Plot frame with linear axes mapping data to pixels.
struct Frame {
  double width = 640, height = 420;
  double left = 70, right = 20, top = 40, bottom = 55;
  double x0, x1, y0, y1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }

  void header(std::ostream& os, const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
       << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    const double l = left, r = width - right, t = top, b = height - bottom;
    os << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << r - l << "\" height=\"" << b - t
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
      os << "<line x1=\"" << fmt(px(xv), 1) << "\" y1=\"" << b << "\" x2=\"" << fmt(px(xv), 1) << "\" y2=\"" << b + 5
         << "\" stroke=\"#444\"/>\n"
         << "<text x=\"" << fmt(px(xv), 1) << "\" y=\"" << b + 18 << "\" text-anchor=\"middle\">" << fmt(xv, 2)
         << "</text>\n"
         << "<line x1=\"" << l - 5 << "\" y1=\"" << fmt(py(yv), 1) << "\" x2=\"" << l << "\" y2=\"" << fmt(py(yv), 1)
         << "\" stroke=\"#444\"/>\n"
         << "<text x=\"" << l - 8 << "\" y=\"" << fmt(py(yv) + 4, 1) << "\" text-anchor=\"end\">" << fmt(yv, 2)
         << "</text>\n";
    }
    os << "<text x=\"" << (l + r) / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">" << xml_escape(xlabel)
       << "</text>\n"
       << "<text x=\"16\" y=\"" << (t + b) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (t + b) / 2
       << ")\">" << xml_escape(ylabel) << "</text>\n";
  }
};

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.06 * (hi - lo);
  lo -= pad;
  hi += pad;
}

std::string channel_label(const std::string& name) {
  if (name == "lambda") return "log |lambda_hat - lambda*|";
  if (name == "mu") return "log |mu_hat - mu*|";
  if (name == "sigma") return "log |sigma2_hat - sigma2*|";
  if (name == "hellinger") return "log h(p_hat, p*)";
  return "log error (" + name + ")";
}

void write_channel_svg(const RateStudyReport& r, const ChannelSummary& c, const fs::path& path) {
  Frame fr;
  fr.x0 = std::log(static_cast<double>(c.n.front()));
  fr.x1 = std::log(static_cast<double>(c.n.back()));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < c.n.size(); ++k) {
    if (!std::isfinite(c.mean_log[k])) continue;
    lo = std::min({lo, c.q25[k], c.mean_log[k]});
    hi = std::max({hi, c.q75[k], c.mean_log[k]});
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  pad_range(fr.x0, fr.x1);
  pad_range(lo, hi);
  fr.y0 = lo;
  fr.y1 = hi;
  std::ofstream out = open_out(path);
  fr.header(out, r.spec.name + ": " + channel_label(c.name) + " vs log n", "log n", channel_label(c.name));
  for (std::size_t k = 0; k < c.n.size(); ++k) {
    if (!std::isfinite(c.mean_log[k])) continue;
    const double x = fr.px(std::log(static_cast<double>(c.n[k])));
    out << "<line x1=\"" << fmt(x, 1) << "\" y1=\"" << fmt(fr.py(c.q25[k]), 1) << "\" x2=\"" << fmt(x, 1)
        << "\" y2=\"" << fmt(fr.py(c.q75[k]), 1) << "\" stroke=\"#e6b800\" stroke-width=\"6\" opacity=\"0.8\"/>\n";
    out << "<circle cx=\"" << fmt(x, 1) << "\" cy=\"" << fmt(fr.py(c.mean_log[k]), 1)
        << "\" r=\"4\" fill=\"#1f5fbf\"/>\n";
  }
  if (c.fit) {
    const double xa = std::log(static_cast<double>(c.n.front())), xb = std::log(static_cast<double>(c.n.back()));
    out << "<line x1=\"" << fmt(fr.px(xa), 1) << "\" y1=\"" << fmt(fr.py(c.fit->intercept + c.fit->slope * xa), 1)
        << "\" x2=\"" << fmt(fr.px(xb), 1) << "\" y2=\"" << fmt(fr.py(c.fit->intercept + c.fit->slope * xb), 1)
        << "\" stroke=\"#c0392b\" stroke-width=\"1.5\"/>\n";
    out << "<text x=\"" << fr.left + 10 << "\" y=\"" << fr.top + 18 << "\" fill=\"#c0392b\">slope = "
        << fmt(c.fit->slope) << " (se " << fmt(c.fit->slope_std_err) << ")</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("failed writing " + path.string());
}

void write_histogram_svg(const RateStudyReport& r, const fs::path& path) {
  const int n = r.spec.n_grid.back();
  const Dataset ds = cell_dataset(r.spec, n, 0);
  std::vector<double> x(ds.data.col(0).begin(), ds.data.col(0).end());
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  // Trim heavy tails so the bulk stays readable.
  const double lo = quantile_sorted(sorted, 0.005), hi = quantile_sorted(sorted, 0.995);
  constexpr int kBins = 60;
  std::vector<double> counts(kBins, 0.0);
  const double width = (hi - lo) / kBins;
  for (double v : x) {
    if (v < lo || v > hi || !(width > 0.0)) continue;
    const int b = std::min(kBins - 1, static_cast<int>((v - lo) / width));
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(x.size()) * width;
  const DeviatedModel m = r.spec.model();
  const ParamG truth = r.spec.g_star(n);
  std::vector<double> curve;
  const int kCurve = 200;
  const bool one_d = r.spec.f.dim == 1;
  double ymax = *std::max_element(counts.begin(), counts.end());
  if (one_d) {
    const PreparedModel pm(m, truth);
    for (int i = 0; i <= kCurve; ++i) {
      Vector xv(1);
      xv(0) = lo + (hi - lo) * i / kCurve;
      curve.push_back(pm.pdf(xv));
      ymax = std::max(ymax, curve.back());
    }
  }
  Frame fr;
  fr.x0 = lo;
  fr.x1 = hi;
  fr.y0 = 0.0;
  fr.y1 = ymax > 0.0 ? 1.05 * ymax : 1.0;
  std::ofstream out = open_out(path);
  fr.header(out, r.spec.name + ": sample of n = " + std::to_string(n), one_d ? "x" : "x1", "density");
  for (int b = 0; b < kBins; ++b) {
    const double xa = fr.px(lo + b * width), xb = fr.px(lo + (b + 1) * width);
    const double top = fr.py(counts[static_cast<std::size_t>(b)]);
    out << "<rect x=\"" << fmt(xa, 2) << "\" y=\"" << fmt(top, 2) << "\" width=\"" << fmt(xb - xa, 2)
        << "\" height=\"" << fmt(fr.py(0.0) - top, 2) << "\" fill=\"#8fb3e0\" stroke=\"#5a82b5\" stroke-width=\"0.5\"/>\n";
  }
  if (one_d) {
    out << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
    for (int i = 0; i <= kCurve; ++i) {
      out << fmt(fr.px(lo + (hi - lo) * i / kCurve), 2) << ',' << fmt(fr.py(curve[static_cast<std::size_t>(i)]), 2)
          << (i < kCurve ? " " : "");
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::vector<fs::path> emit_plots(const RateStudyReport& r, const fs::path& out_dir) {
  if (r.cells.empty() || r.channels.empty()) throw UsageError("emit_plots: report is empty");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> paths;
  paths.push_back(out_dir / "histogram.svg");
  write_histogram_svg(r, paths.back());
  for (const std::string& name : r.plot_channels) {
    paths.push_back(out_dir / (name + ".svg"));
    write_channel_svg(r, r.channel(name), paths.back());
  }
  return paths;
}

}  // namespace deviate
