// deviate: command-line front end for the deviated-model toolkit.

#include "deviate/bounds.hpp"
#include "deviate/distances.hpp"
#include "deviate/estimation.hpp"
#include "deviate/experiments.hpp"
#include "deviate/identifiability.hpp"
#include "deviate/losses.hpp"
#include "deviate/parallel.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deviate;

namespace {

struct Globals {
  std::uint64_t seed = 42;
  std::string out;
  std::string threads = "auto";
  std::string format = "json";

  unsigned thread_count() const {
    if (threads == "auto") return resolve_threads(0);
    try {
      const int t = std::stoi(threads);
      if (t < 1) throw UsageError("--threads must be a positive count or 'auto'");
      return static_cast<unsigned>(t);
    } catch (const std::logic_error&) {
      throw UsageError("--threads must be a positive count or 'auto'");
    }
  }

  fs::path out_dir() const {
    fs::path p(out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
    return p;
  }
};

/// Univariate model flags shared by simulate, fit and check-identifiability.
struct ModelFlags {
  std::string preset;
  std::string h0 = "cauchy_standard";
  double h0_mu = 0.0;
  double h0_var = 1.0;
  std::string f = "gaussian_location_scale";
  double dof = 3.0;
  double fixed_var = 1.0;
  double mu_lo = -20.0, mu_hi = 20.0, eig_lo = 0.01, eig_hi = 100.0;

  void add(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Take the model from a rates preset or scenario file (overrides the flags below)");
    cmd->add_option("--h0", h0, "Null density family")->capture_default_str();
    cmd->add_option("--h0-mu", h0_mu, "Location of h0")->capture_default_str();
    cmd->add_option("--h0-var", h0_var, "Scale (variance) of h0")->capture_default_str();
    cmd->add_option("--f", f, "Kernel family of the deviating component")->capture_default_str();
    cmd->add_option("--dof", dof, "Degrees of freedom for student_t_fixed_dof kernels")->capture_default_str();
    cmd->add_option("--fixed-var", fixed_var, "Variance of gaussian_location_fixed_sigma kernels")->capture_default_str();
    cmd->add_option("--mu-lo", mu_lo, "Lower bound of the location domain")->capture_default_str();
    cmd->add_option("--mu-hi", mu_hi, "Upper bound of the location domain")->capture_default_str();
    cmd->add_option("--eig-lo", eig_lo, "Smallest allowed variance")->capture_default_str();
    cmd->add_option("--eig-hi", eig_hi, "Largest allowed variance")->capture_default_str();
  }

  KernelFamily family(const std::string& name) const {
    switch (family_tag_from_string(name)) {
      case FamilyTag::gaussian_location_scale: return KernelFamily::gaussian(1);
      case FamilyTag::gaussian_location_fixed_sigma:
        return KernelFamily::gaussian_location(Matrix::Constant(1, 1, fixed_var));
      case FamilyTag::student_t_fixed_dof: return KernelFamily::student_t(1, dof);
      case FamilyTag::cauchy_standard: return KernelFamily::cauchy(1);
    }
    throw UsageError("unknown family " + name);
  }

  DeviatedModel model() const {
    if (!preset.empty()) return load_scenario(preset).model();
    return DeviatedModel(family(h0), ParamPoint::scalar(h0_mu, h0_var), family(f),
                         CompactDomain::box(1, mu_lo, mu_hi, eig_lo, eig_hi));
  }

  static ScenarioSpec load_scenario(const std::string& name_or_path) {
    for (const auto& p : scenario_preset_names()) {
      if (p == name_or_path) return scenario_preset(p);
    }
    std::ifstream in(name_or_path);
    if (!in) throw UsageError("'" + name_or_path + "' is neither a preset nor a readable scenario file");
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw UsageError("scenario file " + name_or_path + " is not valid JSON");
    return scenario_from_json(j);
  }
};

/// "lambda,mu,var" -> ParamG.
ParamG parse_triple(const std::string& text, const std::string& flag) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw UsageError(flag + ": '" + item + "' is not a number");
    }
  }
  if (v.size() != 3) throw UsageError(flag + " expects lambda,mu,var");
  return ParamG::scalar(v[0], v[1], v[2]);
}

ParamPoint parse_pair(const std::string& text, const std::string& flag) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError(flag + " expects mu,var");
  try {
    return ParamPoint::scalar(std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1)));
  } catch (const std::logic_error&) {
    throw UsageError(flag + ": expected two numbers");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string csv_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ------------------------------------------------------------ simulate

struct SimulateArgs {
  ModelFlags model;
  std::string g = "0.5,2.5,0.25";
  long n = 1000;
  std::string output = "dataset.csv";
};

void cmd_simulate(const Globals& gl, const SimulateArgs& a) {
  const DeviatedModel m = a.model.model();
  const ParamG g = parse_triple(a.g, "--g");
  if (a.n < 1) throw UsageError("--n must be positive");
  RngStream rng(gl.seed);
  const Dataset ds = sample_model(m, g, a.n, rng);
  const fs::path path = gl.out_dir() / a.output;
  write_dataset_csv(ds, path);
  std::cout << path.string() << '\n';
}

// ------------------------------------------------------------ fit

struct FitArgs {
  ModelFlags model;
  std::string data;
  int restarts = 8;
  int max_iter = 2000;
  double tol = 1e-10;
  std::string output = "fit.json";
};

void cmd_fit(const Globals& gl, const FitArgs& a) {
  const DeviatedModel m = a.model.model();
  const Dataset ds = read_dataset_csv(a.data);
  EmConfig cfg;
  cfg.n_restarts = a.restarts;
  cfg.max_iter = a.max_iter;
  cfg.tol_loglik = a.tol;
  const FitResult r = em_fit(m, ds.data, cfg, RngStream(gl.seed));
  json j = r;
  j["restart_logliks"] = r.restart_logliks;
  j["n"] = ds.data.rows();
  write_text(gl.out_dir() / a.output, j.dump(2) + "\n");
  if (gl.format == "csv") {
    std::cout << "lambda,mu,sigma,loglik,n_iter,converged\n"
              << csv_num(r.g_hat.lambda) << ',' << csv_num(r.g_hat.point.mu(0)) << ','
              << csv_num(r.g_hat.point.sigma(0, 0)) << ',' << csv_num(r.loglik) << ',' << r.n_iter << ','
              << (r.converged ? 1 : 0) << '\n';
  } else {
    std::cout << j.dump(2) << '\n';
  }
}

// ------------------------------------------------------------ rates

struct RatesArgs {
  std::string scenario;
  std::string dump_preset;
  int reps = 0;
  bool no_cache = false;
};

void cmd_rates(const Globals& gl, const RatesArgs& a) {
  if (!a.dump_preset.empty()) {
    std::cout << json(scenario_preset(a.dump_preset)).dump(2) << '\n';
    return;
  }
  if (a.scenario.empty()) throw UsageError("rates: give a preset name or scenario file (or --dump-preset)");
  ScenarioSpec spec = ModelFlags::load_scenario(a.scenario);
  spec.seed = gl.seed;
  if (a.reps > 0) spec.n_reps = a.reps;
  spec.validate();
  const fs::path dir = gl.out_dir() / ("scenario-" + spec.name);
  fs::create_directories(dir);
  StudyOptions opts;
  opts.threads = gl.thread_count();
  if (!a.no_cache) opts.cache_dir = dir / "cache";
  const EmConfig em;
  const RateStudyReport params = run_rate_study(spec, em, opts);
  // Same cells, so the density view needs no new fits.
  RateStudyReport density = params;
  density.kind = "density";
  density.plot_channels = {"hellinger"};
  write_cells_csv(params, dir / "cells.csv");
  write_timing_csv(params, dir / "timing.csv");
  write_text(dir / "summary.json", json(params).dump(2) + "\n");
  json meta = metadata_json(params, opts.threads);
  meta["em"] = em_config_json(em);
  write_text(dir / "metadata.json", meta.dump(2) + "\n");
  emit_plots(params, dir);
  emit_plots(density, dir);
  std::cout << "scenario " << spec.name << " (" << params.cells.size() << " cells, " << params.n_new_fits
            << " new fits, " << params.n_failed << " failed)\n";
  for (const ChannelSummary& c : params.channels) {
    if (!c.fit) continue;
    std::cout << "  " << std::left << std::setw(10) << c.name << " slope " << std::fixed << std::setprecision(3)
              << std::setw(7) << c.fit->slope << " se " << c.fit->slope_std_err << '\n';
  }
  std::cout << dir.string() << '\n';
}

// ------------------------------------------------------------ verify-bounds

struct BoundsArgs {
  std::string preset;
  int pairs = 200;
  std::vector<double> radii{0.5, 0.2, 0.05};
};

void cmd_verify_bounds(const Globals& gl, const BoundsArgs& a) {
  BoundPreset p = bound_preset(a.preset);
  p.sampler.radii = a.radii;
  BoundProbeReport r = probe_bound(p.model, p.loss, p.sampler, a.pairs, RngStream(gl.seed), gl.thread_count());
  r.preset = p.name;
  const json j = r;
  write_text(gl.out_dir() / ("bounds-" + p.name + ".json"), j.dump(2) + "\n");
  if (gl.format == "json") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::cout << "radius,n_pairs,n_excluded,min_ratio,median_ratio,max_ratio\n";
  for (const RadiusStats& s : r.radii) {
    std::cout << csv_num(s.radius) << ',' << s.n_pairs << ',' << s.n_excluded << ',' << csv_num(s.min_ratio) << ','
              << csv_num(s.quantiles.size() > 2 ? s.quantiles[2] : 0.0) << ',' << csv_num(s.max_ratio) << '\n';
  }
}

// ------------------------------------------------------------ check-identifiability

struct IdentArgs {
  ModelFlags model;
  std::string order = "first";
  std::vector<std::string> points{"2.5,0.25"};
  double threshold = 1e-6;
  int grid_points = 512;
};

void cmd_check_identifiability(const Globals& gl, const IdentArgs& a) {
  const DeviatedModel m = a.model.model();
  std::vector<ParamPoint> pts;
  for (const auto& p : a.points) pts.push_back(parse_pair(p, "--point"));
  std::vector<std::pair<KernelFamily, ParamPoint>> comps{{m.h0_family, m.h0_point}};
  for (const auto& p : pts) comps.emplace_back(m.f, p);
  const Matrix grid = default_grid(comps, a.grid_points);
  RankTestReport r;
  if (a.order == "first") {
    if (pts.size() != 1) throw UsageError("--order first takes exactly one --point");
    r = check_first_order_distinguishability(m, pts.front(), grid, a.threshold);
  } else if (a.order == "second") {
    r = check_second_order_identifiability(m.f, pts, grid, a.threshold);
  } else {
    throw UsageError("--order must be 'first' or 'second'");
  }
  json j = r;
  j["order"] = a.order;
  write_text(gl.out_dir() / ("identifiability-" + a.order + ".json"), j.dump(2) + "\n");
  if (gl.format == "csv") {
    std::cout << "verdict,smallest_singular_value,threshold,condition_number\n"
              << to_string(r.verdict) << ',' << csv_num(r.smallest_singular_value) << ',' << csv_num(r.threshold)
              << ',' << csv_num(r.condition_number) << '\n';
  } else {
    std::cout << j.dump(2) << '\n';
  }
}

// ------------------------------------------------------------ losses

struct LossesArgs {
  std::string g = "0.5,0.3,1.2";
  std::string g_star = "0.4,0.1,1.0";
  std::string anchor = "0,1";
  double r = 2.0;
};

void cmd_losses(const Globals& gl, const LossesArgs& a) {
  const ParamG g = parse_triple(a.g, "--g");
  const ParamG gs = parse_triple(a.g_star, "--g-star");
  const LossContext ctx(parse_pair(a.anchor, "--anchor"));
  const std::vector<std::pair<std::string, double>> rows{
      {"K", loss_K(g, gs)},
      {"D", loss_D(g, gs, ctx)},
      {"Dbar", loss_Dbar(g, gs, ctx)},
      {"Q", loss_Q(g, gs, ctx)},
      {"Qprime", loss_Qprime(g, gs, ctx)},
      {"D_r", loss_Dr(g, gs, ctx, a.r)},
      {"W_r^r", wasserstein_two_atom(g, gs, ctx, a.r)},
  };
  json j = json::object();
  std::ostringstream csv;
  csv << "loss,value\n";
  for (const auto& [name, value] : rows) {
    j[name] = value;
    csv << name << ',' << csv_num(value) << '\n';
  }
  j["r"] = a.r;
  const fs::path dir = gl.out_dir();
  if (gl.format == "csv") {
    write_text(dir / "losses.csv", csv.str());
    std::cout << csv.str();
  } else {
    write_text(dir / "losses.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deviate: estimation, rate studies and diagnostics for deviated mixture models"};
  app.require_subcommand(1);
  Globals gl;
  if (const char* env = std::getenv("DEVIATE_OUT")) gl.out = env;
  if (gl.out.empty()) gl.out = "deviate-out";
  app.add_option("--seed", gl.seed, "Random seed")->capture_default_str();
  app.add_option("--out", gl.out, "Output directory (default from DEVIATE_OUT, else deviate-out)")->capture_default_str();
  app.add_option("--threads", gl.threads, "Worker threads: a count or 'auto' for all logical cores")
      ->capture_default_str();
  app.add_option("--format", gl.format, "Output format for tables and reports")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  app.fallthrough();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Draw a dataset from the deviated model");
  sim.model.add(c_sim);
  c_sim->add_option("--g", sim.g, "True lambda,mu,var")->capture_default_str();
  c_sim->add_option("--n", sim.n, "Sample size")->capture_default_str();
  c_sim->add_option("--output", sim.output, "File name under --out")->capture_default_str();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Maximum likelihood fit of (lambda, mu, Sigma) by EM");
  fit.model.add(c_fit);
  c_fit->add_option("--data", fit.data, "Dataset CSV (header x1[,label])")->required();
  c_fit->add_option("--restarts", fit.restarts, "Random EM restarts")->capture_default_str();
  c_fit->add_option("--max-iter", fit.max_iter, "EM iteration cap per restart")->capture_default_str();
  c_fit->add_option("--tol", fit.tol, "Relative log-likelihood tolerance")->capture_default_str();
  c_fit->add_option("--output", fit.output, "File name under --out")->capture_default_str();

  RatesArgs rates;
  auto* c_rates = app.add_subcommand("rates", "Run a convergence-rate study and write tables and plots");
  c_rates->add_option("scenario", rates.scenario, "Preset name (" + [] {
    std::string s;
    for (const auto& n : scenario_preset_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }() + ") or scenario JSON file");
  c_rates->add_option("--dump-preset", rates.dump_preset, "Print a preset as an editable scenario file and exit");
  c_rates->add_option("--reps", rates.reps, "Override the number of replications per n (0 keeps the scenario's)")
      ->capture_default_str();
  c_rates->add_flag("--no-cache", rates.no_cache, "Do not read or write per-cell cache files");

  BoundsArgs bounds;
  auto* c_bounds = app.add_subcommand("verify-bounds", "Probe V/loss ratios in shrinking neighbourhoods");
  c_bounds->add_option("preset", bounds.preset, "K-cauchy-gauss, D-gauss-loc, Q-gauss-ls or K-gauss-loc")->required();
  c_bounds->add_option("--pairs", bounds.pairs, "Pairs per radius")->capture_default_str();
  c_bounds->add_option("--radii", bounds.radii, "Neighbourhood radii")->capture_default_str();

  IdentArgs ident;
  auto* c_ident = app.add_subcommand("check-identifiability", "Finite-grid rank tests of distinguishability");
  ident.model.add(c_ident);
  c_ident->add_option("--order", ident.order, "first (h0 vs f and first derivatives) or second (f up to second derivatives)")
      ->capture_default_str();
  c_ident->add_option("--point", ident.points, "Parameter point mu,var (repeatable for --order second)")
      ->capture_default_str();
  c_ident->add_option("--threshold", ident.threshold, "Relative singular-value threshold")->capture_default_str();
  c_ident->add_option("--grid-points", ident.grid_points, "Grid size")->capture_default_str();

  LossesArgs losses;
  auto* c_losses = app.add_subcommand("losses", "Evaluate K, D, Dbar, Q, Q', D_r and W_r^r for two triples");
  c_losses->add_option("--g", losses.g, "First triple lambda,mu,var")->capture_default_str();
  c_losses->add_option("--g-star", losses.g_star, "Second triple lambda,mu,var")->capture_default_str();
  c_losses->add_option("--anchor", losses.anchor, "Anchor mu0,var0")->capture_default_str();
  c_losses->add_option("--r", losses.r, "Order r >= 1 for D_r and W_r^r")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (c_sim->parsed()) cmd_simulate(gl, sim);
    if (c_fit->parsed()) cmd_fit(gl, fit);
    if (c_rates->parsed()) cmd_rates(gl, rates);
    if (c_bounds->parsed()) cmd_verify_bounds(gl, bounds);
    if (c_ident->parsed()) cmd_check_identifiability(gl, ident);
    if (c_losses->parsed()) cmd_losses(gl, losses);
  } catch (const Error& e) {
    std::cerr << "error " << e.code() << ": " << e.what() << '\n';
    return e.code() == "usage_error" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error internal_error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
