#include "deviate/bounds.hpp"

#include "deviate/distances.hpp"
#include "deviate/estimation.hpp"
#include "deviate/identifiability.hpp"
#include "deviate/losses.hpp"
#include "deviate/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace deviate {

std::string to_string(BoundLoss l) {
  switch (l) {
    case BoundLoss::K: return "K";
    case BoundLoss::D: return "D";
    case BoundLoss::Q: return "Q";
  }
  return "unknown";
}

BoundLoss bound_loss_from_string(const std::string& name) {
  if (name == "K") return BoundLoss::K;
  if (name == "D") return BoundLoss::D;
  if (name == "Q") return BoundLoss::Q;
  throw UsageError("unknown loss '" + name + "' (expected K, D or Q)");
}

void PairSampler::validate() const {
  if (radii.empty()) throw UsageError("pair sampler: no radii");
  for (double r : radii) {
    if (!(r > 0.0)) throw UsageError("pair sampler: radii must be positive");
  }
  if (!(lambda_min > 0.0 && lambda_min < 1.0)) throw UsageError("pair sampler: lambda_min must lie in (0,1)");
  if (!(lambda_band >= 0.0)) throw UsageError("pair sampler: lambda_band must be nonnegative");
}

double bound_loss_value(const DeviatedModel& m, BoundLoss loss, const ParamG& g, const ParamG& g_star) {
  const LossContext ctx = LossContext::for_model(m);
  // Losses compare effective points so a fixed Sigma never contributes.
  const ParamG a(g.lambda, m.f.effective(g.point));
  const ParamG b(g_star.lambda, m.f.effective(g_star.point));
  switch (loss) {
    case BoundLoss::K: return loss_K(a, b);
    case BoundLoss::D: return loss_D(a, b, ctx);
    case BoundLoss::Q: return loss_Q(a, b, ctx);
  }
  return 0.0;
}

namespace {

bool h0_is_f_at_anchor(const DeviatedModel& m) {
  if (!m.h0_family.is_gaussian() || !m.f.is_gaussian()) return false;
  const Matrix& h0_sigma = m.h0_family.effective_sigma(m.h0_point);
  const Matrix& f_sigma = m.f.effective_sigma(m.h0_point);
  return (h0_sigma - f_sigma).cwiseAbs().maxCoeff() < 1e-12;
}

}  // namespace

void check_regime(const DeviatedModel& m, BoundLoss loss, const PairSampler& sampler) {
  switch (loss) {
    case BoundLoss::K: {
      if (sampler.comparative) return;
      const ParamPoint& p = sampler.reference.point;
      const Matrix grid = default_grid({{m.h0_family, m.h0_point}, {m.f, p}});
      const RankTestReport r = check_first_order_distinguishability(m, p, grid);
      if (r.verdict != Verdict::distinguishable) {
        throw UsageError("regime mismatch: loss K needs a distinguishable (h0, f) pair, got " + to_string(r.verdict));
      }
      return;
    }
    case BoundLoss::D:
      if (m.f.tag() != FamilyTag::gaussian_location_fixed_sigma || !h0_is_f_at_anchor(m)) {
        throw UsageError("regime mismatch: loss D needs h0 = f(.|mu0,Sigma0) with a fixed-Sigma Gaussian location f");
      }
      return;
    case BoundLoss::Q:
      if (m.f.tag() != FamilyTag::gaussian_location_scale || !h0_is_f_at_anchor(m)) {
        throw UsageError("regime mismatch: loss Q needs h0 = f(.|mu0,Sigma0) with a location-scale Gaussian f");
      }
      return;
  }
}

namespace {

constexpr double kLossFloor = 1e-12;

/// Unit randomness of one side of a pair; scaled by the radius later so all
/// radii share the same draws.
struct UnitDraw {
  double lambda_unit;  // in [-1, 1]
  Vector mu_unit;
  Matrix sigma_unit;  // symmetric, entries in [-1, 1]
};

UnitDraw draw_unit(Eigen::Index d, RngStream& rng) {
  UnitDraw u;
  u.lambda_unit = rng.uniform(-1.0, 1.0);
  u.mu_unit = Vector(d);
  for (Eigen::Index i = 0; i < d; ++i) u.mu_unit(i) = rng.uniform(-1.0, 1.0);
  u.sigma_unit = Matrix(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i; j < d; ++j) u.sigma_unit(i, j) = u.sigma_unit(j, i) = rng.uniform(-1.0, 1.0);
  }
  return u;
}

ParamG realize(const DeviatedModel& m, const PairSampler& s, const UnitDraw& u, double eps) {
  const ParamG& ref = s.reference;
  double lambda = s.regime == PairRegime::shrink_all ? ref.lambda + eps * u.lambda_unit
                                                     : ref.lambda + s.lambda_band * u.lambda_unit;
  lambda = std::clamp(lambda, s.lambda_min, 1.0);
  ParamPoint p(ref.point.mu + eps * u.mu_unit, m.f.has_scale_parameter()
                                                    ? Matrix(ref.point.sigma + eps * u.sigma_unit)
                                                    : m.f.fixed_sigma());
  return {lambda, m.domain.project(p)};
}

double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

BoundProbeReport probe_bound(const DeviatedModel& m, BoundLoss loss, const PairSampler& sampler, int n_pairs,
                             const RngStream& rng, unsigned threads) {
  sampler.validate();
  if (n_pairs < 1) throw UsageError("probe_bound: n_pairs must be positive");
  m.check(sampler.reference);
  check_regime(m, loss, sampler);

  RngStream draws = rng.split(0);
  std::vector<std::pair<UnitDraw, UnitDraw>> units;
  units.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    UnitDraw a = draw_unit(m.dim(), draws);
    UnitDraw b = draw_unit(m.dim(), draws);
    units.emplace_back(std::move(a), std::move(b));
  }

  BoundProbeReport report;
  report.loss_name = to_string(loss);
  report.n_pairs = n_pairs;
  report.min_ratio = std::numeric_limits<double>::infinity();
  report.max_ratio = 0.0;
  for (std::size_t ri = 0; ri < sampler.radii.size(); ++ri) {
    const double eps = sampler.radii[ri];
    struct PairOut {
      ParamG g, g_star;
      double tv = 0.0, loss = 0.0;
    };
    std::vector<PairOut> out(static_cast<std::size_t>(n_pairs));
    parallel_for(out.size(), threads, [&](std::size_t i) {
      PairOut& o = out[i];
      o.g = realize(m, sampler, units[i].first, eps);
      o.g_star = realize(m, sampler, units[i].second, eps);
      o.loss = bound_loss_value(m, loss, o.g, o.g_star);
      RngStream mc = rng.split(1 + ri * static_cast<std::size_t>(n_pairs) + i);
      o.tv = total_variation(m, o.g, o.g_star, QuadratureSpec{}, &mc).value;
    });

    RadiusStats st;
    st.radius = eps;
    st.n_pairs = n_pairs;
    std::vector<double> ratios;
    double best = std::numeric_limits<double>::infinity();
    for (const PairOut& o : out) {
      if (o.loss < kLossFloor) {
        ++st.n_excluded;
        continue;
      }
      const double ratio = o.tv / o.loss;
      ratios.push_back(ratio);
      if (ratio < best) {
        best = ratio;
        st.argmin_g = o.g;
        st.argmin_g_star = o.g_star;
        st.argmin_tv = o.tv;
        st.argmin_loss = o.loss;
      }
    }
    std::sort(ratios.begin(), ratios.end());
    if (!ratios.empty()) {
      st.min_ratio = ratios.front();
      st.max_ratio = ratios.back();
      for (double q : st.quantile_levels) st.quantiles.push_back(quantile_sorted(ratios, q));
      report.min_ratio = std::min(report.min_ratio, st.min_ratio);
      report.max_ratio = std::max(report.max_ratio, st.max_ratio);
    }
    report.radii.push_back(std::move(st));
  }
  return report;
}

void to_json(nlohmann::json& j, const BoundProbeReport& r) {
  nlohmann::json radii = nlohmann::json::array();
  for (const RadiusStats& s : r.radii) {
    nlohmann::json q = nlohmann::json::object();
    for (std::size_t i = 0; i < s.quantiles.size(); ++i) {
      char key[16];
      std::snprintf(key, sizeof key, "q%02d", static_cast<int>(std::lround(100 * s.quantile_levels[i])));
      q[key] = s.quantiles[i];
    }
    radii.push_back({{"radius", s.radius},
                     {"n_pairs", s.n_pairs},
                     {"n_excluded", s.n_excluded},
                     {"min_ratio", s.min_ratio},
                     {"max_ratio", s.max_ratio},
                     {"quantiles", q},
                     {"argmin", {{"g", s.argmin_g}, {"g_star", s.argmin_g_star}, {"tv", s.argmin_tv}, {"loss", s.argmin_loss}}}});
  }
  j = nlohmann::json{{"loss", r.loss_name}, {"preset", r.preset},     {"n_pairs", r.n_pairs},
                     {"radii", radii},      {"min_ratio", r.min_ratio}, {"max_ratio", r.max_ratio}};
}

std::vector<std::string> bound_preset_names() { return {"K-cauchy-gauss", "D-gauss-loc", "Q-gauss-ls", "K-gauss-loc"}; }

BoundPreset bound_preset(const std::string& name) {
  const CompactDomain dom = CompactDomain::box(1, -20.0, 20.0, 0.01, 100.0);
  if (name == "K-cauchy-gauss") {
    DeviatedModel m(KernelFamily::cauchy(1), ParamPoint::standard(1), KernelFamily::gaussian(1), dom);
    PairSampler s;
    s.reference = ParamG::scalar(0.5, 2.5, 1.0);
    s.regime = PairRegime::shrink_all;
    return {name, std::move(m), BoundLoss::K, s};
  }
  const KernelFamily h0 = KernelFamily::gaussian(1);
  if (name == "D-gauss-loc" || name == "K-gauss-loc") {
    DeviatedModel m(h0, ParamPoint::standard(1), KernelFamily::gaussian_location(Matrix::Identity(1, 1)), dom);
    PairSampler s;
    s.reference = ParamG::scalar(0.5, 0.0, 1.0);
    s.regime = PairRegime::shrink_point;
    s.comparative = name == "K-gauss-loc";
    return {name, std::move(m), name == "D-gauss-loc" ? BoundLoss::D : BoundLoss::K, s};
  }
  if (name == "Q-gauss-ls") {
    DeviatedModel m(h0, ParamPoint::standard(1), KernelFamily::gaussian(1), dom);
    PairSampler s;
    s.reference = ParamG::scalar(0.5, 0.0, 1.0);
    s.regime = PairRegime::shrink_point;
    return {name, std::move(m), BoundLoss::Q, s};
  }
  throw UsageError("unknown bounds preset '" + name + "'");
}

}  // namespace deviate
