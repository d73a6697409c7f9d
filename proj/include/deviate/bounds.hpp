#pragma once

#include "deviate/model.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace deviate {

enum class BoundLoss { K, D, Q };
std::string to_string(BoundLoss l);
BoundLoss bound_loss_from_string(const std::string& name);

/// How pairs (G, G*) are drawn around the reference G.
enum class PairRegime {
  /// lambda, mu and Sigma all within radius eps of the reference.
  shrink_all,
  /// lambda uniform in a fixed band around the reference lambda; mu and
  /// Sigma within radius eps of the reference point (normally the anchor).
  shrink_point,
};

struct PairSampler {
  ParamG reference;
  PairRegime regime = PairRegime::shrink_all;
  std::vector<double> radii{0.5, 0.2, 0.05};
  double lambda_band = 0.45;  // shrink_point half-width
  double lambda_min = 1e-3;
  /// Lets loss K run outside the distinguishable regime, for side-by-side
  /// comparisons with D.
  bool comparative = false;

  void validate() const;
};

struct RadiusStats {
  double radius = 0.0;
  int n_pairs = 0;
  int n_excluded = 0;  // pairs with loss < 1e-12
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  std::vector<double> quantile_levels{0.05, 0.25, 0.5, 0.75, 0.95};
  std::vector<double> quantiles;
  ParamG argmin_g;
  ParamG argmin_g_star;
  double argmin_tv = 0.0;
  double argmin_loss = 0.0;
};

/// Ratios V(p_G, p_G*) / loss(G, G*) stratified by sampling radius.
struct BoundProbeReport {
  std::string loss_name;
  std::string preset;
  int n_pairs = 0;  // per radius
  std::vector<RadiusStats> radii;
  double min_ratio = 0.0;  // over all radii
  double max_ratio = 0.0;
};

void to_json(nlohmann::json& j, const BoundProbeReport& r);

/// Loss value for the probe's loss kind (anchor = h0's parameter point).
double bound_loss_value(const DeviatedModel& m, BoundLoss loss, const ParamG& g, const ParamG& g_star);

/// Throws UsageError unless m matches the regime the loss's bound assumes:
/// K needs a distinguishable (h0, f) (unless comparative), D needs h0 equal
/// to a fixed-Sigma Gaussian location kernel at the anchor, Q needs h0 equal
/// to a location-scale Gaussian kernel at the anchor.
void check_regime(const DeviatedModel& m, BoundLoss loss, const PairSampler& sampler);

BoundProbeReport probe_bound(const DeviatedModel& m, BoundLoss loss, const PairSampler& sampler, int n_pairs,
                             const RngStream& rng, unsigned threads = 1);

struct BoundPreset {
  std::string name;
  DeviatedModel model;
  BoundLoss loss;
  PairSampler sampler;
};

/// K-cauchy-gauss, D-gauss-loc, Q-gauss-ls, and K-gauss-loc (K in the
/// D regime, for comparison).
BoundPreset bound_preset(const std::string& name);
std::vector<std::string> bound_preset_names();

}  // namespace deviate
