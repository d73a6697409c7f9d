#pragma once

#include "deviate/model.hpp"

#include "json.hpp"

#include <string>
#include <utility>
#include <vector>

namespace deviate {

enum class Verdict { distinguishable, not_distinguishable, inconclusive };
std::string to_string(Verdict v);

/// Finite-grid surrogate for linear independence of a set of functions.
///
/// The functions are evaluated on the grid, each column scaled to unit grid
/// norm, and the smallest singular value compared with
/// threshold = relative_threshold * largest singular value. Values within a
/// decade above the threshold are reported as inconclusive.
struct RankTestReport {
  double smallest_singular_value = 0.0;
  double largest_singular_value = 0.0;
  double condition_number = 0.0;
  int n_grid_points = 0;
  int n_functions = 0;
  double relative_threshold = 1e-6;
  double threshold = 0.0;  // absolute
  Verdict verdict = Verdict::inconclusive;
  std::vector<std::string> function_labels;
  Vector singular_values;  // descending
  /// Coefficients, on the unnormalized functions, of the combination with the
  /// smallest singular value; unit Euclidean norm.
  Vector null_vector;
  /// Gaussian location-scale second-order checks only: the smallest, over the
  /// heat-equation relations, of |P h| / |h| where P projects onto the
  /// numerical null space (cosine between h and that space). NaN otherwise.
  double heat_alignment = std::numeric_limits<double>::quiet_NaN();
};

void to_json(nlohmann::json& j, const RankTestReport& r);

/// Default grids: 512 equispaced points over the union of centre +- 8 scales
/// of the given components in d = 1; a Halton sequence over the bounding box
/// for d > 1.
Matrix default_grid(const std::vector<std::pair<KernelFamily, ParamPoint>>& components, Eigen::Index n_points = 512);

/// Linear independence of {h0, f, df/dmu_i, df/dSigma_uv} at point.
/// Optional row weights multiply each grid row before normalization.
RankTestReport check_first_order_distinguishability(const DeviatedModel& m, const ParamPoint& point,
                                                    const Matrix& grid, double relative_threshold = 1e-6,
                                                    const Vector* weights = nullptr);

/// Linear independence of f and its first and second parameter derivatives
/// over all the given distinct points.
RankTestReport check_second_order_identifiability(const KernelFamily& family, const std::vector<ParamPoint>& points,
                                                  const Matrix& grid, double relative_threshold = 1e-6,
                                                  const Vector* weights = nullptr);

/// max |d2f/dmu dmu^T - 2 df/dSigma| over the samples, entrywise.
double heat_pde_residual(const KernelFamily& family, const std::vector<std::pair<Vector, ParamPoint>>& samples);

}  // namespace deviate
