#pragma once

#include "doebe/bayes_linear.hpp"
#include "doebe/common.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace doebe {

inline constexpr double kWeightFloor = 1e-16;

/// Bayesian model average over a set of experts, with optional Markov
/// switching of the weights (w~ = Q w, Q column-stochastic).
struct EnsembleState {
  std::vector<ExpertModel> experts;
  Vector weights;
  std::optional<Matrix> switching;
  double weight_floor = kWeightFloor;

  Index size() const { return static_cast<Index>(experts.size()); }
  /// Throws std::invalid_argument if weights are not a simplex or Q is not
  /// column-stochastic.
  void validate() const;
};

/// Uniform initial weights over the given experts, no switching.
EnsembleState make_ensemble(std::vector<ExpertModel> experts, std::optional<Matrix> switching = std::nullopt,
                            double weight_floor = kWeightFloor);

struct MixturePrediction {
  double mean = 0.0;
  double variance = 0.0;
  std::vector<PredictiveGaussian> experts;
  /// log p^(m)(y | past); filled in by `step` once y is known.
  std::vector<double> log_likelihoods;
  /// log sum_m w~_m p^(m)(y | past); filled in by `step`.
  double log_density = 0.0;
};

/// Mixture moments under the current weights. Zero-weight experts are skipped.
MixturePrediction ensemble_predict(const EnsembleState& state, const VectorRef& x);

/// Mixture moments of explicit components; `weights` must be a simplex.
MixturePrediction mixture_moments(const std::vector<PredictiveGaussian>& components, const VectorRef& weights);

struct StepDiagnostics {
  /// Experts whose numerical update failed this step; their weight was zeroed.
  std::vector<Index> failed_experts;
  std::vector<std::string> messages;
  /// Experts whose logistic MAP search hit the iteration budget.
  std::vector<Index> laplace_fallbacks;
};

struct StepResult {
  MixturePrediction prediction;
  StepDiagnostics diagnostics;
};

/// One online step on (x, y):
///   1. w~ = Q w (or w)
///   2. every expert drifts
///   3. every expert predicts; the mixture uses w~
///   4. w ∝ w~ p(y), in the log domain; entries below the floor become 0
///   5. every expert corrects on (x, y), including zero-weight experts
/// Throws NumericalError if every weight underflows.
StepResult step(EnsembleState& state, const VectorRef& x, double y);

/// Switching matrix with R blocks of size M: (1 - (R-1) delta) I_M on the
/// block diagonal and delta I_M elsewhere. Columns sum to one.
Matrix block_switching_matrix(Index block_size, Index blocks, double delta);

/// (1 - delta) on the diagonal, delta / (M - 1) spread over the other rows.
Matrix uniform_switching_matrix(Index size, double delta);

/// E-DOEBE: block r < R-1 holds copies of `base` with drift variance
/// drift_levels[r]; the last block holds static copies. Weights are uniform.
EnsembleState build_edoebe(const std::vector<ExpertModel>& base, const std::vector<double>& drift_levels,
                           double delta, double weight_floor = kWeightFloor);

struct RevivalReport {
  Vector pre_switch;
  Vector post_switch;
  /// Experts with w_m = 0 but (Q w)_m > 0.
  std::vector<Index> revived;
};

RevivalReport revive_check(const EnsembleState& state);

/// Checkpoint form of the full state (weights, Q, expert posteriors and
/// bases). Experts sharing a basis object share it again after loading.
/// Doubles round-trip exactly.
inline constexpr int kEnsembleFormatVersion = 1;
nlohmann::json ensemble_to_json(const EnsembleState& state);
EnsembleState ensemble_from_json(const nlohmann::json& j);

}  // namespace doebe
