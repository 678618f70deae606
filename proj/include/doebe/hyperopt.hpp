#pragma once

#include "doebe/basis.hpp"
#include "doebe/bayes_linear.hpp"
#include "doebe/data.hpp"
#include "doebe/ensemble.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

namespace doebe {

/// Constrained view of one hyperparameter set.
struct HyperParameters {
  double prior_var = 1.0;
  double noise_var = 0.25;
  BasisPtr basis;
};

/// Unconstrained vector [log sigma_theta, log sigma_eps, basis->hyper()...].
/// Length scales are already log-transformed inside the basis parameters.
Vector to_unconstrained(const HyperParameters& params);
/// Inverse of `to_unconstrained`; `like` supplies the basis structure.
HyperParameters from_unconstrained(const VectorRef& eta, const BasisModel& like);

struct OptimizerOptions {
  int steps = 500;
  double learning_rate = 1e-2;
  /// Hessians are formed only up to this many hyperparameters.
  Index max_hessian_params = 50;
  double hessian_step = 1e-4;
};

/// Negative log evidence and its gradient with respect to the unconstrained vector.
struct Objective {
  double value = 0.0;
  Vector gradient;
};

Objective negative_log_evidence(const VectorRef& eta, const BasisModel& like, const MatrixRef& x, const VectorRef& y);

struct FittedMode {
  Vector eta;
  double log_evidence = 0.0;
  /// Hessian of the negative log evidence at eta, when affordable.
  std::optional<Matrix> hessian;
  HyperParameters params;
  /// False when the optimizer had to give up on non-finite evidence.
  bool converged = true;
};

/// Adam on the negative log evidence from `init`, keeping the best iterate.
FittedMode fit_mode(const HyperParameters& init, const MatrixRef& x, const VectorRef& y,
                    const OptimizerOptions& options = {});

/// Finite-difference Hessian of the negative log evidence (symmetrized).
Matrix evidence_hessian(const VectorRef& eta, const BasisModel& like, const MatrixRef& x, const VectorRef& y,
                        double step);

/// Isotropic perturbation variance used when no usable Hessian exists.
inline constexpr double kFallbackPerturbationVar = 1e-3;
inline constexpr double kHessianJitter = 1e-6;

/// Draws from N(eta*, H^{-1}) in the unconstrained space. The mode itself is
/// not included. Without a positive-definite Hessian the draws fall back to
/// N(eta*, 1e-3 I).
std::vector<Vector> sample_hyperparams(const FittedMode& mode, int count, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Ensemble assembly

enum class EnsembleMode { Oebe, Doebe, Sdoebe, Edoebe };

std::string_view to_string(EnsembleMode mode);
EnsembleMode ensemble_mode_from_string(std::string_view name);

struct FamilyConfig {
  BasisKind kind = BasisKind::Rff;
  KernelFamily kernel = KernelFamily::SquaredExponential;
  /// RFF: total F (two per frequency). HSGP: budget split as floor(F/D) per
  /// dimension. RBF: number of centers.
  int features = 100;
  std::vector<int> degrees = {2, 3, 4};
  bool intercept = true;
  std::vector<double> s_grid = {0.1, 1.0, 10.0};
  int samples_per_mode = 9;
  bool optimize_frequencies = false;
  double hsgp_scale = 1.5;
};

struct EnsembleConfig {
  std::vector<FamilyConfig> families;
  EnsembleMode mode = EnsembleMode::Edoebe;
  std::vector<double> drift_levels = {1e-3};
  double delta = 0.05;
  double weight_floor = kWeightFloor;
  double prior_var = 1.0;
  double noise_var = 0.25;
  Likelihood likelihood = Likelihood::Gaussian;
  /// Prior variance of logistic experts; their length scales come from a
  /// Gaussian fit to the +-1 labels.
  double logistic_prior_var = 1.0;
  OptimizerOptions optimizer;
};

/// Deterministic sub-stream of a root seed.
std::mt19937_64 split_rng(std::uint64_t root, std::uint64_t stream);

/// Initial length scales l_d = s (max x_d - min x_d) over the pretraining inputs.
Vector initial_lengthscales(const MatrixRef& x, double s);

/// Fits every start of one family, sorted by decreasing evidence. Polynomial
/// families yield one mode per degree.
std::vector<FittedMode> fit_family(const FamilyConfig& family, const EnsembleConfig& config, const Dataset& pretrain,
                                   std::mt19937_64& rng);

/// Experts for one fitted mode: the mode itself plus `samples` Laplace draws.
std::vector<ExpertModel> experts_from_mode(const FittedMode& mode, int samples, Likelihood likelihood,
                                           double logistic_prior_var, std::mt19937_64& rng);

/// Pretrains every family, builds experts, and arranges them per the ensemble
/// mode. Hyperparameters are frozen afterwards.
EnsembleState assemble_ensemble(const EnsembleConfig& config, const Dataset& pretrain, std::uint64_t seed);

/// Arranges base experts (all static) into the requested ensemble mode.
EnsembleState arrange_ensemble(std::vector<ExpertModel> base, EnsembleMode mode,
                               const std::vector<double>& drift_levels, double delta, double weight_floor);

}  // namespace doebe
