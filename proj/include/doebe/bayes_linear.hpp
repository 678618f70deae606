#pragma once

#include "doebe/basis.hpp"
#include "doebe/common.hpp"

#include <string_view>

namespace doebe {

enum class Likelihood { Gaussian, Logistic };

std::string_view to_string(Likelihood likelihood);
Likelihood likelihood_from_string(std::string_view name);

/// Gaussian belief over the weights of one basis expansion.
struct GaussianPosterior {
  Vector mean;
  Matrix cov;

  Index dim() const { return mean.size(); }
};

/// One member of an ensemble: a frozen basis plus its recursive posterior.
/// A drift variance of zero denotes a static expert.
struct ExpertModel {
  BasisPtr basis;
  GaussianPosterior posterior;
  double noise_var = 0.25;
  double drift_var = 0.0;
  Likelihood likelihood = Likelihood::Gaussian;

  Index feature_dim() const { return posterior.dim(); }
};

/// One-step-ahead predictive for a single expert. For logistic experts the
/// moments describe y in {-1, +1} and `prob_positive` holds p(y = +1).
struct PredictiveGaussian {
  double mean = 0.0;
  double variance = 1.0;
  double prob_positive = 0.5;
};

/// Variance below which a predictive is treated as degenerate.
inline constexpr double kMinPredictiveVariance = 1e-12;

GaussianPosterior init_posterior(Index features, double prior_var);
ExpertModel make_expert(BasisPtr basis, double prior_var, double noise_var, double drift_var = 0.0,
                        Likelihood likelihood = Likelihood::Gaussian);

/// mu_y = phi' mu,  sigma_y^2 = phi' Sigma phi + sigma_eps^2.
PredictiveGaussian predict(const ExpertModel& expert, const VectorRef& phi);

/// Rank-one Kalman correction with a predictive produced from the same
/// expert and features.
GaussianPosterior correct(const ExpertModel& expert, const VectorRef& phi, double y,
                          const PredictiveGaussian& predictive);

/// Covariance inflation Sigma + sigma_rw^2 I; the mean is untouched.
GaussianPosterior drift(const ExpertModel& expert);

/// Gaussian log-density of y under a predictive.
double log_predictive_density(const PredictiveGaussian& predictive, double y);

enum class EvidenceForm { Automatic, Primal, Dual };

/// log N(y | 0, sigma_theta^2 Phi' Phi + sigma_eps^2 I) for a design matrix
/// Phi (F x N). The automatic form picks the F x F route when F < N.
double log_evidence(const MatrixRef& phi, const VectorRef& y, double prior_var, double noise_var,
                    EvidenceForm form = EvidenceForm::Automatic);
double log_evidence(const BasisModel& basis, const MatrixRef& x, const VectorRef& y, double prior_var,
                    double noise_var, EvidenceForm form = EvidenceForm::Automatic);

struct EvidenceGradient {
  double value = 0.0;
  Matrix dl_dphi;                  // F x N
  double dl_dlog_prior_sd = 0.0;   // w.r.t. log sigma_theta
  double dl_dlog_noise_sd = 0.0;   // w.r.t. log sigma_eps
};

/// Log evidence and its gradient, evaluated in the F x F form.
EvidenceGradient log_evidence_with_gradient(const MatrixRef& phi, const VectorRef& y, double prior_var,
                                            double noise_var);

struct LaplaceResult {
  GaussianPosterior posterior;
  PredictiveGaussian predictive;
  double log_predictive = 0.0;  // log p(y | past) under the probit-moment approximation
  bool converged = true;
  int iterations = 0;
};

inline constexpr int kLaplaceMaxIterations = 20;
inline constexpr double kLaplaceTolerance = 1e-9;

/// Predictive of a logistic expert before observing y:
/// p(y = +1) ~= sigmoid(m / sqrt(1 + pi v / 8)), m = phi' mu, v = phi' Sigma phi.
PredictiveGaussian predict_logistic(const ExpertModel& expert, const VectorRef& phi);

/// Recursive Laplace update for a logistic likelihood p(y | theta) = sigmoid(y phi' theta),
/// y in {-1, +1}. The MAP lies on mu + Sigma phi c, so Newton runs on the scalar
/// latent z = phi' theta; the precision then gains the likelihood Hessian at the MAP.
LaplaceResult laplace_step(const ExpertModel& expert, const VectorRef& phi, double y);

}  // namespace doebe
