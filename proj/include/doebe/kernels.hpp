#pragma once

#include "doebe/common.hpp"

#include <string_view>

namespace doebe {

enum class KernelFamily { SquaredExponential, Matern32 };

std::string_view to_string(KernelFamily family);
KernelFamily kernel_family_from_string(std::string_view name);

/// Stationary ARD kernel: per-dimension length scales and a process scale.
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  Vector lengthscales = Vector::Ones(1);
  double process_scale = 1.0;

  Index dim() const { return lengthscales.size(); }
  /// Throws std::invalid_argument unless every length scale and the process
  /// scale are strictly positive and D >= 1.
  void validate() const;
  /// One-dimensional marginal kernel along input dimension `d`.
  KernelSpec marginal(Index d) const;

  static KernelSpec isotropic(KernelFamily family, Index dim, double lengthscale,
                              double process_scale = 1.0);
};

/// Kernel value as a function of the squared ARD distance.
double kernel_from_sq_distance(const KernelSpec& spec, double r2);

double kernel_eval(const KernelSpec& spec, const VectorRef& x, const VectorRef& xp);

/// K(X1, X2) with inputs stored column-wise (D x N1, D x N2).
Matrix gram_matrix(const KernelSpec& spec, const MatrixRef& x1, const MatrixRef& x2);

/// Power spectral density of the 1-D marginal kernel along dimension `d`,
/// in angular frequency: kappa(tau) = (1/2pi) * int S(w) exp(i w tau) dw.
///   SE:       S(w) = sf^2 sqrt(2 pi) l exp(-w^2 l^2 / 2)
///   Matern32: S(w) = sf^2 4 lam^3 / (lam^2 + w^2)^2,  lam = sqrt(3) / l
double spectral_density_1d(const KernelSpec& spec, Index d, double omega);

/// d log S / d log l for the 1-D marginal along `d`.
double spectral_density_1d_dlog_lengthscale(const KernelSpec& spec, Index d, double omega);

struct GpPrediction {
  Vector mean;
  Matrix cov;
};

/// Exact zero-mean GP posterior over f(X*) given noisy targets y at X.
/// Intended as a validation oracle; cost is O(N^3).
GpPrediction exact_gp_predict(const KernelSpec& spec, const MatrixRef& x, const VectorRef& y,
                              const MatrixRef& x_star, double noise_var);

/// Relative diagonal jitter applied to Gram matrices before factorization.
inline constexpr double kGramJitter = 1e-10;

}  // namespace doebe
