#include "doebe/kernels.hpp"

#include <cmath>
#include <numbers>

namespace doebe {

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::SquaredExponential: return "se";
    case KernelFamily::Matern32: return "matern32";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(std::string_view name) {
  if (name == "se" || name == "se-ard") return KernelFamily::SquaredExponential;
  if (name == "matern32" || name == "matern32-ard") return KernelFamily::Matern32;
  throw std::invalid_argument("unknown kernel family '" + std::string(name) + "'");
}

void KernelSpec::validate() const {
  if (lengthscales.size() < 1) throw std::invalid_argument("KernelSpec: need at least one dimension");
  if (!(lengthscales.array() > 0.0).all() || !lengthscales.allFinite()) {
    throw std::invalid_argument("KernelSpec: length scales must be positive and finite");
  }
  if (!(process_scale > 0.0) || !std::isfinite(process_scale)) {
    throw std::invalid_argument("KernelSpec: process scale must be positive and finite");
  }
}

KernelSpec KernelSpec::marginal(Index d) const {
  if (d < 0 || d >= dim()) throw DimensionError("KernelSpec::marginal: dimension out of range");
  return KernelSpec{family, Vector::Constant(1, lengthscales(d)), process_scale};
}

KernelSpec KernelSpec::isotropic(KernelFamily family, Index dim, double lengthscale,
                                 double process_scale) {
  KernelSpec spec{family, Vector::Constant(dim, lengthscale), process_scale};
  spec.validate();
  return spec;
}

double kernel_from_sq_distance(const KernelSpec& spec, double r2) {
  const double var = spec.process_scale * spec.process_scale;
  switch (spec.family) {
    case KernelFamily::SquaredExponential:
      return var * std::exp(-0.5 * r2);
    case KernelFamily::Matern32: {
      const double r = std::sqrt(3.0 * r2);
      return var * (1.0 + r) * std::exp(-r);
    }
  }
  return 0.0;
}

double kernel_eval(const KernelSpec& spec, const VectorRef& x, const VectorRef& xp) {
  require_dim(x.size(), spec.dim(), "kernel_eval(x)");
  require_dim(xp.size(), spec.dim(), "kernel_eval(x')");
  const double r2 = ((x - xp).array() / spec.lengthscales.array()).square().sum();
  return kernel_from_sq_distance(spec, r2);
}

Matrix gram_matrix(const KernelSpec& spec, const MatrixRef& x1, const MatrixRef& x2) {
  require_dim(x1.rows(), spec.dim(), "gram_matrix(X1)");
  require_dim(x2.rows(), spec.dim(), "gram_matrix(X2)");
  const Vector inv_l = spec.lengthscales.cwiseInverse();
  const Matrix a = inv_l.asDiagonal() * x1;
  const Matrix b = inv_l.asDiagonal() * x2;
  Matrix k(x1.cols(), x2.cols());
  for (Index j = 0; j < b.cols(); ++j) {
    for (Index i = 0; i < a.cols(); ++i) {
      k(i, j) = kernel_from_sq_distance(spec, (a.col(i) - b.col(j)).squaredNorm());
    }
  }
  return k;
}

double spectral_density_1d(const KernelSpec& spec, Index d, double omega) {
  if (d < 0 || d >= spec.dim()) throw DimensionError("spectral_density_1d: dimension out of range");
  const double l = spec.lengthscales(d);
  const double var = spec.process_scale * spec.process_scale;
  switch (spec.family) {
    case KernelFamily::SquaredExponential:
      return var * std::sqrt(2.0 * std::numbers::pi) * l * std::exp(-0.5 * omega * omega * l * l);
    case KernelFamily::Matern32: {
      const double lam = std::sqrt(3.0) / l;
      const double denom = lam * lam + omega * omega;
      return var * 4.0 * lam * lam * lam / (denom * denom);
    }
  }
  return 0.0;
}

double spectral_density_1d_dlog_lengthscale(const KernelSpec& spec, Index d, double omega) {
  const double l = spec.lengthscales(d);
  switch (spec.family) {
    case KernelFamily::SquaredExponential:
      return 1.0 - omega * omega * l * l;
    case KernelFamily::Matern32: {
      const double lam2 = 3.0 / (l * l);
      return -(3.0 - 4.0 * lam2 / (lam2 + omega * omega));
    }
  }
  return 0.0;
}

GpPrediction exact_gp_predict(const KernelSpec& spec, const MatrixRef& x, const VectorRef& y,
                              const MatrixRef& x_star, double noise_var) {
  spec.validate();
  require_dim(y.size(), x.cols(), "exact_gp_predict(y)");
  if (!(noise_var > 0.0)) throw std::invalid_argument("exact_gp_predict: noise variance must be positive");

  const double jitter = kGramJitter * spec.process_scale * spec.process_scale;
  Matrix k = gram_matrix(spec, x, x);
  k.diagonal().array() += noise_var + jitter;
  const Eigen::LLT<Matrix> llt = cholesky_with_jitter(k, 1e-8 * spec.process_scale * spec.process_scale,
                                                      "exact_gp_predict");

  const Matrix k_star = gram_matrix(spec, x, x_star);  // N x N*
  GpPrediction out;
  out.mean = k_star.transpose() * llt.solve(y);
  const Matrix v = llt.matrixL().solve(k_star);
  out.cov = gram_matrix(spec, x_star, x_star) - v.transpose() * v;
  symmetrize(out.cov);
  return out;
}

}  // namespace doebe
