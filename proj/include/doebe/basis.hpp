#pragma once

#include "doebe/common.hpp"
#include "doebe/kernels.hpp"

#include <json.hpp>

#include <atomic>
#include <memory>
#include <random>
#include <string_view>
#include <vector>

namespace doebe {

enum class BasisKind { Linear, PolynomialAdditive, RbfNetwork, Rff, HsgpAdditive };

std::string_view to_string(BasisKind kind);
BasisKind basis_kind_from_string(std::string_view name);

class BasisModel;
using BasisPtr = std::shared_ptr<const BasisModel>;

/// A deterministic feature map x -> phi(x) in R^F with frozen parameters.
///
/// Bases are immutable once built. Tunable parameters are exposed in an
/// unconstrained parameterization (log length scales, raw centers or
/// frequencies) so the evidence optimizer can move them; `with_hyper`
/// returns a new basis rather than mutating this one.
class BasisModel {
 public:
  virtual ~BasisModel() = default;

  virtual BasisKind kind() const = 0;
  virtual Index input_dim() const = 0;
  virtual Index feature_dim() const = 0;
  virtual bool intercept_included() const { return false; }

  Vector featurize(const VectorRef& x) const;
  /// Design matrix with one feature column per input column (F x N).
  Matrix design(const MatrixRef& x) const;

  /// Unconstrained tunable parameters; empty for parameter-free bases.
  virtual Vector hyper() const { return Vector(); }
  virtual BasisPtr with_hyper(const VectorRef& eta) const;
  /// Chain rule through the feature map: given dL/dPhi (F x N) evaluated at
  /// the design matrix of `x`, returns dL/d(hyper).
  virtual Vector hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const;

  virtual nlohmann::json to_json() const = 0;
  static BasisPtr from_json(const nlohmann::json& j);

 protected:
  virtual void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const = 0;
};

/// phi(x) = x, optionally prefixed with a constant 1.
class LinearBasis final : public BasisModel {
 public:
  LinearBasis(Index dim, bool intercept);
  BasisKind kind() const override { return BasisKind::Linear; }
  Index input_dim() const override { return dim_; }
  Index feature_dim() const override { return dim_ + (intercept_ ? 1 : 0); }
  bool intercept_included() const override { return intercept_; }
  nlohmann::json to_json() const override;

 protected:
  void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const override;

 private:
  Index dim_;
  bool intercept_;
};

/// Additive polynomial: [1, x_1..x_1^p, ..., x_D..x_D^p]; F = D p + 1.
class PolynomialBasis final : public BasisModel {
 public:
  PolynomialBasis(Index dim, int degree);
  BasisKind kind() const override { return BasisKind::PolynomialAdditive; }
  Index input_dim() const override { return dim_; }
  Index feature_dim() const override { return dim_ * degree_ + 1; }
  bool intercept_included() const override { return true; }
  int degree() const { return degree_; }
  nlohmann::json to_json() const override;

 protected:
  void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const override;

 private:
  Index dim_;
  int degree_;
};

/// Gaussian RBF network with ARD length scales:
/// phi_k(x) = exp(-0.5 sum_d (x_d - mu_kd)^2 / l_d^2).
/// Tunable parameters: [centers (row-major K x D), log l].
class RbfBasis final : public BasisModel {
 public:
  RbfBasis(Matrix centers, Vector lengthscales);
  BasisKind kind() const override { return BasisKind::RbfNetwork; }
  Index input_dim() const override { return centers_.cols(); }
  Index feature_dim() const override { return centers_.rows(); }
  const Matrix& centers() const { return centers_; }
  const Vector& lengthscales() const { return lengthscales_; }

  Vector hyper() const override;
  BasisPtr with_hyper(const VectorRef& eta) const override;
  Vector hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const override;
  nlohmann::json to_json() const override;

 protected:
  void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const override;

 private:
  Matrix centers_;  // K x D
  Vector lengthscales_;
};

/// Random Fourier features:
/// phi(x) = sf sqrt(2/F) [sin(x.w_1), cos(x.w_1), ..., sin(x.w_{F/2}), cos(x.w_{F/2})].
///
/// Frequencies are w_m = z_m / l elementwise, where z_m are draws from the
/// unit-length-scale spectral density. With `optimized_frequencies` the
/// frequencies themselves are the tunable parameters; otherwise the tunable
/// parameters are log l and the unit draws stay frozen.
class FourierBasis final : public BasisModel {
 public:
  FourierBasis(KernelSpec spec, Matrix unit_frequencies, bool optimized_frequencies = false);
  /// Optimized-frequency form built directly from a frequency matrix.
  static std::shared_ptr<const FourierBasis> with_frequencies(KernelSpec spec, Matrix frequencies);

  BasisKind kind() const override { return BasisKind::Rff; }
  Index input_dim() const override { return frequencies_.cols(); }
  Index feature_dim() const override { return 2 * frequencies_.rows(); }
  const KernelSpec& kernel() const { return spec_; }
  const Matrix& frequencies() const { return frequencies_; }  // (F/2) x D
  bool optimized_frequencies() const { return optimized_; }

  Vector hyper() const override;
  BasisPtr with_hyper(const VectorRef& eta) const override;
  Vector hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const override;
  nlohmann::json to_json() const override;

 protected:
  void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const override;

 private:
  FourierBasis() = default;
  KernelSpec spec_;
  Matrix unit_;         // (F/2) x D, empty when optimized
  Matrix frequencies_;  // (F/2) x D
  bool optimized_ = false;
};

/// Per-dimension domain [-L_d, L_d] and feature counts of an additive HSGP.
struct HsgpDomain {
  Vector half_widths;
  double scale = 1.5;
  std::vector<int> features_per_dim;

  Index total_features() const;
  /// L_d = c * max_i |x_{d,i}| over the pretraining inputs (D x N).
  static HsgpDomain from_data(const MatrixRef& x, double scale, std::vector<int> features_per_dim);
};

/// Additive Hilbert-space GP basis. For dimension d and j = 1..F_d:
///   phi_{d,j}(x) = sqrt(S_d(w_j)) sin(w_j (x_d + L_d)) / sqrt(L_d),  w_j = j pi / (2 L_d)
/// Tunable parameters: log l.
class HsgpBasis final : public BasisModel {
 public:
  HsgpBasis(KernelSpec spec, HsgpDomain domain);

  BasisKind kind() const override { return BasisKind::HsgpAdditive; }
  Index input_dim() const override { return spec_.dim(); }
  Index feature_dim() const override { return total_; }
  const KernelSpec& kernel() const { return spec_; }
  const HsgpDomain& domain() const { return domain_; }

  /// Number of featurize calls that saw an input outside [-L_d, L_d].
  std::size_t out_of_domain_count() const;

  Vector hyper() const override;
  BasisPtr with_hyper(const VectorRef& eta) const override;
  Vector hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const override;
  nlohmann::json to_json() const override;

 protected:
  void featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const override;

 private:
  KernelSpec spec_;
  HsgpDomain domain_;
  Index total_ = 0;
  std::vector<Index> offsets_;
  std::vector<Vector> amplitudes_;  // sqrt(S_d(w_j)) / sqrt(L_d)
  std::vector<Vector> omegas_;
  std::shared_ptr<std::atomic<std::size_t>> out_of_domain_;
};

BasisPtr build_linear(Index dim, bool intercept);
BasisPtr build_polynomial_additive(Index dim, int degree);

inline constexpr int kKMeansIterations = 25;

/// K-means centers on the columns of `x` (D x N), seeded from distinct data
/// points; an emptied cluster is re-seeded from a random data point.
Matrix kmeans_centers(const MatrixRef& x, Index k, std::mt19937_64& rng,
                      int iterations = kKMeansIterations);
BasisPtr build_rbf_network(const MatrixRef& pretrain_x, Index centers, const VectorRef& lengthscales,
                           std::mt19937_64& rng);

/// Unit-length-scale spectral draws for `count` frequencies in `dim` dims.
///   SE:       z ~ N(0, I)
///   Matern32: z = n sqrt(3 / u), n ~ N(0, I), u ~ chi^2_3 (multivariate t, 3 dof)
Matrix draw_unit_frequencies(KernelFamily family, Index count, Index dim, std::mt19937_64& rng);
BasisPtr build_rff(const KernelSpec& spec, Index features, std::mt19937_64& rng);
BasisPtr build_hsgp_additive(const KernelSpec& spec, const HsgpDomain& domain);

}  // namespace doebe
