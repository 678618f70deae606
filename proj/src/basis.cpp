#include "doebe/basis.hpp"

#include "doebe/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace doebe {

namespace {

void check_finite_input(const VectorRef& x) {
  if (!x.allFinite()) throw std::invalid_argument("featurize: input contains non-finite values");
}

}  // namespace

std::string_view to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::Linear: return "linear";
    case BasisKind::PolynomialAdditive: return "poly";
    case BasisKind::RbfNetwork: return "rbf";
    case BasisKind::Rff: return "rff";
    case BasisKind::HsgpAdditive: return "hsgp";
  }
  return "unknown";
}

BasisKind basis_kind_from_string(std::string_view name) {
  if (name == "linear") return BasisKind::Linear;
  if (name == "poly") return BasisKind::PolynomialAdditive;
  if (name == "rbf") return BasisKind::RbfNetwork;
  if (name == "rff") return BasisKind::Rff;
  if (name == "hsgp") return BasisKind::HsgpAdditive;
  throw std::invalid_argument("unknown basis kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// BasisModel

Vector BasisModel::featurize(const VectorRef& x) const {
  require_dim(x.size(), input_dim(), "featurize");
  Vector out(feature_dim());
  featurize_into(x, out);
  return out;
}

Matrix BasisModel::design(const MatrixRef& x) const {
  require_dim(x.rows(), input_dim(), "design");
  Matrix phi(feature_dim(), x.cols());
  for (Index i = 0; i < x.cols(); ++i) {
    featurize_into(x.col(i), phi.col(i));
  }
  return phi;
}

BasisPtr BasisModel::with_hyper(const VectorRef& eta) const {
  if (eta.size() != 0) throw DimensionError("with_hyper: basis has no tunable parameters");
  return BasisModel::from_json(to_json());
}

Vector BasisModel::hyper_gradient(const MatrixRef&, const MatrixRef&) const { return Vector(); }

BasisPtr BasisModel::from_json(const nlohmann::json& j) {
  const BasisKind kind = basis_kind_from_string(j.at("kind").get<std::string>());
  switch (kind) {
    case BasisKind::Linear:
      return std::make_shared<LinearBasis>(j.at("input_dim").get<Index>(), j.at("intercept").get<bool>());
    case BasisKind::PolynomialAdditive:
      return std::make_shared<PolynomialBasis>(j.at("input_dim").get<Index>(), j.at("degree").get<int>());
    case BasisKind::RbfNetwork:
      return std::make_shared<RbfBasis>(io::matrix_from_json(j.at("centers")),
                                        io::vector_from_json(j.at("lengthscales")));
    case BasisKind::Rff: {
      KernelSpec spec{kernel_family_from_string(j.at("kernel").get<std::string>()),
                      io::vector_from_json(j.at("lengthscales")), j.at("process_scale").get<double>()};
      if (j.at("optimized").get<bool>()) {
        return FourierBasis::with_frequencies(spec, io::matrix_from_json(j.at("frequencies")));
      }
      return std::make_shared<FourierBasis>(spec, io::matrix_from_json(j.at("unit_frequencies")));
    }
    case BasisKind::HsgpAdditive: {
      KernelSpec spec{kernel_family_from_string(j.at("kernel").get<std::string>()),
                      io::vector_from_json(j.at("lengthscales")), j.at("process_scale").get<double>()};
      HsgpDomain domain{io::vector_from_json(j.at("half_widths")), j.at("scale").get<double>(),
                        j.at("features_per_dim").get<std::vector<int>>()};
      return std::make_shared<HsgpBasis>(spec, domain);
    }
  }
  throw std::invalid_argument("unreachable basis kind");
}

// ---------------------------------------------------------------------------
// Linear

LinearBasis::LinearBasis(Index dim, bool intercept) : dim_(dim), intercept_(intercept) {
  if (dim < 1) throw std::invalid_argument("LinearBasis: dimension must be >= 1");
}

void LinearBasis::featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const {
  check_finite_input(x);
  if (intercept_) {
    out(0) = 1.0;
    out.tail(dim_) = x;
  } else {
    out = x;
  }
}

nlohmann::json LinearBasis::to_json() const {
  return {{"kind", "linear"}, {"input_dim", dim_}, {"intercept", intercept_}};
}

// ---------------------------------------------------------------------------
// Polynomial

PolynomialBasis::PolynomialBasis(Index dim, int degree) : dim_(dim), degree_(degree) {
  if (dim < 1) throw std::invalid_argument("PolynomialBasis: dimension must be >= 1");
  if (degree < 1) throw std::invalid_argument("PolynomialBasis: degree must be >= 1");
}

void PolynomialBasis::featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const {
  check_finite_input(x);
  out(0) = 1.0;
  Index k = 1;
  for (Index d = 0; d < dim_; ++d) {
    double p = 1.0;
    for (int e = 1; e <= degree_; ++e) {
      p *= x(d);
      out(k++) = p;
    }
  }
}

nlohmann::json PolynomialBasis::to_json() const {
  return {{"kind", "poly"}, {"input_dim", dim_}, {"degree", degree_}};
}

// ---------------------------------------------------------------------------
// RBF network

RbfBasis::RbfBasis(Matrix centers, Vector lengthscales)
    : centers_(std::move(centers)), lengthscales_(std::move(lengthscales)) {
  if (centers_.rows() < 1 || centers_.cols() < 1) throw std::invalid_argument("RbfBasis: empty centers");
  require_dim(lengthscales_.size(), centers_.cols(), "RbfBasis lengthscales");
  if (!(lengthscales_.array() > 0.0).all()) throw std::invalid_argument("RbfBasis: length scales must be positive");
}

void RbfBasis::featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const {
  check_finite_input(x);
  const Eigen::ArrayXd inv_l2 = lengthscales_.array().square().inverse();
  for (Index k = 0; k < centers_.rows(); ++k) {
    const double r2 = ((x.transpose() - centers_.row(k)).array().square() * inv_l2.transpose()).sum();
    out(k) = std::exp(-0.5 * r2);
  }
}

Vector RbfBasis::hyper() const {
  const Index k = centers_.rows();
  const Index d = centers_.cols();
  Vector eta(k * d + d);
  for (Index i = 0; i < k; ++i) eta.segment(i * d, d) = centers_.row(i).transpose();
  eta.tail(d) = lengthscales_.array().log();
  return eta;
}

BasisPtr RbfBasis::with_hyper(const VectorRef& eta) const {
  const Index k = centers_.rows();
  const Index d = centers_.cols();
  require_dim(eta.size(), k * d + d, "RbfBasis::with_hyper");
  Matrix centers(k, d);
  for (Index i = 0; i < k; ++i) centers.row(i) = eta.segment(i * d, d).transpose();
  return std::make_shared<RbfBasis>(std::move(centers), eta.tail(d).array().exp().matrix());
}

Vector RbfBasis::hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const {
  const Index k = centers_.rows();
  const Index d = centers_.cols();
  const Matrix phi = design(x);
  const Matrix p = dl_dphi.cwiseProduct(phi);              // K x N
  const Vector row_sums = p.rowwise().sum();               // K
  const Matrix px = p * x.transpose();                     // K x D
  const Matrix px2 = p * x.array().square().matrix().transpose();
  const Eigen::ArrayXd inv_l2 = lengthscales_.array().square().inverse();

  Vector grad(k * d + d);
  Vector log_l_grad = Vector::Zero(d);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double mu = centers_(i, j);
      grad(i * d + j) = (px(i, j) - mu * row_sums(i)) * inv_l2(j);
      log_l_grad(j) += (px2(i, j) - 2.0 * mu * px(i, j) + mu * mu * row_sums(i)) * inv_l2(j);
    }
  }
  grad.tail(d) = log_l_grad;
  return grad;
}

nlohmann::json RbfBasis::to_json() const {
  return {{"kind", "rbf"}, {"centers", io::matrix_to_json(centers_)},
          {"lengthscales", io::vector_to_json(lengthscales_)}};
}

Matrix kmeans_centers(const MatrixRef& x, Index k, std::mt19937_64& rng, int iterations) {
  const Index n = x.cols();
  const Index dim = x.rows();
  if (k < 1) throw std::invalid_argument("kmeans: need at least one center");
  if (n < k) throw std::invalid_argument("kmeans: fewer data points than centers");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Matrix centers(dim, k);
  for (Index c = 0; c < k; ++c) centers.col(c) = x.col(order[static_cast<std::size_t>(c)]);

  std::uniform_int_distribution<Index> pick(0, n - 1);
  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iterations; ++it) {
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      (centers.colwise() - x.col(i)).colwise().squaredNorm().minCoeff(&best);
      assign[static_cast<std::size_t>(i)] = best;
    }
    Matrix sums = Matrix::Zero(dim, k);
    Vector counts = Vector::Zero(k);
    for (Index i = 0; i < n; ++i) {
      const Index c = assign[static_cast<std::size_t>(i)];
      sums.col(c) += x.col(i);
      counts(c) += 1.0;
    }
    for (Index c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centers.col(c) = sums.col(c) / counts(c);
      } else {
        centers.col(c) = x.col(pick(rng));
      }
    }
  }
  return centers.transpose();
}

BasisPtr build_rbf_network(const MatrixRef& pretrain_x, Index centers, const VectorRef& lengthscales,
                           std::mt19937_64& rng) {
  return std::make_shared<RbfBasis>(kmeans_centers(pretrain_x, centers, rng), lengthscales);
}

// ---------------------------------------------------------------------------
// Random Fourier features

FourierBasis::FourierBasis(KernelSpec spec, Matrix unit_frequencies, bool optimized_frequencies)
    : spec_(std::move(spec)), unit_(std::move(unit_frequencies)), optimized_(optimized_frequencies) {
  spec_.validate();
  require_dim(unit_.cols(), spec_.dim(), "FourierBasis frequencies");
  if (unit_.rows() < 1) throw std::invalid_argument("FourierBasis: need at least one frequency");
  frequencies_ = unit_ * spec_.lengthscales.cwiseInverse().asDiagonal();
  if (optimized_) unit_.resize(0, 0);
}

std::shared_ptr<const FourierBasis> FourierBasis::with_frequencies(KernelSpec spec, Matrix frequencies) {
  spec.validate();
  require_dim(frequencies.cols(), spec.dim(), "FourierBasis frequencies");
  auto basis = std::shared_ptr<FourierBasis>(new FourierBasis());
  basis->spec_ = std::move(spec);
  basis->frequencies_ = std::move(frequencies);
  basis->optimized_ = true;
  return basis;
}

void FourierBasis::featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const {
  check_finite_input(x);
  const double c = spec_.process_scale * std::sqrt(2.0 / static_cast<double>(feature_dim()));
  const Vector a = frequencies_ * x;
  for (Index m = 0; m < a.size(); ++m) {
    out(2 * m) = c * std::sin(a(m));
    out(2 * m + 1) = c * std::cos(a(m));
  }
}

Vector FourierBasis::hyper() const {
  if (optimized_) return Eigen::Map<const Vector>(frequencies_.data(), frequencies_.size());
  return spec_.lengthscales.array().log();
}

BasisPtr FourierBasis::with_hyper(const VectorRef& eta) const {
  if (optimized_) {
    require_dim(eta.size(), frequencies_.size(), "FourierBasis::with_hyper");
    return with_frequencies(spec_, Eigen::Map<const Matrix>(eta.data(), frequencies_.rows(), frequencies_.cols()));
  }
  require_dim(eta.size(), spec_.dim(), "FourierBasis::with_hyper");
  KernelSpec spec = spec_;
  spec.lengthscales = eta.array().exp();
  return std::make_shared<FourierBasis>(spec, unit_);
}

Vector FourierBasis::hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const {
  const double c = spec_.process_scale * std::sqrt(2.0 / static_cast<double>(feature_dim()));
  const Matrix a = frequencies_ * x;  // (F/2) x N
  Matrix h(a.rows(), a.cols());
  for (Index i = 0; i < a.cols(); ++i) {
    for (Index m = 0; m < a.rows(); ++m) {
      h(m, i) = c * (dl_dphi(2 * m, i) * std::cos(a(m, i)) - dl_dphi(2 * m + 1, i) * std::sin(a(m, i)));
    }
  }
  const Matrix hx = h * x.transpose();  // dL/dw, (F/2) x D
  if (optimized_) return Eigen::Map<const Vector>(hx.data(), hx.size());
  return -(frequencies_.cwiseProduct(hx)).colwise().sum().transpose();
}

nlohmann::json FourierBasis::to_json() const {
  nlohmann::json j = {{"kind", "rff"},
                      {"kernel", to_string(spec_.family)},
                      {"lengthscales", io::vector_to_json(spec_.lengthscales)},
                      {"process_scale", spec_.process_scale},
                      {"optimized", optimized_}};
  if (optimized_) {
    j["frequencies"] = io::matrix_to_json(frequencies_);
  } else {
    j["unit_frequencies"] = io::matrix_to_json(unit_);
  }
  return j;
}

Matrix draw_unit_frequencies(KernelFamily family, Index count, Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(count, dim);
  for (Index m = 0; m < count; ++m) {
    for (Index d = 0; d < dim; ++d) z(m, d) = normal(rng);
  }
  if (family == KernelFamily::Matern32) {
    std::chi_squared_distribution<double> chi2(3.0);
    for (Index m = 0; m < count; ++m) z.row(m) *= std::sqrt(3.0 / chi2(rng));
  }
  return z;
}

BasisPtr build_rff(const KernelSpec& spec, Index features, std::mt19937_64& rng) {
  spec.validate();
  if (features < 2 || features % 2 != 0) {
    throw std::invalid_argument("build_rff: feature count must be even and positive");
  }
  return std::make_shared<FourierBasis>(spec, draw_unit_frequencies(spec.family, features / 2, spec.dim(), rng));
}

// ---------------------------------------------------------------------------
// Additive HSGP

Index HsgpDomain::total_features() const {
  return std::accumulate(features_per_dim.begin(), features_per_dim.end(), Index{0});
}

HsgpDomain HsgpDomain::from_data(const MatrixRef& x, double scale, std::vector<int> features_per_dim) {
  if (!(scale > 1.0)) throw std::invalid_argument("HsgpDomain: scale factor must exceed 1");
  if (x.cols() < 1) throw std::invalid_argument("HsgpDomain: need pretraining data");
  Vector l = scale * x.cwiseAbs().rowwise().maxCoeff();
  // A dimension that is identically zero still needs a non-empty domain.
  for (Index d = 0; d < l.size(); ++d) {
    if (!(l(d) > 0.0)) l(d) = scale;
  }
  return HsgpDomain{std::move(l), scale, std::move(features_per_dim)};
}

HsgpBasis::HsgpBasis(KernelSpec spec, HsgpDomain domain)
    : spec_(std::move(spec)), domain_(std::move(domain)),
      out_of_domain_(std::make_shared<std::atomic<std::size_t>>(0)) {
  spec_.validate();
  const Index dim = spec_.dim();
  require_dim(domain_.half_widths.size(), dim, "HsgpBasis half widths");
  require_dim(static_cast<Index>(domain_.features_per_dim.size()), dim, "HsgpBasis feature counts");
  if (!(domain_.half_widths.array() > 0.0).all()) throw std::invalid_argument("HsgpBasis: half widths must be positive");

  for (Index d = 0; d < dim; ++d) {
    const int count = domain_.features_per_dim[static_cast<std::size_t>(d)];
    if (count < 1) throw std::invalid_argument("HsgpBasis: each dimension needs at least one feature");
    const double l_half = domain_.half_widths(d);
    Vector omega(count);
    Vector amp(count);
    for (int j = 0; j < count; ++j) {
      omega(j) = (j + 1) * std::numbers::pi / (2.0 * l_half);
      amp(j) = std::sqrt(spectral_density_1d(spec_, d, omega(j))) / std::sqrt(l_half);
    }
    offsets_.push_back(total_);
    total_ += count;
    omegas_.push_back(std::move(omega));
    amplitudes_.push_back(std::move(amp));
  }
}

std::size_t HsgpBasis::out_of_domain_count() const { return out_of_domain_->load(); }

void HsgpBasis::featurize_into(const VectorRef& x, Eigen::Ref<Vector> out) const {
  check_finite_input(x);
  bool outside = false;
  for (Index d = 0; d < spec_.dim(); ++d) {
    const double l_half = domain_.half_widths(d);
    if (std::abs(x(d)) > l_half) outside = true;
    const auto& omega = omegas_[static_cast<std::size_t>(d)];
    const auto& amp = amplitudes_[static_cast<std::size_t>(d)];
    const Index off = offsets_[static_cast<std::size_t>(d)];
    for (Index j = 0; j < omega.size(); ++j) {
      out(off + j) = amp(j) * std::sin(omega(j) * (x(d) + l_half));
    }
  }
  if (outside) out_of_domain_->fetch_add(1, std::memory_order_relaxed);
}

Vector HsgpBasis::hyper() const { return spec_.lengthscales.array().log(); }

BasisPtr HsgpBasis::with_hyper(const VectorRef& eta) const {
  require_dim(eta.size(), spec_.dim(), "HsgpBasis::with_hyper");
  KernelSpec spec = spec_;
  spec.lengthscales = eta.array().exp();
  return std::make_shared<HsgpBasis>(spec, domain_);
}

Vector HsgpBasis::hyper_gradient(const MatrixRef& x, const MatrixRef& dl_dphi) const {
  const Matrix phi = design(x);
  const Vector gp = dl_dphi.cwiseProduct(phi).rowwise().sum();
  Vector grad = Vector::Zero(spec_.dim());
  for (Index d = 0; d < spec_.dim(); ++d) {
    const auto& omega = omegas_[static_cast<std::size_t>(d)];
    const Index off = offsets_[static_cast<std::size_t>(d)];
    for (Index j = 0; j < omega.size(); ++j) {
      grad(d) += 0.5 * spectral_density_1d_dlog_lengthscale(spec_, d, omega(j)) * gp(off + j);
    }
  }
  return grad;
}

nlohmann::json HsgpBasis::to_json() const {
  return {{"kind", "hsgp"},
          {"kernel", to_string(spec_.family)},
          {"lengthscales", io::vector_to_json(spec_.lengthscales)},
          {"process_scale", spec_.process_scale},
          {"half_widths", io::vector_to_json(domain_.half_widths)},
          {"scale", domain_.scale},
          {"features_per_dim", domain_.features_per_dim}};
}

BasisPtr build_linear(Index dim, bool intercept) { return std::make_shared<LinearBasis>(dim, intercept); }

BasisPtr build_polynomial_additive(Index dim, int degree) {
  return std::make_shared<PolynomialBasis>(dim, degree);
}

BasisPtr build_hsgp_additive(const KernelSpec& spec, const HsgpDomain& domain) {
  return std::make_shared<HsgpBasis>(spec, domain);
}

}  // namespace doebe
