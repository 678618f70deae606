#include "doebe/basis.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace doebe;

namespace {

// Sum of dL/dPhi .* Phi(eta): a scalar whose eta-gradient is hyper_gradient(x, G).
void check_hyper_gradient(const BasisModel& basis, const Matrix& x, double tol) {
  std::mt19937_64 rng(11);
  const Matrix g = testutil::random_matrix(basis.feature_dim(), x.cols(), rng);
  auto loss = [&](const Vector& eta) { return (basis.with_hyper(eta)->design(x).array() * g.array()).sum(); };
  const Vector eta = basis.hyper();
  const Vector fd = testutil::numeric_gradient(loss, eta, 1e-6);
  const Vector an = basis.hyper_gradient(x, g);
  REQUIRE(an.size() == eta.size());
  CHECK(testutil::rel_err(an, fd) < tol);
}

Matrix grid_1d(Index n, double lo, double hi) {
  Matrix x(1, n);
  for (Index i = 0; i < n; ++i) x(0, i) = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return x;
}

}  // namespace

TEST_CASE("linear basis") {
  const BasisPtr b = build_linear(3, true);
  Vector x(3);
  x << 1.0, -2.0, 0.5;
  const Vector phi = b->featurize(x);
  REQUIRE(phi.size() == 4);
  CHECK(phi(0) == 1.0);
  CHECK(phi.tail(3) == x);
  CHECK(build_linear(3, false)->featurize(x) == x);
  CHECK_THROWS_AS(b->featurize(Vector::Ones(2)), DimensionError);
}

TEST_CASE("additive polynomial basis") {
  const BasisPtr b = build_polynomial_additive(2, 3);
  CHECK(b->feature_dim() == 7);
  Vector x(2);
  x << 2.0, -1.0;
  Vector expected(7);
  expected << 1.0, 2.0, 4.0, 8.0, -1.0, 1.0, -1.0;
  CHECK(b->featurize(x) == expected);
  CHECK(b->intercept_included());
  CHECK_THROWS(build_polynomial_additive(2, 0));
}

TEST_CASE("design matrix stacks feature columns") {
  std::mt19937_64 rng(1);
  const Matrix x = testutil::random_matrix(2, 5, rng);
  const BasisPtr b = build_rff(KernelSpec::isotropic(KernelFamily::SquaredExponential, 2, 1.0), 10, rng);
  const Matrix phi = b->design(x);
  CHECK(phi.rows() == 10);
  CHECK(phi.cols() == 5);
  CHECK((phi.col(3) - b->featurize(x.col(3))).norm() == 0.0);
}

TEST_CASE("rff requires an even feature count") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(build_rff(KernelSpec::isotropic(KernelFamily::SquaredExponential, 1, 1.0), 7, rng),
                  std::invalid_argument);
}

TEST_CASE("rff gram converges to the kernel") {
  // Monte Carlo oracle: with many frequencies phi(x)'phi(x') approaches k(x, x').
  std::mt19937_64 rng(5);
  const Matrix x = testutil::uniform_matrix(2, 12, rng, -1.5, 1.5);
  for (KernelFamily fam : {KernelFamily::SquaredExponential, KernelFamily::Matern32}) {
    KernelSpec spec{fam, Vector(2), 1.3};
    spec.lengthscales << 0.8, 1.6;
    const BasisPtr b = build_rff(spec, 40000, rng);
    const Matrix phi = b->design(x);
    const Matrix approx = phi.transpose() * phi;
    const Matrix exact = gram_matrix(spec, x, x);
    CHECK((approx - exact).cwiseAbs().maxCoeff() < 0.05 * 1.69);
    // phi(x)'phi(x) = sf^2 exactly (sin^2 + cos^2).
    CHECK(approx.diagonal().array().maxCoeff() == doctest::Approx(1.69).epsilon(1e-12));
  }
}

TEST_CASE("matern unit frequencies follow a t distribution with 3 dof") {
  std::mt19937_64 rng(9);
  const Matrix z = draw_unit_frequencies(KernelFamily::Matern32, 200000, 1, rng);
  // Infinite fourth moment, so compare the median of |z|: the 0.75 quantile of t_3.
  std::vector<double> a(z.data(), z.data() + z.size());
  for (double& v : a) v = std::abs(v);
  std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
  CHECK(a[a.size() / 2] == doctest::Approx(0.7648923).epsilon(0.01));
}

TEST_CASE("hsgp approximates the SE kernel inside the domain") {
  const KernelSpec spec = KernelSpec::isotropic(KernelFamily::SquaredExponential, 1, 1.0, 1.0);
  const Matrix x = grid_1d(50, -3.0, 3.0);
  const HsgpDomain domain = HsgpDomain::from_data(x, 1.5, {64});
  CHECK(domain.half_widths(0) == doctest::Approx(4.5));
  const BasisPtr b = build_hsgp_additive(spec, domain);
  CHECK(b->feature_dim() == 64);
  const Matrix phi = b->design(x);
  const Matrix err = phi.transpose() * phi - gram_matrix(spec, x, x);
  // Away from the boundary only truncation error remains.
  CHECK(err.block(12, 12, 26, 26).cwiseAbs().maxCoeff() < 1e-3);
  // At the edges the Dirichlet condition pulls the variance down by about
  // the mirror-image term k(2 (L - |x|)) = exp(-4.5).
  CHECK(std::abs(err(0, 0) + std::exp(-4.5)) < 1e-3);
  CHECK(err.cwiseAbs().maxCoeff() < 1.2 * std::exp(-4.5));
}

TEST_CASE("hsgp feature formula") {
  const KernelSpec spec = KernelSpec::isotropic(KernelFamily::Matern32, 1, 0.7, 1.2);
  HsgpDomain domain{Vector::Constant(1, 2.0), 1.5, {5}};
  const BasisPtr b = build_hsgp_additive(spec, domain);
  Vector x(1);
  x << 0.3;
  const Vector phi = b->featurize(x);
  for (int j = 1; j <= 5; ++j) {
    const double w = j * M_PI / 4.0;
    const double expected = std::sqrt(spectral_density_1d(spec, 0, w)) * std::sin(w * 2.3) / std::sqrt(2.0);
    CHECK(phi(j - 1) == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("hsgp is additive across dimensions") {
  KernelSpec spec{KernelFamily::SquaredExponential, Vector(2), 1.0};
  spec.lengthscales << 0.5, 2.0;
  HsgpDomain domain{Vector::Constant(2, 3.0), 1.5, {4, 6}};
  const auto b = std::dynamic_pointer_cast<const HsgpBasis>(build_hsgp_additive(spec, domain));
  REQUIRE(b);
  CHECK(b->feature_dim() == 10);
  Vector x(2);
  x << 0.4, -1.1;
  const Vector phi = b->featurize(x);
  const BasisPtr first = build_hsgp_additive(spec.marginal(0), HsgpDomain{Vector::Constant(1, 3.0), 1.5, {4}});
  const BasisPtr second = build_hsgp_additive(spec.marginal(1), HsgpDomain{Vector::Constant(1, 3.0), 1.5, {6}});
  CHECK((phi.head(4) - first->featurize(x.head(1))).norm() == 0.0);
  CHECK((phi.tail(6) - second->featurize(x.tail(1))).norm() == 0.0);
}

TEST_CASE("hsgp counts out-of-domain inputs") {
  const KernelSpec spec = KernelSpec::isotropic(KernelFamily::SquaredExponential, 1, 1.0);
  const auto b =
      std::dynamic_pointer_cast<const HsgpBasis>(build_hsgp_additive(spec, HsgpDomain{Vector::Ones(1), 1.5, {8}}));
  Vector x(1);
  x << 0.5;
  b->featurize(x);
  CHECK(b->out_of_domain_count() == 0);
  x << 1.5;
  b->featurize(x);
  x << -2.0;
  b->featurize(x);
  CHECK(b->out_of_domain_count() == 2);
}

TEST_CASE("rbf network features") {
  Matrix centers(2, 2);
  centers << 0.0, 0.0, 1.0, -1.0;
  Vector ell(2);
  ell << 0.5, 2.0;
  RbfBasis b(centers, ell);
  Vector x(2);
  x << 0.5, 0.5;
  const Vector phi = b.featurize(x);
  CHECK(phi(0) == doctest::Approx(std::exp(-0.5 * (1.0 + 0.0625))).epsilon(1e-14));
  CHECK(phi(1) == doctest::Approx(std::exp(-0.5 * (1.0 + 2.25 / 4.0))).epsilon(1e-14));
}

TEST_CASE("kmeans centers") {
  std::mt19937_64 rng(2);
  Matrix x(1, 6);
  x << 0.0, 0.1, 0.2, 10.0, 10.1, 10.2;
  const Matrix c = kmeans_centers(x, 2, rng);
  REQUIRE(c.rows() == 2);
  std::vector<double> v{c(0, 0), c(1, 0)};
  std::sort(v.begin(), v.end());
  CHECK(v[0] == doctest::Approx(0.1));
  CHECK(v[1] == doctest::Approx(10.1));
  const Matrix y = testutil::uniform_matrix(3, 50, rng, 0.0, 1.0);
  std::mt19937_64 a(4), b(4);
  CHECK(kmeans_centers(y, 5, a) == kmeans_centers(y, 5, b));
  CHECK_THROWS(kmeans_centers(y, 51, a));
}

TEST_CASE("hyper-parameter gradients match finite differences") {
  std::mt19937_64 rng(7);
  const Matrix x = testutil::uniform_matrix(2, 15, rng, -2.0, 2.0);
  KernelSpec se{KernelFamily::SquaredExponential, Vector(2), 1.0};
  se.lengthscales << 0.9, 1.4;
  KernelSpec mat = se;
  mat.family = KernelFamily::Matern32;

  SUBCASE("rbf") { check_hyper_gradient(RbfBasis(testutil::random_matrix(4, 2, rng), se.lengthscales), x, 1e-6); }
  SUBCASE("rff length scales") {
    check_hyper_gradient(*build_rff(se, 12, rng), x, 1e-6);
    check_hyper_gradient(*build_rff(mat, 12, rng), x, 1e-6);
  }
  SUBCASE("rff optimized frequencies") {
    const Matrix unit = draw_unit_frequencies(KernelFamily::SquaredExponential, 6, 2, rng);
    const auto off = FourierBasis::with_frequencies(se, unit);
    CHECK(off->hyper().size() == 12);
    check_hyper_gradient(*off, x, 1e-6);
  }
  SUBCASE("hsgp") {
    HsgpDomain domain{Vector::Constant(2, 3.0), 1.5, {5, 7}};
    check_hyper_gradient(*build_hsgp_additive(se, domain), x, 1e-6);
    check_hyper_gradient(*build_hsgp_additive(mat, domain), x, 1e-6);
  }
  SUBCASE("parameter-free bases") {
    CHECK(build_linear(2, true)->hyper().size() == 0);
    CHECK(build_polynomial_additive(2, 2)->hyper().size() == 0);
  }
}

TEST_CASE("with_hyper of the current parameters reproduces the features") {
  std::mt19937_64 rng(8);
  const Matrix x = testutil::uniform_matrix(2, 6, rng, -1.0, 1.0);
  const KernelSpec spec = KernelSpec::isotropic(KernelFamily::Matern32, 2, 0.6);
  std::vector<BasisPtr> bases{build_rff(spec, 8, rng),
                              build_hsgp_additive(spec, HsgpDomain{Vector::Constant(2, 2.0), 1.5, {3, 3}}),
                              std::make_shared<RbfBasis>(testutil::random_matrix(3, 2, rng), spec.lengthscales)};
  for (const BasisPtr& b : bases) {
    const Matrix again = b->with_hyper(b->hyper())->design(x);
    CHECK((again - b->design(x)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("bases round-trip through json") {
  std::mt19937_64 rng(12);
  const Matrix x = testutil::uniform_matrix(2, 6, rng, -1.0, 1.0);
  const KernelSpec spec = KernelSpec::isotropic(KernelFamily::SquaredExponential, 2, 0.6, 1.1);
  std::vector<BasisPtr> bases{build_linear(2, true),
                              build_polynomial_additive(2, 3),
                              std::make_shared<RbfBasis>(testutil::random_matrix(3, 2, rng), spec.lengthscales),
                              build_rff(spec, 8, rng),
                              FourierBasis::with_frequencies(spec, testutil::random_matrix(4, 2, rng)),
                              build_hsgp_additive(spec, HsgpDomain{Vector::Constant(2, 2.0), 1.5, {3, 4}})};
  for (const BasisPtr& b : bases) {
    const BasisPtr back = BasisModel::from_json(nlohmann::json::parse(b->to_json().dump()));
    CHECK(back->kind() == b->kind());
    CHECK(back->design(x) == b->design(x));
  }
}
