#include "doebe/bayes_linear.hpp"
#include "doebe/basis.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace doebe;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Direct batch posterior: Sigma_N = (I / s + Phi Phi' / n)^-1, mu_N = Sigma_N Phi y / n.
GaussianPosterior batch_posterior(const Matrix& phi, const Vector& y, double s, double n) {
  const Index f = phi.rows();
  const Matrix precision = Matrix::Identity(f, f) / s + phi * phi.transpose() / n;
  GaussianPosterior p;
  p.cov = precision.inverse();
  p.mean = p.cov * phi * y / n;
  return p;
}

// Direct N x N evaluation of log N(y | 0, s Phi' Phi + n I).
double batch_evidence(const Matrix& phi, const Vector& y, double s, double n) {
  const Index N = y.size();
  const Matrix c = s * phi.transpose() * phi + n * Matrix::Identity(N, N);
  Eigen::LDLT<Matrix> ldlt(c);
  const double logdet = ldlt.vectorD().array().log().sum();
  return -0.5 * (y.dot(ldlt.solve(y)) + logdet + N * kLog2Pi);
}

}  // namespace

TEST_CASE("prediction formula") {
  ExpertModel e = make_expert(build_linear(2, false), 2.0, 0.25);
  e.posterior.mean << 1.0, -1.0;
  Vector phi(2);
  phi << 0.5, 2.0;
  const PredictiveGaussian p = predict(e, phi);
  CHECK(p.mean == doctest::Approx(-1.5));
  CHECK(p.variance == doctest::Approx(2.0 * 4.25 + 0.25));
}

TEST_CASE("recursive updates reproduce the batch posterior") {
  std::mt19937_64 rng(21);
  const Index f = 6, n = 60;
  const Matrix phi = testutil::random_matrix(f, n, rng);
  const Vector y = testutil::random_vector(n, rng);
  ExpertModel e = make_expert(build_linear(f, false), 1.5, 0.3);
  for (Index t = 0; t < n; ++t) {
    const PredictiveGaussian p = predict(e, phi.col(t));
    e.posterior = correct(e, phi.col(t), y(t), p);
  }
  const GaussianPosterior b = batch_posterior(phi, y, 1.5, 0.3);
  CHECK(testutil::rel_err(e.posterior.mean, b.mean) < 1e-10);
  CHECK(testutil::rel_err(e.posterior.cov, b.cov) < 1e-10);
  CHECK((e.posterior.cov - e.posterior.cov.transpose()).norm() == 0.0);
}

TEST_CASE("covariance stays symmetric positive definite over long streams") {
  std::mt19937_64 rng(22);
  ExpertModel e = make_expert(build_linear(4, false), 1.0, 0.01, 1e-3);
  for (int t = 0; t < 3000; ++t) {
    const Vector phi = testutil::random_vector(4, rng);
    e.posterior = drift(e);
    const PredictiveGaussian p = predict(e, phi);
    e.posterior = correct(e, phi, phi.sum(), p);
  }
  CHECK((e.posterior.cov - e.posterior.cov.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(e.posterior.cov);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("drift inflates the covariance only") {
  ExpertModel e = make_expert(build_linear(3, false), 0.5, 0.25, 1e-3);
  e.posterior.mean << 1.0, 2.0, 3.0;
  const GaussianPosterior d = drift(e);
  CHECK(d.mean == e.posterior.mean);
  CHECK((d.cov - (e.posterior.cov + 1e-3 * Matrix::Identity(3, 3))).norm() == 0.0);
  e.drift_var = 0.0;
  CHECK(drift(e).cov == e.posterior.cov);
}

TEST_CASE("degenerate predictive variance is rejected") {
  ExpertModel e = make_expert(build_linear(1, false), 1.0, 0.25);
  PredictiveGaussian p;
  p.variance = 1e-13;
  CHECK_THROWS_AS(correct(e, Vector::Ones(1), 0.0, p), NumericalError);
}

TEST_CASE("log predictive density of a standard normal at zero") {
  PredictiveGaussian p;
  p.mean = 0.0;
  p.variance = 1.0;
  CHECK(log_predictive_density(p, 0.0) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-15));
}

TEST_CASE("sequential predictive densities sum to the log evidence") {
  std::mt19937_64 rng(23);
  const Index f = 8, n = 100;
  const Matrix phi = testutil::random_matrix(f, n, rng);
  const Vector y = testutil::random_vector(n, rng);
  ExpertModel e = make_expert(build_linear(f, false), 0.7, 0.4);
  double total = 0.0;
  for (Index t = 0; t < n; ++t) {
    const PredictiveGaussian p = predict(e, phi.col(t));
    total += log_predictive_density(p, y(t));
    e.posterior = correct(e, phi.col(t), y(t), p);
  }
  const double ev = log_evidence(phi, y, 0.7, 0.4);
  CHECK(std::abs(total - ev) / std::abs(ev) < 1e-10);
}

TEST_CASE("evidence forms agree with the direct N x N computation") {
  std::mt19937_64 rng(24);
  for (auto [f, n] : {std::pair<Index, Index>{5, 30}, {30, 5}, {10, 10}}) {
    const Matrix phi = testutil::random_matrix(f, n, rng);
    const Vector y = testutil::random_vector(n, rng);
    const double direct = batch_evidence(phi, y, 1.3, 0.2);
    CHECK(log_evidence(phi, y, 1.3, 0.2, EvidenceForm::Primal) == doctest::Approx(direct).epsilon(1e-10));
    CHECK(log_evidence(phi, y, 1.3, 0.2, EvidenceForm::Dual) == doctest::Approx(direct).epsilon(1e-10));
    CHECK(log_evidence(phi, y, 1.3, 0.2) == doctest::Approx(direct).epsilon(1e-10));
    CHECK(log_evidence_with_gradient(phi, y, 1.3, 0.2).value == doctest::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("evidence gradient matches finite differences") {
  std::mt19937_64 rng(25);
  const Index f = 7, n = 20;
  const Matrix phi = testutil::random_matrix(f, n, rng);
  const Vector y = testutil::random_vector(n, rng);
  const double s = 0.8, noise = 0.3;
  const EvidenceGradient g = log_evidence_with_gradient(phi, y, s, noise);

  auto by_phi = [&](const Vector& flat) {
    return log_evidence(Eigen::Map<const Matrix>(flat.data(), f, n), y, s, noise);
  };
  const Vector flat = Eigen::Map<const Vector>(phi.data(), f * n);
  const Vector fd = testutil::numeric_gradient(by_phi, flat, 1e-6);
  CHECK(testutil::rel_err(Eigen::Map<const Vector>(g.dl_dphi.data(), f * n), fd) < 1e-7);

  auto by_scales = [&](const Vector& v) {
    return log_evidence(phi, y, std::exp(2.0 * v(0)), std::exp(2.0 * v(1)));
  };
  Vector v(2);
  v << 0.5 * std::log(s), 0.5 * std::log(noise);
  const Vector fd2 = testutil::numeric_gradient(by_scales, v, 1e-6);
  CHECK(g.dl_dlog_prior_sd == doctest::Approx(fd2(0)).epsilon(1e-7));
  CHECK(g.dl_dlog_noise_sd == doctest::Approx(fd2(1)).epsilon(1e-7));
}

TEST_CASE("logistic predictive uses the probit approximation") {
  ExpertModel e = make_expert(build_linear(2, false), 3.0, 1.0, 0.0, Likelihood::Logistic);
  e.posterior.mean << 0.4, -0.2;
  Vector phi(2);
  phi << 1.0, 2.0;
  const double m = 0.0;
  const double v = 3.0 * 5.0;
  const PredictiveGaussian p = predict_logistic(e, phi);
  CHECK(p.prob_positive == doctest::Approx(sigmoid(m / std::sqrt(1.0 + M_PI * v / 8.0))));
  CHECK(p.mean == doctest::Approx(2.0 * p.prob_positive - 1.0));
  CHECK(p.variance == doctest::Approx(1.0 - p.mean * p.mean));
  CHECK(predict(e, phi).prob_positive == p.prob_positive);
}

TEST_CASE("laplace step matches a full Newton MAP oracle") {
  std::mt19937_64 rng(26);
  const Index f = 5;
  ExpertModel e = make_expert(build_linear(f, false), 2.0, 1.0, 0.0, Likelihood::Logistic);
  e.posterior.mean = testutil::random_vector(f, rng);
  const Matrix a = testutil::random_matrix(f, f, rng);
  e.posterior.cov = a * a.transpose() + 0.5 * Matrix::Identity(f, f);
  for (double y : {-1.0, 1.0}) {
    const Vector phi = testutil::random_vector(f, rng);
    const LaplaceResult r = laplace_step(e, phi, y);
    REQUIRE(r.converged);

    const Matrix precision = e.posterior.cov.inverse();
    Vector theta = e.posterior.mean;
    Matrix hess;
    for (int it = 0; it < 50; ++it) {
      const double z = phi.dot(theta);
      const Vector grad = -y * sigmoid(-y * z) * phi + precision * (theta - e.posterior.mean);
      hess = precision + sigmoid(z) * sigmoid(-z) * phi * phi.transpose();
      theta -= hess.ldlt().solve(grad);
    }
    const double z = phi.dot(theta);
    hess = precision + sigmoid(z) * sigmoid(-z) * phi * phi.transpose();
    CHECK(testutil::rel_err(r.posterior.mean, theta) < 1e-8);
    CHECK(testutil::rel_err(r.posterior.cov, hess.inverse()) < 1e-8);

    // Precision never decreases (Loewner order).
    Eigen::SelfAdjointEigenSolver<Matrix> eig(r.posterior.cov.inverse() - precision);
    CHECK(eig.eigenvalues().minCoeff() > -1e-8);

    const PredictiveGaussian pre = predict_logistic(e, phi);
    const double p_y = y > 0 ? pre.prob_positive : 1.0 - pre.prob_positive;
    CHECK(r.log_predictive == doctest::Approx(std::log(p_y)).epsilon(1e-12));
  }
}

TEST_CASE("expert construction validates its inputs") {
  CHECK_THROWS(make_expert(build_linear(2, false), -1.0, 0.25));
  CHECK_THROWS(make_expert(build_linear(2, false), 1.0, 0.0));
  CHECK_THROWS(make_expert(nullptr, 1.0, 0.25));
  const ExpertModel e = make_expert(build_linear(2, true), 2.0, 0.25);
  CHECK(e.posterior.mean == Vector::Zero(3));
  CHECK(e.posterior.cov == 2.0 * Matrix::Identity(3, 3));
  CHECK(likelihood_from_string(to_string(Likelihood::Logistic)) == Likelihood::Logistic);
}
