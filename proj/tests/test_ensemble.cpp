#include "doebe/ensemble.hpp"
#include "doebe/basis.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace doebe;

namespace {

std::vector<ExpertModel> linear_experts(Index count, Index dim, double noise = 0.25) {
  std::vector<ExpertModel> out;
  const BasisPtr b = build_linear(dim, true);
  for (Index m = 0; m < count; ++m) out.push_back(make_expert(b, 0.5 + 0.5 * static_cast<double>(m), noise));
  return out;
}

}  // namespace

TEST_CASE("uniform initial weights") {
  const EnsembleState s = make_ensemble(linear_experts(4, 2));
  CHECK(s.weights == Vector::Constant(4, 0.25));
  CHECK_THROWS(make_ensemble({}));
}

TEST_CASE("mixture moments equal an explicit sum over components") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PredictiveGaussian> comps(5);
    Vector w(5);
    for (int m = 0; m < 5; ++m) {
      comps[m].mean = u(rng) - 1.0;
      comps[m].variance = u(rng);
      w(m) = u(rng);
    }
    w /= w.sum();
    double mean = 0.0, second = 0.0;
    for (int m = 0; m < 5; ++m) {
      mean += w(m) * comps[m].mean;
      second += w(m) * (comps[m].variance + comps[m].mean * comps[m].mean);
    }
    const MixturePrediction p = mixture_moments(comps, w);
    CHECK(p.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(second - mean * mean).epsilon(1e-10));
  }
}

TEST_CASE("a single-expert ensemble predicts like its expert") {
  EnsembleState s = make_ensemble(linear_experts(1, 2));
  Vector x(2);
  x << 0.3, -0.7;
  const PredictiveGaussian e = predict(s.experts[0], s.experts[0].basis->featurize(x));
  const MixturePrediction p = ensemble_predict(s, x);
  CHECK(p.mean == e.mean);
  CHECK(p.variance == doctest::Approx(e.variance).epsilon(1e-15));
  const StepResult r = step(s, x, 1.0);
  CHECK(s.weights(0) == 1.0);
  CHECK(r.prediction.log_density == doctest::Approx(log_predictive_density(e, 1.0)).epsilon(1e-15));
}

TEST_CASE("step applies Bayes' rule to the weights") {
  EnsembleState s = make_ensemble(linear_experts(3, 1));
  s.weights << 0.2, 0.5, 0.3;
  Vector x(1);
  x << 0.8;
  Vector post(3);
  for (Index m = 0; m < 3; ++m) {
    const ExpertModel& e = s.experts[static_cast<std::size_t>(m)];
    post(m) = s.weights(m) * std::exp(log_predictive_density(predict(e, e.basis->featurize(x)), 1.7));
  }
  const double z = post.sum();
  post /= z;
  const StepResult r = step(s, x, 1.7);
  CHECK(testutil::rel_err(s.weights, post) < 1e-13);
  CHECK(r.prediction.log_density == doctest::Approx(std::log(z)).epsilon(1e-13));
  CHECK(std::abs(s.weights.sum() - 1.0) < 1e-14);
}

TEST_CASE("weights below the floor are zeroed and the rest renormalized") {
  std::vector<ExpertModel> experts = linear_experts(2, 1, 1e-4);
  experts[1].posterior.mean(0) = 50.0;  // wildly wrong intercept
  EnsembleState s = make_ensemble(std::move(experts));
  Vector x(1);
  x << 0.0;
  step(s, x, 0.0);
  CHECK(s.weights(1) == 0.0);
  CHECK(s.weights(0) == 1.0);
  // Without switching the zero weight is permanent.
  for (int t = 0; t < 5; ++t) step(s, x, 50.0);
  CHECK(s.weights(1) == 0.0);
}

TEST_CASE("extreme residuals stay finite in the log domain") {
  EnsembleState s = make_ensemble(linear_experts(2, 1, 1e-6));
  Vector x(1);
  x << 0.0;
  const StepResult r = step(s, x, 1e6);
  CHECK(std::isfinite(r.prediction.log_density));
  CHECK(std::abs(s.weights.sum() - 1.0) < 1e-15);
}

TEST_CASE("losing every expert is an error") {
  std::vector<ExpertModel> experts = linear_experts(2, 1);
  for (ExpertModel& e : experts) e.posterior.cov(0, 0) = std::nan("");
  EnsembleState s = make_ensemble(std::move(experts));
  Vector x(1);
  x << 0.0;
  CHECK_THROWS_AS(step(s, x, 0.0), NumericalError);
}

TEST_CASE("block switching matrix") {
  const Matrix q = block_switching_matrix(3, 2, 0.05);
  REQUIRE(q.rows() == 6);
  CHECK(q(0, 0) == doctest::Approx(0.95));
  CHECK(q(3, 0) == doctest::Approx(0.05));
  CHECK(q(0, 3) == doctest::Approx(0.05));
  CHECK(q(1, 0) == 0.0);
  CHECK(q(4, 0) == 0.0);
  for (Index blocks : {2, 3, 4}) {
    const Matrix qb = block_switching_matrix(4, blocks, 0.1);
    CHECK(((qb.colwise().sum().array() - 1.0).abs() < 1e-15).all());
    CHECK((qb.array() >= 0.0).all());
  }
  CHECK_THROWS(block_switching_matrix(2, 3, 0.6));
  CHECK_THROWS(block_switching_matrix(2, 2, -0.1));
}

TEST_CASE("uniform switching matrix") {
  const Matrix q = uniform_switching_matrix(4, 0.3);
  CHECK(q(2, 2) == doctest::Approx(0.7));
  CHECK(q(0, 2) == doctest::Approx(0.1));
  CHECK(((q.colwise().sum().array() - 1.0).abs() < 1e-15).all());
}

TEST_CASE("build_edoebe duplicates experts into dynamic and static blocks") {
  const std::vector<ExpertModel> base = linear_experts(3, 2);
  const EnsembleState s = build_edoebe(base, {1e-3}, 0.05);
  REQUIRE(s.size() == 6);
  for (Index m = 0; m < 3; ++m) {
    CHECK(s.experts[static_cast<std::size_t>(m)].drift_var == 1e-3);
    CHECK(s.experts[static_cast<std::size_t>(m + 3)].drift_var == 0.0);
    CHECK(s.experts[static_cast<std::size_t>(m)].basis == base[static_cast<std::size_t>(m)].basis);
  }
  REQUIRE(s.switching);
  CHECK(*s.switching == block_switching_matrix(3, 2, 0.05));
  CHECK(build_edoebe(base, {1e-3, 1e-2}, 0.05).size() == 9);
  CHECK_THROWS(build_edoebe(base, {1e-3}, 0.0));
  CHECK_THROWS(build_edoebe(base, {}, 0.05));
}

TEST_CASE("switching revives zeroed weights whose partner is positive") {
  std::mt19937_64 rng(32);
  const std::vector<ExpertModel> base = linear_experts(3, 1);
  EnsembleState s = build_edoebe(base, {1e-2}, 0.05);
  s.weights << 0.0, 0.3, 0.0, 0.4, 0.0, 0.3;
  const RevivalReport rep = revive_check(s);
  CHECK(rep.revived == std::vector<Index>{0, 2, 4});
  CHECK(rep.post_switch(0) == doctest::Approx(0.05 * 0.4));
  CHECK(rep.post_switch(4) == doctest::Approx(0.05 * 0.3));
  // Randomized: after one step every zeroed weight with a positive partner is positive.
  for (int trial = 0; trial < 20; ++trial) {
    EnsembleState t = build_edoebe(base, {1e-2}, 0.05);
    Vector w = testutil::uniform_matrix(6, 1, rng, 0.0, 1.0).col(0);
    w(trial % 3) = 0.0;
    w /= w.sum();
    t.weights = w;
    Vector x(1);
    x << 0.1;
    step(t, x, 0.2);
    CHECK(t.weights(trial % 3) > 0.0);
  }
}

TEST_CASE("failed experts are excluded for one step without aborting") {
  std::vector<ExpertModel> experts = linear_experts(2, 1);
  experts[1].posterior.cov(0, 0) = std::nan("");
  EnsembleState s = make_ensemble(std::move(experts));
  Vector x(1);
  x << 0.5;
  const StepResult r = step(s, x, 0.1);
  CHECK(r.diagnostics.failed_experts == std::vector<Index>{1});
  CHECK(s.weights(1) == 0.0);
  CHECK(s.weights(0) == 1.0);
}

TEST_CASE("logistic experts update through the Laplace step") {
  const BasisPtr b = build_linear(2, true);
  EnsembleState s = make_ensemble({make_expert(b, 10.0, 1.0, 0.0, Likelihood::Logistic),
                                   make_expert(b, 1.0, 1.0, 0.0, Likelihood::Logistic)});
  Vector x(2);
  x << 1.0, 0.5;
  const MixturePrediction before = ensemble_predict(s, x);
  CHECK(before.mean == doctest::Approx(0.0).epsilon(1e-15));
  for (int t = 0; t < 30; ++t) step(s, x, 1.0);
  CHECK(ensemble_predict(s, x).mean > 0.5);
}

TEST_CASE("ensemble state round-trips through json bit for bit") {
  std::mt19937_64 rng(33);
  const BasisPtr rff = build_rff(KernelSpec::isotropic(KernelFamily::SquaredExponential, 2, 0.7), 10, rng);
  std::vector<ExpertModel> base{make_expert(rff, 1.0, 0.25), make_expert(build_linear(2, true), 0.5, 0.3)};
  EnsembleState s = build_edoebe(base, {1e-3}, 0.05);
  for (int t = 0; t < 20; ++t) {
    const Vector x = testutil::random_vector(2, rng);
    step(s, x, x.sum());
  }
  const EnsembleState back = ensemble_from_json(nlohmann::json::parse(ensemble_to_json(s).dump()));
  CHECK(back.weights == s.weights);
  CHECK(*back.switching == *s.switching);
  REQUIRE(back.size() == s.size());
  for (std::size_t m = 0; m < s.experts.size(); ++m) {
    CHECK(back.experts[m].posterior.mean == s.experts[m].posterior.mean);
    CHECK(back.experts[m].posterior.cov == s.experts[m].posterior.cov);
    CHECK(back.experts[m].drift_var == s.experts[m].drift_var);
  }
  CHECK(back.experts[0].basis == back.experts[2].basis);
  // Identical continuation.
  EnsembleState a = s, b = back;
  for (int t = 0; t < 10; ++t) {
    const Vector x = testutil::random_vector(2, rng);
    CHECK(step(a, x, 0.3).prediction.log_density == step(b, x, 0.3).prediction.log_density);
  }
  CHECK(a.weights == b.weights);
}

TEST_CASE("validation rejects malformed states") {
  EnsembleState s = make_ensemble(linear_experts(2, 1));
  s.weights << 0.7, 0.7;
  CHECK_THROWS(s.validate());
  s.weights << 0.5, 0.5;
  s.switching = Matrix::Identity(2, 2) * 0.5;
  CHECK_THROWS(s.validate());
}
