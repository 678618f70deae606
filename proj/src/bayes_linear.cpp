#include "doebe/bayes_linear.hpp"

#include <cmath>
#include <numbers>

namespace doebe {

namespace {

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_sigmoid(double t) {
  if (t >= 0.0) return -std::log1p(std::exp(-t));
  return t - std::log1p(std::exp(t));
}

double jitter_for(const Matrix& a) { return 1e-10 * std::max(1.0, a.diagonal().cwiseAbs().mean()); }

void check_expert(const ExpertModel& expert, const VectorRef& phi) {
  require_dim(phi.size(), expert.feature_dim(), "expert features");
  if (!phi.allFinite()) throw std::invalid_argument("expert features contain non-finite values");
}

}  // namespace

std::string_view to_string(Likelihood likelihood) {
  return likelihood == Likelihood::Gaussian ? "gaussian" : "logistic";
}

Likelihood likelihood_from_string(std::string_view name) {
  if (name == "gaussian") return Likelihood::Gaussian;
  if (name == "logistic") return Likelihood::Logistic;
  throw std::invalid_argument("unknown likelihood '" + std::string(name) + "'");
}

GaussianPosterior init_posterior(Index features, double prior_var) {
  if (!(prior_var > 0.0)) throw std::invalid_argument("init_posterior: prior variance must be positive");
  if (features < 1) throw std::invalid_argument("init_posterior: need at least one feature");
  return GaussianPosterior{Vector::Zero(features), prior_var * Matrix::Identity(features, features)};
}

ExpertModel make_expert(BasisPtr basis, double prior_var, double noise_var, double drift_var,
                        Likelihood likelihood) {
  if (!basis) throw std::invalid_argument("make_expert: null basis");
  if (likelihood == Likelihood::Gaussian && !(noise_var > 0.0)) {
    throw std::invalid_argument("make_expert: noise variance must be positive");
  }
  if (!(drift_var >= 0.0)) throw std::invalid_argument("make_expert: drift variance must be non-negative");
  const Index f = basis->feature_dim();
  return ExpertModel{std::move(basis), init_posterior(f, prior_var), noise_var, drift_var, likelihood};
}

PredictiveGaussian predict(const ExpertModel& expert, const VectorRef& phi) {
  check_expert(expert, phi);
  if (expert.likelihood == Likelihood::Logistic) return predict_logistic(expert, phi);
  PredictiveGaussian out;
  out.mean = phi.dot(expert.posterior.mean);
  out.variance = phi.dot(expert.posterior.cov * phi) + expert.noise_var;
  return out;
}

GaussianPosterior correct(const ExpertModel& expert, const VectorRef& phi, double y,
                          const PredictiveGaussian& predictive) {
  check_expert(expert, phi);
  if (!(predictive.variance >= kMinPredictiveVariance)) {
    throw NumericalError("correct: predictive variance is degenerate (" + std::to_string(predictive.variance) + ")");
  }
  const GaussianPosterior& prior = expert.posterior;
  const Vector gain = prior.cov * phi;
  GaussianPosterior out;
  out.mean = prior.mean + gain * ((y - predictive.mean) / predictive.variance);
  out.cov = prior.cov;
  out.cov.noalias() -= (gain / predictive.variance) * gain.transpose();
  symmetrize(out.cov);
  return out;
}

GaussianPosterior drift(const ExpertModel& expert) {
  GaussianPosterior out = expert.posterior;
  if (expert.drift_var > 0.0) out.cov.diagonal().array() += expert.drift_var;
  return out;
}

double log_predictive_density(const PredictiveGaussian& predictive, double y) {
  const double r = y - predictive.mean;
  return -0.5 * (kLog2Pi + std::log(predictive.variance) + r * r / predictive.variance);
}

// ---------------------------------------------------------------------------
// Evidence

namespace {

double log_evidence_primal(const MatrixRef& phi, const VectorRef& y, double s, double n) {
  const Index count = y.size();
  Matrix c = s * (phi.transpose() * phi);
  c.diagonal().array() += n;
  const Eigen::LLT<Matrix> llt = cholesky_with_jitter(c, jitter_for(c), "log_evidence (primal)");
  const Matrix& l = llt.matrixLLT();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  const Vector a = llt.matrixL().solve(y);
  return -0.5 * (static_cast<double>(count) * kLog2Pi + logdet + a.squaredNorm());
}

double log_evidence_dual(const MatrixRef& phi, const VectorRef& y, double s, double n) {
  const Index count = y.size();
  const Index f = phi.rows();
  Matrix a = phi * phi.transpose();
  a.diagonal().array() += n / s;
  const Eigen::LLT<Matrix> llt = cholesky_with_jitter(a, jitter_for(a), "log_evidence (dual)");
  const double logdet_a = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double logdet_c = static_cast<double>(count) * std::log(n) - static_cast<double>(f) * std::log(n / s) + logdet_a;
  const Vector b = phi * y;
  const Vector lb = llt.matrixL().solve(b);
  const double quad = (y.squaredNorm() - lb.squaredNorm()) / n;
  return -0.5 * (static_cast<double>(count) * kLog2Pi + logdet_c + quad);
}

void check_evidence_inputs(const MatrixRef& phi, const VectorRef& y, double s, double n) {
  require_dim(y.size(), phi.cols(), "log_evidence targets");
  if (y.size() < 1) throw std::invalid_argument("log_evidence: need at least one observation");
  if (!(s > 0.0) || !(n > 0.0)) throw std::invalid_argument("log_evidence: variances must be positive");
}

}  // namespace

double log_evidence(const MatrixRef& phi, const VectorRef& y, double prior_var, double noise_var,
                    EvidenceForm form) {
  check_evidence_inputs(phi, y, prior_var, noise_var);
  if (form == EvidenceForm::Automatic) form = phi.rows() < phi.cols() ? EvidenceForm::Dual : EvidenceForm::Primal;
  return form == EvidenceForm::Dual ? log_evidence_dual(phi, y, prior_var, noise_var)
                                    : log_evidence_primal(phi, y, prior_var, noise_var);
}

double log_evidence(const BasisModel& basis, const MatrixRef& x, const VectorRef& y, double prior_var,
                    double noise_var, EvidenceForm form) {
  return log_evidence(basis.design(x), y, prior_var, noise_var, form);
}

EvidenceGradient log_evidence_with_gradient(const MatrixRef& phi, const VectorRef& y, double prior_var,
                                            double noise_var) {
  check_evidence_inputs(phi, y, prior_var, noise_var);
  const double s = prior_var;
  const double n = noise_var;
  const Index count = y.size();
  const Index f = phi.rows();

  Matrix a = phi * phi.transpose();
  a.diagonal().array() += n / s;
  const Eigen::LLT<Matrix> llt = cholesky_with_jitter(a, jitter_for(a), "log_evidence_with_gradient");
  const double logdet_a = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double logdet_c = static_cast<double>(count) * std::log(n) - static_cast<double>(f) * std::log(n / s) + logdet_a;

  const Vector u = llt.solve(phi * y);              // A^{-1} Phi y
  const Vector alpha = (y - phi.transpose() * u) / n;  // C^{-1} y
  const Matrix a_inv = llt.solve(Matrix::Identity(f, f));
  const double tr_a_inv = a_inv.trace();

  EvidenceGradient out;
  out.value = -0.5 * (static_cast<double>(count) * kLog2Pi + logdet_c + y.dot(alpha));
  out.dl_dphi = u * alpha.transpose() - a_inv * phi;

  const double tr_c_inv = (static_cast<double>(count) - (static_cast<double>(f) - (n / s) * tr_a_inv)) / n;
  const double dl_dn = 0.5 * (alpha.squaredNorm() - tr_c_inv);
  const double phi_alpha_sq = (phi * alpha).squaredNorm();
  const double dl_ds = 0.5 * (phi_alpha_sq - (static_cast<double>(f) - (n / s) * tr_a_inv) / s);
  out.dl_dlog_prior_sd = 2.0 * s * dl_ds;
  out.dl_dlog_noise_sd = 2.0 * n * dl_dn;
  return out;
}

// ---------------------------------------------------------------------------
// Logistic likelihood

PredictiveGaussian predict_logistic(const ExpertModel& expert, const VectorRef& phi) {
  check_expert(expert, phi);
  const double m = phi.dot(expert.posterior.mean);
  const double v = std::max(0.0, phi.dot(expert.posterior.cov * phi));
  const double kappa = 1.0 / std::sqrt(1.0 + std::numbers::pi * v / 8.0);
  PredictiveGaussian out;
  out.prob_positive = sigmoid(kappa * m);
  out.mean = 2.0 * out.prob_positive - 1.0;
  out.variance = std::max(1.0 - out.mean * out.mean, kMinPredictiveVariance);
  return out;
}

LaplaceResult laplace_step(const ExpertModel& expert, const VectorRef& phi, double y) {
  if (expert.likelihood != Likelihood::Logistic) {
    throw std::invalid_argument("laplace_step: expert does not use a logistic likelihood");
  }
  check_expert(expert, phi);
  if (y != 1.0 && y != -1.0) throw std::invalid_argument("laplace_step: labels must be -1 or +1");

  const GaussianPosterior& prior = expert.posterior;
  const Vector gain = prior.cov * phi;
  const double m = phi.dot(prior.mean);
  const double v = std::max(0.0, phi.dot(gain));

  LaplaceResult out;
  out.predictive = predict_logistic(expert, phi);
  const double kappa = 1.0 / std::sqrt(1.0 + std::numbers::pi * v / 8.0);
  out.log_predictive = log_sigmoid(y * kappa * m);

  // Stationarity: z = m + v y sigmoid(-y z); g is increasing with g' >= 1.
  double z = m;
  out.converged = false;
  for (int it = 0; it < kLaplaceMaxIterations; ++it) {
    const double sz = sigmoid(z);
    const double g = z - m - v * y * sigmoid(-y * z);
    const double dg = 1.0 + v * sz * (1.0 - sz);
    const double step = g / dg;
    z -= step;
    out.iterations = it + 1;
    if (std::abs(step) < kLaplaceTolerance) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) {
    // Plain gradient step on the projected objective from the current mean.
    z = m + v * y * sigmoid(-y * m);
  }

  const double c = y * sigmoid(-y * z);
  const double sz = sigmoid(z);
  const double h = sz * (1.0 - sz);
  out.posterior.mean = prior.mean + gain * c;
  out.posterior.cov = prior.cov;
  out.posterior.cov.noalias() -= (h / (1.0 + h * v)) * gain * gain.transpose();
  symmetrize(out.posterior.cov);
  return out;
}

}  // namespace doebe
