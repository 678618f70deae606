#include "doebe/hyperopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace doebe {

Vector to_unconstrained(const HyperParameters& params) {
  if (!params.basis) throw std::invalid_argument("to_unconstrained: null basis");
  if (!(params.prior_var > 0.0) || !(params.noise_var > 0.0)) {
    throw std::invalid_argument("to_unconstrained: variances must be positive");
  }
  const Vector basis_eta = params.basis->hyper();
  Vector eta(2 + basis_eta.size());
  eta(0) = 0.5 * std::log(params.prior_var);
  eta(1) = 0.5 * std::log(params.noise_var);
  eta.tail(basis_eta.size()) = basis_eta;
  return eta;
}

HyperParameters from_unconstrained(const VectorRef& eta, const BasisModel& like) {
  require_dim(eta.size(), 2 + like.hyper().size(), "from_unconstrained");
  HyperParameters p;
  p.prior_var = std::exp(2.0 * eta(0));
  p.noise_var = std::exp(2.0 * eta(1));
  p.basis = like.with_hyper(eta.tail(eta.size() - 2));
  return p;
}

Objective negative_log_evidence(const VectorRef& eta, const BasisModel& like, const MatrixRef& x, const VectorRef& y) {
  const HyperParameters p = from_unconstrained(eta, like);
  const Matrix phi = p.basis->design(x);
  const EvidenceGradient eg = log_evidence_with_gradient(phi, y, p.prior_var, p.noise_var);
  Objective out;
  out.value = -eg.value;
  out.gradient.resize(eta.size());
  out.gradient(0) = -eg.dl_dlog_prior_sd;
  out.gradient(1) = -eg.dl_dlog_noise_sd;
  if (eta.size() > 2) out.gradient.tail(eta.size() - 2) = -p.basis->hyper_gradient(x, eg.dl_dphi);
  return out;
}

namespace {

std::optional<HyperParameters> valid_hyperparameters(const VectorRef& eta, const BasisModel& like) {
  if (!eta.allFinite()) return std::nullopt;
  try {
    HyperParameters p = from_unconstrained(eta, like);
    if (!(p.prior_var > 0.0) || !(p.noise_var > 0.0) || !std::isfinite(p.prior_var) || !std::isfinite(p.noise_var)) {
      return std::nullopt;
    }
    if (!p.basis->hyper().allFinite()) return std::nullopt;
    return p;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

std::optional<Objective> try_objective(const VectorRef& eta, const BasisModel& like, const MatrixRef& x,
                                       const VectorRef& y) {
  if (!eta.allFinite()) return std::nullopt;
  try {
    Objective o = negative_log_evidence(eta, like, x, y);
    if (!std::isfinite(o.value) || !o.gradient.allFinite()) return std::nullopt;
    return o;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

}  // namespace

Matrix evidence_hessian(const VectorRef& eta, const BasisModel& like, const MatrixRef& x, const VectorRef& y,
                        double step) {
  const Index p = eta.size();
  Matrix h(p, p);
  Vector probe = eta;
  for (Index j = 0; j < p; ++j) {
    probe(j) = eta(j) + step;
    const Vector gp = negative_log_evidence(probe, like, x, y).gradient;
    probe(j) = eta(j) - step;
    const Vector gm = negative_log_evidence(probe, like, x, y).gradient;
    probe(j) = eta(j);
    h.col(j) = (gp - gm) / (2.0 * step);
  }
  symmetrize(h);
  return h;
}

FittedMode fit_mode(const HyperParameters& init, const MatrixRef& x, const VectorRef& y,
                    const OptimizerOptions& options) {
  if (options.steps < 1) throw std::invalid_argument("fit_mode: optimizer budget must be positive");
  const BasisModel& like = *init.basis;
  Vector eta = to_unconstrained(init);
  const std::optional<Objective> first = try_objective(eta, like, x, y);
  if (!first) throw NumericalError("fit_mode: evidence is not finite at the initial hyperparameters");
  Objective current = *first;

  FittedMode mode;
  Vector best_eta = eta;
  double best_value = current.value;

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  constexpr int max_failures = 30;
  Vector m = Vector::Zero(eta.size());
  Vector v = Vector::Zero(eta.size());
  double lr = options.learning_rate;
  int failures = 0;

  for (int t = 1; t <= options.steps; ++t) {
    const Vector& g = current.gradient;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    const Vector candidate = eta - lr * ((m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();

    std::optional<Objective> next = try_objective(candidate, like, x, y);
    if (!next) {
      lr *= 0.5;
      if (++failures > max_failures) {
        mode.converged = false;
        break;
      }
      continue;
    }
    eta = candidate;
    current = std::move(*next);
    if (current.value < best_value) {
      best_value = current.value;
      best_eta = eta;
    }
  }

  mode.eta = best_eta;
  mode.log_evidence = -best_value;
  mode.params = from_unconstrained(best_eta, like);
  if (best_eta.size() <= options.max_hessian_params) {
    try {
      Matrix h = evidence_hessian(best_eta, like, x, y, options.hessian_step);
      if (h.allFinite()) mode.hessian = std::move(h);
    } catch (const NumericalError&) {
    }
  }
  return mode;
}

std::vector<Vector> sample_hyperparams(const FittedMode& mode, int count, std::mt19937_64& rng) {
  if (count < 0) throw std::invalid_argument("sample_hyperparams: count must be non-negative");
  std::vector<Vector> out;
  if (count == 0) return out;
  const Index p = mode.eta.size();
  std::normal_distribution<double> normal(0.0, 1.0);

  std::optional<Eigen::LLT<Matrix>> factor;
  if (mode.hessian) {
    Eigen::LLT<Matrix> llt(*mode.hessian);
    if (llt.info() != Eigen::Success) {
      Matrix h = *mode.hessian;
      h.diagonal().array() += kHessianJitter;
      llt.compute(h);
    }
    if (llt.info() == Eigen::Success) factor = std::move(llt);
  }

  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vector z(p);
    for (Index k = 0; k < p; ++k) z(k) = normal(rng);
    if (factor) {
      // H = L L^T  =>  L^{-T} z ~ N(0, H^{-1})
      out.push_back(mode.eta + factor->matrixU().solve(z));
    } else {
      out.push_back(mode.eta + std::sqrt(kFallbackPerturbationVar) * z);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

std::string_view to_string(EnsembleMode mode) {
  switch (mode) {
    case EnsembleMode::Oebe: return "oebe";
    case EnsembleMode::Doebe: return "doebe";
    case EnsembleMode::Sdoebe: return "sdoebe";
    case EnsembleMode::Edoebe: return "edoebe";
  }
  return "unknown";
}

EnsembleMode ensemble_mode_from_string(std::string_view name) {
  if (name == "oebe") return EnsembleMode::Oebe;
  if (name == "doebe") return EnsembleMode::Doebe;
  if (name == "sdoebe") return EnsembleMode::Sdoebe;
  if (name == "edoebe") return EnsembleMode::Edoebe;
  throw std::invalid_argument("unknown ensemble mode '" + std::string(name) + "'");
}

std::mt19937_64 split_rng(std::uint64_t root, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

Vector initial_lengthscales(const MatrixRef& x, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("initial_lengthscales: s must be positive");
  Vector range = x.rowwise().maxCoeff() - x.rowwise().minCoeff();
  for (Index d = 0; d < range.size(); ++d) {
    if (!(range(d) > 0.0)) range(d) = 1.0;
  }
  return s * range;
}

namespace {

std::vector<HyperParameters> family_starts(const FamilyConfig& family, const EnsembleConfig& config,
                                           const Dataset& pretrain, std::mt19937_64& rng) {
  const Index dim = pretrain.dim();
  std::vector<HyperParameters> starts;
  auto push = [&](BasisPtr basis) { starts.push_back(HyperParameters{config.prior_var, config.noise_var, std::move(basis)}); };

  switch (family.kind) {
    case BasisKind::Linear:
      push(build_linear(dim, family.intercept));
      break;
    case BasisKind::PolynomialAdditive:
      for (int degree : family.degrees) push(build_polynomial_additive(dim, degree));
      break;
    case BasisKind::RbfNetwork: {
      const Index k = std::min<Index>(family.features, pretrain.size());
      const Matrix centers = kmeans_centers(pretrain.x, k, rng);
      for (double s : family.s_grid) push(std::make_shared<RbfBasis>(centers, initial_lengthscales(pretrain.x, s)));
      break;
    }
    case BasisKind::Rff: {
      if (family.features < 2 || family.features % 2 != 0) {
        throw std::invalid_argument("rff family: feature count must be even");
      }
      const Matrix unit = draw_unit_frequencies(family.kernel, family.features / 2, dim, rng);
      for (double s : family.s_grid) {
        KernelSpec spec{family.kernel, initial_lengthscales(pretrain.x, s), 1.0};
        if (family.optimize_frequencies) {
          push(FourierBasis::with_frequencies(spec, unit * spec.lengthscales.cwiseInverse().asDiagonal()));
        } else {
          push(std::make_shared<FourierBasis>(spec, unit));
        }
      }
      break;
    }
    case BasisKind::HsgpAdditive: {
      const int per_dim = std::max(1, family.features / static_cast<int>(dim));
      const HsgpDomain domain =
          HsgpDomain::from_data(pretrain.x, family.hsgp_scale, std::vector<int>(static_cast<std::size_t>(dim), per_dim));
      for (double s : family.s_grid) {
        push(build_hsgp_additive(KernelSpec{family.kernel, initial_lengthscales(pretrain.x, s), 1.0}, domain));
      }
      break;
    }
  }
  return starts;
}

}  // namespace

std::vector<FittedMode> fit_family(const FamilyConfig& family, const EnsembleConfig& config, const Dataset& pretrain,
                                   std::mt19937_64& rng) {
  if (pretrain.size() < 1) throw std::invalid_argument("fit_family: empty pretraining window");
  std::vector<FittedMode> modes;
  for (const HyperParameters& start : family_starts(family, config, pretrain, rng)) {
    modes.push_back(fit_mode(start, pretrain.x, pretrain.y, config.optimizer));
  }
  std::stable_sort(modes.begin(), modes.end(),
                   [](const FittedMode& a, const FittedMode& b) { return a.log_evidence > b.log_evidence; });
  return modes;
}

std::vector<ExpertModel> experts_from_mode(const FittedMode& mode, int samples, Likelihood likelihood,
                                           double logistic_prior_var, std::mt19937_64& rng) {
  std::vector<HyperParameters> sets{mode.params};
  const BasisModel& like = *mode.params.basis;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const Vector& eta : sample_hyperparams(mode, samples, rng)) {
    // A nearly flat evidence direction can throw a draw out to where exp()
    // overflows; such draws are redrawn at the fallback scale.
    std::optional<HyperParameters> p = valid_hyperparameters(eta, like);
    while (!p) {
      Vector z(eta.size());
      for (Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
      p = valid_hyperparameters(mode.eta + std::sqrt(kFallbackPerturbationVar) * z, like);
    }
    sets.push_back(std::move(*p));
  }
  std::vector<ExpertModel> experts;
  for (const HyperParameters& p : sets) {
    if (likelihood == Likelihood::Logistic) {
      experts.push_back(make_expert(p.basis, logistic_prior_var, 1.0, 0.0, Likelihood::Logistic));
    } else {
      experts.push_back(make_expert(p.basis, p.prior_var, p.noise_var, 0.0, Likelihood::Gaussian));
    }
  }
  return experts;
}

EnsembleState arrange_ensemble(std::vector<ExpertModel> base, EnsembleMode mode,
                               const std::vector<double>& drift_levels, double delta, double weight_floor) {
  if (base.empty()) throw std::invalid_argument("arrange_ensemble: no experts");
  if (mode != EnsembleMode::Oebe && drift_levels.empty()) {
    throw std::invalid_argument("arrange_ensemble: dynamic modes need a drift level");
  }
  auto dynamic_copies = [&]() {
    std::vector<ExpertModel> out;
    for (double level : drift_levels) {
      for (const ExpertModel& e : base) {
        out.push_back(e);
        out.back().drift_var = level;
      }
    }
    return out;
  };
  switch (mode) {
    case EnsembleMode::Oebe:
      return make_ensemble(std::move(base), std::nullopt, weight_floor);
    case EnsembleMode::Doebe:
      return make_ensemble(dynamic_copies(), std::nullopt, weight_floor);
    case EnsembleMode::Sdoebe: {
      std::vector<ExpertModel> experts = dynamic_copies();
      const Index m = static_cast<Index>(experts.size());
      return make_ensemble(std::move(experts), uniform_switching_matrix(m, delta), weight_floor);
    }
    case EnsembleMode::Edoebe:
      return build_edoebe(base, drift_levels, delta, weight_floor);
  }
  throw std::invalid_argument("unreachable ensemble mode");
}

EnsembleState assemble_ensemble(const EnsembleConfig& config, const Dataset& pretrain, std::uint64_t seed) {
  if (config.families.empty()) throw std::invalid_argument("assemble_ensemble: no basis families configured");
  if (pretrain.size() < 1) throw std::invalid_argument("assemble_ensemble: empty pretraining window");
  std::vector<ExpertModel> base;
  for (std::size_t f = 0; f < config.families.size(); ++f) {
    std::mt19937_64 rng = split_rng(seed, f);
    const FamilyConfig& family = config.families[f];
    for (const FittedMode& mode : fit_family(family, config, pretrain, rng)) {
      auto experts = experts_from_mode(mode, family.samples_per_mode, config.likelihood, config.logistic_prior_var, rng);
      std::move(experts.begin(), experts.end(), std::back_inserter(base));
    }
  }
  return arrange_ensemble(std::move(base), config.mode, config.drift_levels, config.delta, config.weight_floor);
}

}  // namespace doebe
