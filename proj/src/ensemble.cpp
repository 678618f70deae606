#include "doebe/ensemble.hpp"
#include "doebe/serialization.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

namespace doebe {

void EnsembleState::validate() const {
  const Index m = size();
  if (m < 1) throw std::invalid_argument("ensemble: no experts");
  require_dim(weights.size(), m, "ensemble weights");
  if (!(weights.array() >= 0.0).all() || std::abs(weights.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("ensemble: weights must form a simplex");
  }
  if (switching) {
    const Matrix& q = *switching;
    if (q.rows() != m || q.cols() != m) throw DimensionError("ensemble: switching matrix has wrong shape");
    if (!(q.array() >= 0.0).all() || !(q.array() <= 1.0).all()) {
      throw std::invalid_argument("ensemble: switching entries must lie in [0, 1]");
    }
    if (((q.colwise().sum().array() - 1.0).abs() > 1e-12).any()) {
      throw std::invalid_argument("ensemble: switching matrix must be column-stochastic");
    }
  }
}

EnsembleState make_ensemble(std::vector<ExpertModel> experts, std::optional<Matrix> switching,
                            double weight_floor) {
  EnsembleState state;
  const Index m = static_cast<Index>(experts.size());
  if (m < 1) throw std::invalid_argument("make_ensemble: no experts");
  state.experts = std::move(experts);
  state.weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
  state.switching = std::move(switching);
  state.weight_floor = weight_floor;
  state.validate();
  return state;
}

MixturePrediction mixture_moments(const std::vector<PredictiveGaussian>& components, const VectorRef& weights) {
  require_dim(weights.size(), static_cast<Index>(components.size()), "mixture weights");
  MixturePrediction out;
  out.experts = components;
  for (std::size_t m = 0; m < components.size(); ++m) {
    if (weights(static_cast<Index>(m)) > 0.0) out.mean += weights(static_cast<Index>(m)) * components[m].mean;
  }
  for (std::size_t m = 0; m < components.size(); ++m) {
    const double w = weights(static_cast<Index>(m));
    if (w <= 0.0) continue;
    const double d = out.mean - components[m].mean;
    out.variance += w * (components[m].variance + d * d);
  }
  return out;
}

namespace {

/// Experts built as copies share one basis; featurize each distinct basis once.
class FeatureCache {
 public:
  explicit FeatureCache(const VectorRef& x) : x_(x) {}
  const Vector& get(const BasisModel& basis) {
    auto it = cache_.find(&basis);
    if (it == cache_.end()) it = cache_.emplace(&basis, basis.featurize(x_)).first;
    return it->second;
  }

 private:
  VectorRef x_;
  std::unordered_map<const BasisModel*, Vector> cache_;
};

}  // namespace

MixturePrediction ensemble_predict(const EnsembleState& state, const VectorRef& x) {
  std::vector<PredictiveGaussian> preds(state.experts.size());
  FeatureCache features(x);
  for (std::size_t m = 0; m < state.experts.size(); ++m) {
    if (state.weights(static_cast<Index>(m)) <= 0.0) continue;
    const ExpertModel& e = state.experts[m];
    preds[m] = predict(e, features.get(*e.basis));
  }
  return mixture_moments(preds, state.weights);
}

StepResult step(EnsembleState& state, const VectorRef& x, double y) {
  const Index count = state.size();
  StepResult result;
  StepDiagnostics& diag = result.diagnostics;

  // (1) switching
  const Vector prior_w = state.switching ? Vector(*state.switching * state.weights) : state.weights;

  // (2) drift, (3) predict
  FeatureCache features(x);
  std::vector<PredictiveGaussian> preds(static_cast<std::size_t>(count));
  std::vector<LaplaceResult> laplace(static_cast<std::size_t>(count));
  std::vector<bool> failed(static_cast<std::size_t>(count), false);
  Vector log_lik(count);
  for (Index m = 0; m < count; ++m) {
    ExpertModel& e = state.experts[static_cast<std::size_t>(m)];
    const auto mi = static_cast<std::size_t>(m);
    try {
      e.posterior = drift(e);
      const Vector& phi = features.get(*e.basis);
      if (e.likelihood == Likelihood::Logistic) {
        laplace[mi] = laplace_step(e, phi, y);
        preds[mi] = laplace[mi].predictive;
        log_lik(m) = laplace[mi].log_predictive;
        if (!laplace[mi].converged) diag.laplace_fallbacks.push_back(m);
      } else {
        preds[mi] = predict(e, phi);
        if (!(preds[mi].variance >= kMinPredictiveVariance) || !std::isfinite(preds[mi].mean)) {
          throw NumericalError("degenerate predictive variance");
        }
        log_lik(m) = log_predictive_density(preds[mi], y);
      }
      if (!std::isfinite(log_lik(m))) throw NumericalError("non-finite predictive log-likelihood");
    } catch (const std::exception& ex) {
      failed[mi] = true;
      log_lik(m) = -std::numeric_limits<double>::infinity();
      diag.failed_experts.push_back(m);
      diag.messages.push_back("expert " + std::to_string(m) + ": " + ex.what());
    }
  }

  Vector prior_w_ok = prior_w;
  for (Index m = 0; m < count; ++m) {
    if (failed[static_cast<std::size_t>(m)]) prior_w_ok(m) = 0.0;
  }
  if (prior_w_ok.sum() > 0.0) prior_w_ok /= prior_w_ok.sum();
  result.prediction = mixture_moments(preds, prior_w_ok);
  result.prediction.log_likelihoods.assign(log_lik.data(), log_lik.data() + count);

  // (4) weight update in the log domain
  Vector log_joint = Vector::Constant(count, -std::numeric_limits<double>::infinity());
  for (Index m = 0; m < count; ++m) {
    if (prior_w_ok(m) > 0.0) log_joint(m) = std::log(prior_w_ok(m)) + log_lik(m);
  }
  const double log_norm = log_sum_exp(log_joint);
  if (!std::isfinite(log_norm)) {
    throw NumericalError("ensemble step: every expert weight underflowed");
  }
  result.prediction.log_density = log_norm;

  Vector w(count);
  for (Index m = 0; m < count; ++m) {
    const double v = std::exp(log_joint(m) - log_norm);
    w(m) = v < state.weight_floor ? 0.0 : v;
  }
  const double total = w.sum();
  if (!(total > 0.0)) throw NumericalError("ensemble step: every expert weight fell below the floor");
  state.weights = w / total;

  // (5) correct
  for (Index m = 0; m < count; ++m) {
    const auto mi = static_cast<std::size_t>(m);
    if (failed[mi]) continue;
    ExpertModel& e = state.experts[mi];
    if (e.likelihood == Likelihood::Logistic) {
      e.posterior = std::move(laplace[mi].posterior);
    } else {
      e.posterior = correct(e, features.get(*e.basis), y, preds[mi]);
    }
  }
  return result;
}

Matrix block_switching_matrix(Index block_size, Index blocks, double delta) {
  if (block_size < 1 || blocks < 1) throw std::invalid_argument("block_switching_matrix: empty blocks");
  const double diag = 1.0 - static_cast<double>(blocks - 1) * delta;
  if (!(delta >= 0.0) || !(diag >= 0.0) || (blocks > 1 && !(delta <= 1.0))) {
    throw std::invalid_argument("block_switching_matrix: need 0 <= delta and (R-1) delta <= 1");
  }
  const Index n = block_size * blocks;
  Matrix q = Matrix::Zero(n, n);
  for (Index r = 0; r < blocks; ++r) {
    for (Index c = 0; c < blocks; ++c) {
      q.block(r * block_size, c * block_size, block_size, block_size).diagonal().setConstant(r == c ? diag : delta);
    }
  }
  return q;
}

Matrix uniform_switching_matrix(Index size, double delta) {
  if (size < 1) throw std::invalid_argument("uniform_switching_matrix: empty");
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("uniform_switching_matrix: delta must lie in [0, 1]");
  if (size == 1) return Matrix::Identity(1, 1);
  Matrix q = Matrix::Constant(size, size, delta / static_cast<double>(size - 1));
  q.diagonal().setConstant(1.0 - delta);
  return q;
}

EnsembleState build_edoebe(const std::vector<ExpertModel>& base, const std::vector<double>& drift_levels,
                           double delta, double weight_floor) {
  if (base.empty()) throw std::invalid_argument("build_edoebe: no base experts");
  if (drift_levels.empty()) throw std::invalid_argument("build_edoebe: need at least one drift level");
  const Index blocks = static_cast<Index>(drift_levels.size()) + 1;
  if (!(delta > 0.0) || !(static_cast<double>(blocks - 1) * delta < 1.0)) {
    throw std::invalid_argument("build_edoebe: need 0 < delta and (R-1) delta < 1");
  }
  std::vector<ExpertModel> experts;
  experts.reserve(base.size() * static_cast<std::size_t>(blocks));
  for (double level : drift_levels) {
    if (!(level > 0.0)) throw std::invalid_argument("build_edoebe: drift levels must be positive");
    for (const ExpertModel& e : base) {
      experts.push_back(e);
      experts.back().drift_var = level;
    }
  }
  for (const ExpertModel& e : base) {
    experts.push_back(e);
    experts.back().drift_var = 0.0;
  }
  return make_ensemble(std::move(experts),
                       block_switching_matrix(static_cast<Index>(base.size()), blocks, delta), weight_floor);
}

RevivalReport revive_check(const EnsembleState& state) {
  RevivalReport report;
  report.pre_switch = state.weights;
  report.post_switch = state.switching ? Vector(*state.switching * state.weights) : state.weights;
  for (Index m = 0; m < state.size(); ++m) {
    if (report.pre_switch(m) == 0.0 && report.post_switch(m) > 0.0) report.revived.push_back(m);
  }
  return report;
}

}  // namespace doebe

namespace doebe {

nlohmann::json ensemble_to_json(const EnsembleState& state) {
  nlohmann::json bases = nlohmann::json::array();
  nlohmann::json experts = nlohmann::json::array();
  std::unordered_map<const BasisModel*, std::size_t> basis_index;
  for (const ExpertModel& e : state.experts) {
    auto [it, inserted] = basis_index.emplace(e.basis.get(), bases.size());
    if (inserted) bases.push_back(e.basis->to_json());
    experts.push_back({{"basis", it->second},
                       {"mean", io::vector_to_json(e.posterior.mean)},
                       {"cov", io::matrix_to_json(e.posterior.cov)},
                       {"noise_var", e.noise_var},
                       {"drift_var", e.drift_var},
                       {"likelihood", std::string(to_string(e.likelihood))}});
  }
  nlohmann::json j{{"format_version", kEnsembleFormatVersion},
                   {"bases", std::move(bases)},
                   {"experts", std::move(experts)},
                   {"weights", io::vector_to_json(state.weights)},
                   {"weight_floor", state.weight_floor}};
  j["switching"] = state.switching ? io::matrix_to_json(*state.switching) : nlohmann::json(nullptr);
  return j;
}

EnsembleState ensemble_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kEnsembleFormatVersion) {
    throw std::invalid_argument("ensemble checkpoint: unsupported format version " + std::to_string(version));
  }
  std::vector<BasisPtr> bases;
  for (const auto& b : j.at("bases")) bases.push_back(BasisModel::from_json(b));
  EnsembleState state;
  for (const auto& e : j.at("experts")) {
    ExpertModel m;
    m.basis = bases.at(e.at("basis").get<std::size_t>());
    m.posterior.mean = io::vector_from_json(e.at("mean"));
    m.posterior.cov = io::matrix_from_json(e.at("cov"));
    m.noise_var = e.at("noise_var").get<double>();
    m.drift_var = e.at("drift_var").get<double>();
    m.likelihood = likelihood_from_string(e.at("likelihood").get<std::string>());
    require_dim(m.posterior.mean.size(), m.basis->feature_dim(), "ensemble checkpoint mean");
    state.experts.push_back(std::move(m));
  }
  state.weights = io::vector_from_json(j.at("weights"));
  state.weight_floor = j.at("weight_floor").get<double>();
  if (!j.at("switching").is_null()) state.switching = io::matrix_from_json(j.at("switching"));
  state.validate();
  return state;
}

}  // namespace doebe
