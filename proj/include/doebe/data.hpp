#pragma once

#include "doebe/basis.hpp"
#include "doebe/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace doebe {

struct StreamRecord {
  Vector x;
  double y = 0.0;
  std::size_t index = 0;
};

/// An ordered stream held in memory: inputs column-wise (D x N).
struct Dataset {
  Matrix x;
  Vector y;
  std::vector<std::string> feature_names;

  Index size() const { return y.size(); }
  Index dim() const { return x.rows(); }
  StreamRecord record(Index t) const { return StreamRecord{x.col(t), y(t), static_cast<std::size_t>(t)}; }
  /// Records [begin, begin + count).
  Dataset slice(Index begin, Index count) const;
};

struct CsvOptions {
  bool header = true;
  /// Column holding the target, by name (requires a header) or by index.
  /// Negative indices count from the end; the default is the last column.
  std::variant<std::string, int> target = -1;
};

/// Parse errors name the offending row and column.
class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
Dataset parse_csv(std::istream& in, const CsvOptions& options = {});
void write_csv(const std::filesystem::path& path, const Dataset& data);

/// Per-dimension statistics of the first N0 records.
struct Standardizer {
  std::vector<Index> kept_dims;
  Vector x_mean;
  Vector x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  Index window = 0;

  /// Zero-variance input dimensions are dropped; a constant target keeps std 1.
  /// With `standardize_target` false the targets pass through unchanged
  /// (class labels).
  static Standardizer fit(const Dataset& data, Index window, bool standardize_target = true);
  Dataset apply(const Dataset& data) const;
};

struct StandardizeResult {
  Dataset data;
  Standardizer standardizer;
  /// Set when the stream was shorter than the requested window.
  bool window_truncated = false;
};

StandardizeResult standardize(const Dataset& data, Index window = 1000, bool standardize_target = true);

// ---------------------------------------------------------------------------
// Synthetic streams

/// Friedman (1991), "Multivariate adaptive regression splines":
///   #1: x ~ U[0,1]^10,
///       y = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 + eps, eps ~ N(0, 1)
///   #2: x1 ~ U[0,100], x2 ~ U[40 pi, 560 pi], x3 ~ U[0,1], x4 ~ U[1,11],
///       y = sqrt(x1^2 + (x2 x3 - 1 / (x2 x4))^2) + eps, eps ~ N(0, 125^2)
/// A negative `noise_sd` selects the conventional level above.
Dataset gen_friedman(int variant, Index n, std::uint64_t seed, double noise_sd = -1.0);

/// Piece of a parameter schedule starting at `start`: the weights optionally
/// jump to `reset`, then follow a Gaussian random walk with `walk_var`
/// (zero for a constant segment).
struct DriftPhase {
  Index start = 0;
  double walk_var = 0.0;
  std::optional<Vector> reset;
};

struct DriftSchedule {
  Vector theta0;
  std::vector<DriftPhase> phases;

  static DriftSchedule constant(Vector theta);
  static DriftSchedule random_walk(Vector theta0, double walk_var);
  /// Constant until `onset`, then a random walk with `walk_var`.
  static DriftSchedule static_then_walk(Vector theta0, Index onset, double walk_var);
};

/// y_t = phi(x_t)' theta_t + eps_t, x_t ~ U[-input_range, input_range]^D,
/// theta_t following the schedule.
Dataset gen_drift(const BasisModel& basis, const DriftSchedule& schedule, Index n, double noise_var,
                  std::uint64_t seed, double input_range = 2.0);

/// Two interleaved half-moon clusters in 2-D with labels in {-1, +1}.
/// With `ordered` the stream is sorted by the first coordinate (left to
/// right); otherwise it is shuffled.
Dataset gen_interleaved_clusters(Index n, std::uint64_t seed, bool ordered, double noise = 0.2);

// ---------------------------------------------------------------------------
// Metrics

/// Running nMSE / PLL accumulators.
struct MetricTrace {
  double sum_sq_error = 0.0;
  double sum_log_density = 0.0;
  std::size_t count = 0;
  std::size_t misclassified = 0;
  double target_variance = 1.0;
  /// Count sign errors of the predictive mean against labels in {-1, +1}.
  bool classification = false;

  /// `target_variance` is Var(y_{1:T}) over the whole evaluated stream;
  /// zero variance leaves nMSE undefined and throws.
  static MetricTrace with_variance(double target_variance, bool classification = false);
};

/// Population variance (1/T) of the targets.
double population_variance(const VectorRef& y);

void metrics_update(MetricTrace& trace, double predicted_mean, double log_density, double y);

struct MetricValues {
  double nmse = 0.0;
  double pll = 0.0;
  double error_rate = 0.0;
};

MetricValues metrics_read(const MetricTrace& trace);

/// ||theta*||^2 / (2 s) + (F/2) log(1 + T c s / F) + log M.
double compute_regret_bound(Index features, double prior_var, double horizon, double curvature,
                            Index experts, double theta_sq_norm);

}  // namespace doebe
