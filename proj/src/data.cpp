#include "doebe/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace doebe {

Dataset Dataset::slice(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) throw std::out_of_range("Dataset::slice: range out of bounds");
  return Dataset{x.middleCols(begin, count), y.segment(begin, count), feature_names};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

std::string location(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col + 1);
}

double parse_cell(std::string_view cell, std::size_t row, std::size_t col) {
  if (cell.empty()) throw CsvError("missing value at " + location(row, col));
  double value = 0.0;
  const char* first = cell.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
    throw CsvError("non-numeric value '" + std::string(cell) + "' at " + location(row, col));
  }
  return value;
}

}  // namespace

Dataset parse_csv(std::istream& in, const CsvOptions& options) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t columns = 0;

  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (options.header && header.empty()) {
      for (auto c : cells) header.emplace_back(c);
      columns = cells.size();
      continue;
    }
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw CsvError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " columns, expected " +
                     std::to_string(columns));
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) values[c] = parse_cell(cells[c], row, c);
    rows.push_back(std::move(values));
  }

  Dataset out;
  if (columns == 0) {
    out.x.resize(0, 0);
    out.y.resize(0);
    return out;
  }
  if (columns < 2) throw CsvError("need at least one input column and one target column");

  std::size_t target = 0;
  if (const auto* name = std::get_if<std::string>(&options.target)) {
    const auto it = std::find(header.begin(), header.end(), *name);
    if (it == header.end()) throw CsvError("target column '" + *name + "' not found in header");
    target = static_cast<std::size_t>(it - header.begin());
  } else {
    int idx = std::get<int>(options.target);
    if (idx < 0) idx += static_cast<int>(columns);
    if (idx < 0 || idx >= static_cast<int>(columns)) throw CsvError("target column index out of range");
    target = static_cast<std::size_t>(idx);
  }

  const Index n = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(columns) - 1;
  out.x.resize(d, n);
  out.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    Index k = 0;
    for (std::size_t c = 0; c < columns; ++c) {
      if (c == target) {
        out.y(i) = rows[static_cast<std::size_t>(i)][c];
      } else {
        out.x(k++, i) = rows[static_cast<std::size_t>(i)][c];
      }
    }
  }
  for (std::size_t c = 0; c < columns; ++c) {
    if (c == target) continue;
    out.feature_names.push_back(header.empty() ? "x" + std::to_string(c) : header[c]);
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path.string() + "'");
  return parse_csv(in, options);
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  for (Index d = 0; d < data.dim(); ++d) {
    out << (static_cast<std::size_t>(d) < data.feature_names.size() ? data.feature_names[static_cast<std::size_t>(d)]
                                                                   : "x" + std::to_string(d))
        << ',';
  }
  out << "y\n";
  for (Index i = 0; i < data.size(); ++i) {
    for (Index d = 0; d < data.dim(); ++d) out << data.x(d, i) << ',';
    out << data.y(i) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standardization

Standardizer Standardizer::fit(const Dataset& data, Index window, bool standardize_target) {
  Standardizer s;
  s.window = std::min(window, data.size());
  if (s.window < 1) throw std::invalid_argument("Standardizer: empty stream");
  const auto head_x = data.x.leftCols(s.window);
  const Vector mean = head_x.rowwise().mean();
  const Vector sd = ((head_x.colwise() - mean).array().square().rowwise().sum() / static_cast<double>(s.window)).sqrt();
  for (Index d = 0; d < data.dim(); ++d) {
    if (sd(d) > 0.0) s.kept_dims.push_back(d);
  }
  const Index kept = static_cast<Index>(s.kept_dims.size());
  s.x_mean.resize(kept);
  s.x_std.resize(kept);
  for (Index k = 0; k < kept; ++k) {
    s.x_mean(k) = mean(s.kept_dims[static_cast<std::size_t>(k)]);
    s.x_std(k) = sd(s.kept_dims[static_cast<std::size_t>(k)]);
  }
  if (standardize_target) {
    const auto head_y = data.y.head(s.window);
    s.y_mean = head_y.mean();
    const double y_sd = std::sqrt((head_y.array() - s.y_mean).square().mean());
    s.y_std = y_sd > 0.0 ? y_sd : 1.0;
  }
  return s;
}

Dataset Standardizer::apply(const Dataset& data) const {
  Dataset out;
  const Index kept = static_cast<Index>(kept_dims.size());
  out.x.resize(kept, data.size());
  for (Index k = 0; k < kept; ++k) {
    const Index d = kept_dims[static_cast<std::size_t>(k)];
    out.x.row(k) = (data.x.row(d).array() - x_mean(k)) / x_std(k);
    if (static_cast<std::size_t>(d) < data.feature_names.size()) {
      out.feature_names.push_back(data.feature_names[static_cast<std::size_t>(d)]);
    }
  }
  out.y = (data.y.array() - y_mean) / y_std;
  return out;
}

StandardizeResult standardize(const Dataset& data, Index window, bool standardize_target) {
  StandardizeResult r;
  r.window_truncated = data.size() < window;
  r.standardizer = Standardizer::fit(data, window, standardize_target);
  r.data = r.standardizer.apply(data);
  return r;
}

// ---------------------------------------------------------------------------
// Generators

Dataset gen_friedman(int variant, Index n, std::uint64_t seed, double noise_sd) {
  if (n < 1) throw std::invalid_argument("gen_friedman: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  if (variant == 1) {
    const double sd = noise_sd < 0.0 ? 1.0 : noise_sd;
    out.x.resize(10, n);
    out.y.resize(n);
    for (Index i = 0; i < n; ++i) {
      for (Index d = 0; d < 10; ++d) out.x(d, i) = unit(rng);
      const auto x = out.x.col(i);
      out.y(i) = 10.0 * std::sin(std::numbers::pi * x(0) * x(1)) + 20.0 * (x(2) - 0.5) * (x(2) - 0.5) +
                 10.0 * x(3) + 5.0 * x(4) + sd * normal(rng);
    }
  } else if (variant == 2) {
    const double sd = noise_sd < 0.0 ? 125.0 : noise_sd;
    out.x.resize(4, n);
    out.y.resize(n);
    for (Index i = 0; i < n; ++i) {
      const double x1 = 100.0 * unit(rng);
      const double x2 = 40.0 * std::numbers::pi + 520.0 * std::numbers::pi * unit(rng);
      const double x3 = unit(rng);
      const double x4 = 1.0 + 10.0 * unit(rng);
      out.x.col(i) << x1, x2, x3, x4;
      const double inner = x2 * x3 - 1.0 / (x2 * x4);
      out.y(i) = std::sqrt(x1 * x1 + inner * inner) + sd * normal(rng);
    }
  } else {
    throw std::invalid_argument("gen_friedman: variant must be 1 or 2");
  }
  for (Index d = 0; d < out.x.rows(); ++d) out.feature_names.push_back("x" + std::to_string(d + 1));
  return out;
}

DriftSchedule DriftSchedule::constant(Vector theta) { return DriftSchedule{std::move(theta), {}}; }

DriftSchedule DriftSchedule::random_walk(Vector theta0, double walk_var) {
  return DriftSchedule{std::move(theta0), {DriftPhase{0, walk_var, std::nullopt}}};
}

DriftSchedule DriftSchedule::static_then_walk(Vector theta0, Index onset, double walk_var) {
  return DriftSchedule{std::move(theta0), {DriftPhase{onset, walk_var, std::nullopt}}};
}

Dataset gen_drift(const BasisModel& basis, const DriftSchedule& schedule, Index n, double noise_var,
                  std::uint64_t seed, double input_range) {
  require_dim(schedule.theta0.size(), basis.feature_dim(), "gen_drift theta0");
  if (!(noise_var >= 0.0)) throw std::invalid_argument("gen_drift: noise variance must be non-negative");
  std::vector<DriftPhase> phases = schedule.phases;
  std::stable_sort(phases.begin(), phases.end(), [](const auto& a, const auto& b) { return a.start < b.start; });

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-input_range, input_range);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index dim = basis.input_dim();
  Dataset out;
  out.x.resize(dim, n);
  out.y.resize(n);
  Vector theta = schedule.theta0;
  double walk_var = 0.0;
  std::size_t next_phase = 0;
  for (Index t = 0; t < n; ++t) {
    bool reset = false;
    while (next_phase < phases.size() && phases[next_phase].start <= t) {
      const DriftPhase& p = phases[next_phase++];
      walk_var = p.walk_var;
      if (p.reset) {
        require_dim(p.reset->size(), theta.size(), "gen_drift reset");
        theta = *p.reset;
        reset = true;
      }
    }
    if (t > 0 && !reset && walk_var > 0.0) {
      const double sd = std::sqrt(walk_var);
      for (Index k = 0; k < theta.size(); ++k) theta(k) += sd * normal(rng);
    }
    for (Index d = 0; d < dim; ++d) out.x(d, t) = unif(rng);
    out.y(t) = basis.featurize(out.x.col(t)).dot(theta) + std::sqrt(noise_var) * normal(rng);
  }
  for (Index d = 0; d < dim; ++d) out.feature_names.push_back("x" + std::to_string(d + 1));
  return out;
}

Dataset gen_interleaved_clusters(Index n, std::uint64_t seed, bool ordered, double noise) {
  if (n < 1) throw std::invalid_argument("gen_interleaved_clusters: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, noise);
  Dataset out;
  out.x.resize(2, n);
  out.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double t = angle(rng);
    if (i % 2 == 0) {
      out.x.col(i) << std::cos(t), std::sin(t);
      out.y(i) = 1.0;
    } else {
      out.x.col(i) << 1.0 - std::cos(t), 0.5 - std::sin(t);
      out.y(i) = -1.0;
    }
    out.x(0, i) += normal(rng);
    out.x(1, i) += normal(rng);
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (ordered) {
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return out.x(0, a) < out.x(0, b); });
  } else {
    std::shuffle(order.begin(), order.end(), rng);
  }
  Dataset sorted;
  sorted.x.resize(2, n);
  sorted.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    sorted.x.col(i) = out.x.col(order[static_cast<std::size_t>(i)]);
    sorted.y(i) = out.y(order[static_cast<std::size_t>(i)]);
  }
  sorted.feature_names = {"x1", "x2"};
  return sorted;
}

// ---------------------------------------------------------------------------
// Metrics

MetricTrace MetricTrace::with_variance(double target_variance, bool classification) {
  if (!(target_variance > 0.0)) throw std::invalid_argument("MetricTrace: target variance must be positive");
  MetricTrace t;
  t.target_variance = target_variance;
  t.classification = classification;
  return t;
}

double population_variance(const VectorRef& y) {
  if (y.size() < 1) throw std::invalid_argument("population_variance: empty");
  return (y.array() - y.mean()).square().mean();
}

void metrics_update(MetricTrace& trace, double predicted_mean, double log_density, double y) {
  const double r = predicted_mean - y;
  trace.sum_sq_error += r * r;
  trace.sum_log_density += log_density;
  trace.count += 1;
  if (trace.classification && (predicted_mean >= 0.0 ? 1.0 : -1.0) != y) trace.misclassified += 1;
}

MetricValues metrics_read(const MetricTrace& trace) {
  if (!(trace.target_variance > 0.0)) throw std::invalid_argument("metrics_read: target variance is zero");
  MetricValues v;
  if (trace.count == 0) return v;
  const double t = static_cast<double>(trace.count);
  v.nmse = trace.sum_sq_error / (t * trace.target_variance);
  v.pll = trace.sum_log_density / t;
  v.error_rate = static_cast<double>(trace.misclassified) / t;
  return v;
}

double compute_regret_bound(Index features, double prior_var, double horizon, double curvature, Index experts,
                            double theta_sq_norm) {
  if (features < 1 || experts < 1 || !(prior_var > 0.0) || !(horizon >= 0.0) || !(curvature >= 0.0)) {
    throw std::invalid_argument("compute_regret_bound: invalid arguments");
  }
  const double f = static_cast<double>(features);
  return theta_sq_norm / (2.0 * prior_var) + 0.5 * f * std::log1p(horizon * curvature * prior_var / f) +
         std::log(static_cast<double>(experts));
}

}  // namespace doebe
