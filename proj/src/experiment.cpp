#include "doebe/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace doebe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

FamilyConfig family_from_json(const json& j, std::size_t index) {
  const std::string where = "ensemble.families[" + std::to_string(index) + "]";
  check_keys(j,
             {"kind", "kernel", "features", "degrees", "intercept", "s_grid", "samples", "optimize_frequencies",
              "hsgp_scale"},
             where);
  FamilyConfig f;
  f.kind = basis_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("kernel")) f.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
  read_opt(j, "features", f.features);
  read_opt(j, "degrees", f.degrees);
  read_opt(j, "intercept", f.intercept);
  read_opt(j, "s_grid", f.s_grid);
  read_opt(j, "samples", f.samples_per_mode);
  read_opt(j, "optimize_frequencies", f.optimize_frequencies);
  read_opt(j, "hsgp_scale", f.hsgp_scale);
  return f;
}

json family_to_json(const FamilyConfig& f) {
  return json{{"kind", std::string(to_string(f.kind))},
              {"kernel", std::string(to_string(f.kernel))},
              {"features", f.features},
              {"degrees", f.degrees},
              {"intercept", f.intercept},
              {"s_grid", f.s_grid},
              {"samples", f.samples_per_mode},
              {"optimize_frequencies", f.optimize_frequencies},
              {"hsgp_scale", f.hsgp_scale}};
}

DataSourceConfig data_from_json(const json& j) {
  check_keys(j,
             {"source", "path", "target", "header", "n", "seed", "noise", "dim", "features", "lengthscale",
              "walk_var", "onset", "noise_var", "ordered"},
             "data");
  DataSourceConfig d;
  d.source = j.at("source").get<std::string>();
  read_opt(j, "path", d.path);
  if (j.contains("target")) {
    const json& t = j.at("target");
    if (t.is_string()) {
      d.target = t.get<std::string>();
    } else {
      d.target = t.get<int>();
    }
  }
  read_opt(j, "header", d.header);
  read_opt(j, "n", d.n);
  if (j.contains("seed")) d.seed = j.at("seed").get<std::uint64_t>();
  read_opt(j, "noise", d.noise);
  read_opt(j, "dim", d.dim);
  read_opt(j, "features", d.features);
  read_opt(j, "lengthscale", d.lengthscale);
  read_opt(j, "walk_var", d.walk_var);
  read_opt(j, "onset", d.onset);
  read_opt(j, "noise_var", d.noise_var);
  read_opt(j, "ordered", d.ordered);
  return d;
}

json data_to_json(const DataSourceConfig& d) {
  json j{{"source", d.source}};
  if (d.source == "csv") {
    j["path"] = d.path;
    j["header"] = d.header;
    std::visit([&](const auto& t) { j["target"] = t; }, d.target);
    return j;
  }
  j["n"] = d.n;
  if (d.seed) j["seed"] = *d.seed;
  if (d.source == "friedman1" || d.source == "friedman2" || d.source == "clusters") j["noise"] = d.noise;
  if (d.source == "drift") {
    j["dim"] = d.dim;
    j["features"] = d.features;
    j["lengthscale"] = d.lengthscale;
    j["walk_var"] = d.walk_var;
    j["onset"] = d.onset;
    j["noise_var"] = d.noise_var;
  }
  if (d.source == "clusters") j["ordered"] = d.ordered;
  return j;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

json trace_to_json(const MetricTrace& trace) {
  return json{{"sum_sq_error", trace.sum_sq_error},
              {"sum_log_density", trace.sum_log_density},
              {"count", trace.count},
              {"misclassified", trace.misclassified}};
}

void trace_from_json(const json& j, MetricTrace& trace) {
  trace.sum_sq_error = j.at("sum_sq_error").get<double>();
  trace.sum_log_density = j.at("sum_log_density").get<double>();
  trace.count = j.at("count").get<std::size_t>();
  trace.misclassified = j.at("misclassified").get<std::size_t>();
}

std::string metrics_header(Index experts) {
  std::string h = "t,nmse,pll,top_weight_index";
  for (Index m = 0; m < experts; ++m) h += ",w" + std::to_string(m);
  return h + "\n";
}

std::string metrics_row(Index t, const MetricValues& v, const Vector& weights) {
  Index top = 0;
  weights.maxCoeff(&top);
  std::string row = std::to_string(t) + "," + format_double(v.nmse) + "," + format_double(v.pll) + "," +
                    std::to_string(top);
  for (Index m = 0; m < weights.size(); ++m) row += "," + format_double(weights(m));
  return row + "\n";
}

/// Keeps the header and every row with t <= `step`.
void truncate_metrics(const fs::path& path, Index step) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("resume: missing " + path.string());
  std::string line;
  std::string kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const Index t = std::stoll(line.substr(0, line.find(',')));
    if (t > step) break;
    kept += line + "\n";
  }
  in.close();
  write_text_atomic(path, kept);
}

}  // namespace

void validate(const ExperimentConfig& c) {
  if (c.schema_version != kSchemaVersion) {
    throw std::invalid_argument("config: unsupported schema_version " + std::to_string(c.schema_version));
  }
  const std::string& s = c.data.source;
  if (s != "csv" && s != "friedman1" && s != "friedman2" && s != "drift" && s != "clusters") {
    throw std::invalid_argument("config: unknown data source '" + s + "'");
  }
  if (s == "csv" && c.data.path.empty()) throw std::invalid_argument("config: csv source needs a path");
  if (s != "csv" && c.data.n < 2) throw std::invalid_argument("config: data.n must be at least 2");
  if (c.pretrain < 1) throw std::invalid_argument("config: pretrain must be positive");
  if (c.trace_every < 1) throw std::invalid_argument("config: trace_every must be positive");
  if (c.checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be non-negative");
  const EnsembleConfig& e = c.ensemble;
  if (e.families.empty()) throw std::invalid_argument("config: no basis families declared");
  for (const FamilyConfig& f : e.families) {
    if (f.features < 1) throw std::invalid_argument("config: family features must be positive");
    if (f.samples_per_mode < 0) throw std::invalid_argument("config: family samples must be non-negative");
    if (f.kind == BasisKind::Rff && f.features % 2 != 0) {
      throw std::invalid_argument("config: rff features must be even");
    }
    if (f.s_grid.empty() && (f.kind == BasisKind::Rff || f.kind == BasisKind::RbfNetwork ||
                             f.kind == BasisKind::HsgpAdditive)) {
      throw std::invalid_argument("config: empty s_grid");
    }
    if (f.kind == BasisKind::HsgpAdditive && !(f.hsgp_scale > 1.0)) {
      throw std::invalid_argument("config: hsgp_scale must exceed 1");
    }
  }
  if (!(e.prior_var > 0.0) || !(e.noise_var > 0.0) || !(e.logistic_prior_var > 0.0)) {
    throw std::invalid_argument("config: variances must be positive");
  }
  if (!(e.weight_floor >= 0.0 && e.weight_floor < 1.0)) throw std::invalid_argument("config: weight_floor out of range");
  if (e.mode != EnsembleMode::Oebe) {
    if (e.drift_levels.empty()) throw std::invalid_argument("config: dynamic modes need sigma_rw levels");
    for (double v : e.drift_levels) {
      if (!(v > 0.0)) throw std::invalid_argument("config: sigma_rw levels must be positive");
    }
  }
  if ((e.mode == EnsembleMode::Sdoebe || e.mode == EnsembleMode::Edoebe) && !(e.delta > 0.0 && e.delta < 1.0)) {
    throw std::invalid_argument("config: delta must lie in (0, 1)");
  }
  if (e.optimizer.steps < 1 || !(e.optimizer.learning_rate > 0.0)) {
    throw std::invalid_argument("config: optimizer steps and learning_rate must be positive");
  }
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j,
             {"schema_version", "name", "data", "pretrain", "standardize", "ensemble", "seed", "output_dir",
              "trace_every", "checkpoint_every"},
             "config");
  ExperimentConfig c;
  c.schema_version = j.at("schema_version").get<int>();
  read_opt(j, "name", c.name);
  c.data = data_from_json(j.at("data"));
  read_opt(j, "pretrain", c.pretrain);
  read_opt(j, "standardize", c.standardize);
  read_opt(j, "seed", c.seed);
  read_opt(j, "output_dir", c.output_dir);
  read_opt(j, "trace_every", c.trace_every);
  read_opt(j, "checkpoint_every", c.checkpoint_every);

  const json& e = j.at("ensemble");
  check_keys(e,
             {"families", "mode", "sigma_rw", "delta", "weight_floor", "prior_var", "noise_var", "likelihood",
              "logistic_prior_var", "optimizer"},
             "ensemble");
  EnsembleConfig& ec = c.ensemble;
  const json& families = e.at("families");
  for (std::size_t i = 0; i < families.size(); ++i) ec.families.push_back(family_from_json(families[i], i));
  if (e.contains("mode")) ec.mode = ensemble_mode_from_string(e.at("mode").get<std::string>());
  if (e.contains("sigma_rw")) {
    const json& s = e.at("sigma_rw");
    ec.drift_levels = s.is_array() ? s.get<std::vector<double>>() : std::vector<double>{s.get<double>()};
  }
  read_opt(e, "delta", ec.delta);
  read_opt(e, "weight_floor", ec.weight_floor);
  read_opt(e, "prior_var", ec.prior_var);
  read_opt(e, "noise_var", ec.noise_var);
  if (e.contains("likelihood")) ec.likelihood = likelihood_from_string(e.at("likelihood").get<std::string>());
  read_opt(e, "logistic_prior_var", ec.logistic_prior_var);
  if (e.contains("optimizer")) {
    const json& o = e.at("optimizer");
    check_keys(o, {"steps", "learning_rate", "max_hessian_params", "hessian_step"}, "ensemble.optimizer");
    read_opt(o, "steps", ec.optimizer.steps);
    read_opt(o, "learning_rate", ec.optimizer.learning_rate);
    read_opt(o, "max_hessian_params", ec.optimizer.max_hessian_params);
    read_opt(o, "hessian_step", ec.optimizer.hessian_step);
  }
  validate(c);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const EnsembleConfig& e = c.ensemble;
  json families = json::array();
  for (const FamilyConfig& f : e.families) families.push_back(family_to_json(f));
  return json{{"schema_version", c.schema_version},
              {"name", c.name},
              {"data", data_to_json(c.data)},
              {"pretrain", c.pretrain},
              {"standardize", c.standardize},
              {"seed", c.seed},
              {"output_dir", c.output_dir},
              {"trace_every", c.trace_every},
              {"checkpoint_every", c.checkpoint_every},
              {"ensemble",
               {{"families", families},
                {"mode", std::string(to_string(e.mode))},
                {"sigma_rw", e.drift_levels},
                {"delta", e.delta},
                {"weight_floor", e.weight_floor},
                {"prior_var", e.prior_var},
                {"noise_var", e.noise_var},
                {"likelihood", std::string(to_string(e.likelihood))},
                {"logistic_prior_var", e.logistic_prior_var},
                {"optimizer",
                 {{"steps", e.optimizer.steps},
                  {"learning_rate", e.optimizer.learning_rate},
                  {"max_hessian_params", e.optimizer.max_hessian_params},
                  {"hessian_step", e.optimizer.hessian_step}}}}}};
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& ex) {
    throw std::invalid_argument("config " + path.string() + ": " + ex.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  json j = config_to_json(config);
  j.erase("output_dir");
  j.erase("checkpoint_every");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset load_stream(const ExperimentConfig& config) {
  const DataSourceConfig& d = config.data;
  const std::uint64_t seed = d.seed.value_or(config.seed);
  if (d.source == "csv") {
    CsvOptions opt;
    opt.header = d.header;
    opt.target = d.target;
    return load_csv(d.path, opt);
  }
  if (d.source == "friedman1") return gen_friedman(1, d.n, seed, d.noise);
  if (d.source == "friedman2") return gen_friedman(2, d.n, seed, d.noise);
  if (d.source == "clusters") return gen_interleaved_clusters(d.n, seed, d.ordered, d.noise < 0.0 ? 0.2 : d.noise);
  if (d.source == "drift") {
    std::mt19937_64 rng = split_rng(seed, 0x64726966ULL);
    const KernelSpec spec{KernelFamily::SquaredExponential, Vector::Constant(d.dim, d.lengthscale), 1.0};
    const BasisPtr basis = build_rff(spec, d.features, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector theta0(basis->feature_dim());
    for (Index k = 0; k < theta0.size(); ++k) theta0(k) = normal(rng);
    const DriftSchedule schedule = d.onset > 0 ? DriftSchedule::static_then_walk(theta0, d.onset, d.walk_var)
                                               : DriftSchedule::random_walk(theta0, d.walk_var);
    return gen_drift(*basis, schedule, d.n, d.noise_var, seed);
  }
  throw std::invalid_argument("unknown data source '" + d.source + "'");
}

fs::path resolve_output_dir(const ExperimentConfig& config, const RunOptions& options) {
  if (options.out_dir) return *options.out_dir;
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return fs::path(env) / config.name;
  return fs::path("results") / config.name;
}

json summary_to_json(const RunSummary& s) {
  json fin{{"nmse", s.metrics.nmse}, {"pll", s.metrics.pll}};
  if (s.classification) fin["error_rate"] = s.metrics.error_rate;
  return json{{"schema_version", kSchemaVersion},
              {"name", s.name},
              {"config_hash", s.config_hash},
              {"seed", s.seed},
              {"steps", s.steps},
              {"experts", s.experts},
              {"complete", s.complete},
              {"final", fin}};
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  const bool classification = config.ensemble.likelihood == Likelihood::Logistic;
  const fs::path out_dir = resolve_output_dir(config, options);
  fs::create_directories(out_dir);
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path summary_path = out_dir / "summary.json";
  const fs::path checkpoint_path = out_dir / "checkpoint.json";
  const std::string hash = config_hash(config);

  Dataset data = load_stream(config);
  if (data.size() <= config.pretrain) {
    throw std::invalid_argument("stream has " + std::to_string(data.size()) +
                                " records; pretraining window of " + std::to_string(config.pretrain) +
                                " leaves nothing to stream");
  }
  if (config.standardize) data = standardize(data, config.pretrain, !classification).data;
  const Dataset pretrain = data.slice(0, config.pretrain);
  const Dataset stream = data.slice(config.pretrain, data.size() - config.pretrain);
  const Index horizon = stream.size();

  MetricTrace trace = MetricTrace::with_variance(population_variance(stream.y), classification);
  EnsembleState state;
  Index t0 = 0;
  if (options.resume) {
    std::ifstream in(checkpoint_path);
    if (!in) throw std::runtime_error("resume: no checkpoint at " + checkpoint_path.string());
    json cp;
    in >> cp;
    if (cp.at("schema_version").get<int>() != kSchemaVersion) {
      throw std::runtime_error("resume: checkpoint schema version mismatch");
    }
    const std::string saved = cp.at("config_hash").get<std::string>();
    if (saved != hash) {
      throw std::runtime_error("resume: config hash " + hash + " does not match checkpoint " + saved);
    }
    t0 = cp.at("step").get<Index>();
    trace_from_json(cp.at("trace"), trace);
    state = ensemble_from_json(cp.at("ensemble"));
    truncate_metrics(metrics_path, t0);
  } else {
    state = assemble_ensemble(config.ensemble, pretrain, config.seed);
    std::ofstream(metrics_path, std::ios::binary | std::ios::trunc) << metrics_header(state.size());
    std::error_code ec;
    fs::remove(checkpoint_path, ec);
  }

  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());

  auto save_checkpoint = [&](Index step_count) {
    metrics.flush();
    json cp{{"schema_version", kSchemaVersion},
            {"config_hash", hash},
            {"step", step_count},
            {"trace", trace_to_json(trace)},
            {"ensemble", ensemble_to_json(state)}};
    write_text_atomic(checkpoint_path, cp.dump());
  };

  RunSummary summary;
  summary.name = config.name;
  summary.config_hash = hash;
  summary.seed = config.seed;
  summary.classification = classification;
  summary.experts = state.size();
  summary.out_dir = out_dir;

  for (Index t = t0; t < horizon; ++t) {
    StepResult res;
    try {
      res = step(state, stream.x.col(t), stream.y(t));
    } catch (const NumericalError& ex) {
      throw NumericalError("step " + std::to_string(t + 1) + ": " + ex.what());
    }
    if (options.log) {
      for (const std::string& msg : res.diagnostics.messages) *options.log << "step " << t + 1 << ": " << msg << "\n";
    }
    metrics_update(trace, res.prediction.mean, res.prediction.log_density, stream.y(t));
    const Index done = t + 1;
    if (done % config.trace_every == 0 || done == horizon) {
      metrics << metrics_row(done, metrics_read(trace), state.weights);
    }
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < horizon) save_checkpoint(done);
    if (options.stop_after && done == *options.stop_after && done < horizon) {
      save_checkpoint(done);
      summary.steps = done;
      summary.metrics = metrics_read(trace);
      summary.complete = false;
      return summary;
    }
  }
  metrics.close();

  summary.steps = horizon;
  summary.metrics = metrics_read(trace);
  write_text_atomic(summary_path, summary_to_json(summary).dump(2) + "\n");
  return summary;
}

std::vector<ComparisonRow> compare_summaries(const std::vector<fs::path>& files) {
  if (files.empty()) throw std::invalid_argument("compare: no result files");
  std::vector<ComparisonRow> rows;
  std::optional<int> schema;
  std::map<std::string, int> seen;
  for (fs::path p : files) {
    if (fs::is_directory(p)) p /= "summary.json";
    std::ifstream in(p);
    if (!in) throw std::runtime_error("compare: cannot open " + p.string());
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& ex) {
      throw std::runtime_error("compare: " + p.string() + ": " + ex.what());
    }
    const int version = j.at("schema_version").get<int>();
    if (schema && *schema != version) {
      throw std::runtime_error("compare: schema version mismatch (" + std::to_string(*schema) + " vs " +
                               std::to_string(version) + " in " + p.string() + ")");
    }
    schema = version;
    ComparisonRow row;
    row.label = j.value("name", p.string());
    if (seen[row.label]++ > 0) row.label = p.string();
    const json& fin = j.at("final");
    row.nmse = fin.at("nmse").get<double>();
    row.pll = fin.at("pll").get<double>();
    if (fin.contains("error_rate")) row.error_rate = fin.at("error_rate").get<double>();
    rows.push_back(std::move(row));
  }
  double best_nmse = rows.front().nmse;
  double best_pll = rows.front().pll;
  for (const ComparisonRow& r : rows) {
    best_nmse = std::min(best_nmse, r.nmse);
    best_pll = std::max(best_pll, r.pll);
  }
  for (ComparisonRow& r : rows) {
    r.best_nmse = r.nmse == best_nmse;
    r.best_pll = r.pll == best_pll;
  }
  return rows;
}

std::string render_table(const std::vector<ComparisonRow>& rows) {
  const bool with_error = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.error_rate.has_value(); });
  auto fmt = [](double v, bool best) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf) + (best ? " *" : "");
  };
  double best_error = 1.0;
  for (const ComparisonRow& r : rows) {
    if (r.error_rate) best_error = std::min(best_error, *r.error_rate);
  }
  std::vector<std::vector<std::string>> cells{{"run", "nMSE", "PLL"}};
  if (with_error) cells[0].push_back("error");
  for (const ComparisonRow& r : rows) {
    std::vector<std::string> line{r.label, fmt(r.nmse, r.best_nmse), fmt(r.pll, r.best_pll)};
    if (with_error) line.push_back(r.error_rate ? fmt(*r.error_rate, *r.error_rate == best_error) : "-");
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      if (c > 0) out << "  ";
      const std::string& s = cells[i][c];
      if (c == 0) {
        out << s << std::string(width[c] - s.size(), ' ');
      } else {
        out << std::string(width[c] - s.size(), ' ') << s;
      }
    }
    out << "\n";
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  return out.str();
}

}  // namespace doebe
