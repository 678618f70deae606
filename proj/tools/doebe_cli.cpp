#include "doebe/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::optional<std::string>& out, const std::optional<std::string>& mode,
            const std::vector<double>& sigma_rw, std::optional<long long> checkpoint_every, bool resume,
            std::optional<long long> stop_after, bool report) {
  doebe::ExperimentConfig config = doebe::load_config(config_path);
  if (seed) config.seed = *seed;
  if (mode) config.ensemble.mode = doebe::ensemble_mode_from_string(*mode);
  if (!sigma_rw.empty()) config.ensemble.drift_levels = sigma_rw;
  if (checkpoint_every) config.checkpoint_every = *checkpoint_every;
  doebe::validate(config);

  doebe::RunOptions options;
  if (out) options.out_dir = *out;
  options.resume = resume;
  if (stop_after) options.stop_after = *stop_after;
  options.log = &std::cerr;

  const doebe::RunSummary summary = doebe::run_experiment(config, options);
  if (!summary.complete) {
    std::cout << "stopped after " << summary.steps << " steps; checkpoint in " << summary.out_dir.string() << "\n";
    return 0;
  }
  if (report) {
    doebe::ComparisonRow row{summary.name, summary.metrics.nmse, summary.metrics.pll, std::nullopt, true, true};
    if (summary.classification) row.error_rate = summary.metrics.error_rate;
    std::cout << doebe::render_table({row});
  }
  std::cout << "wrote " << (summary.out_dir / "metrics.csv").string() << " and "
            << (summary.out_dir / "summary.json").string() << " (config " << summary.config_hash << ")\n";
  return 0;
}

int cmd_gen(const std::string& variant, long long n, std::uint64_t seed, const std::string& out) {
  doebe::Dataset data;
  if (variant == "friedman1") {
    data = doebe::gen_friedman(1, n, seed);
  } else if (variant == "friedman2") {
    data = doebe::gen_friedman(2, n, seed);
  } else if (variant == "clusters") {
    data = doebe::gen_interleaved_clusters(n, seed, false);
  } else if (variant == "clusters-ordered") {
    data = doebe::gen_interleaved_clusters(n, seed, true);
  } else {
    throw std::invalid_argument("unknown variant '" + variant + "'");
  }
  doebe::write_csv(out, data);
  std::cout << "wrote " << n << " records to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming regression with online ensembles of basis expansions"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Pretrain and stream one experiment");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::vector<double> sigma_rw;
  std::optional<long long> checkpoint_every;
  std::optional<long long> stop_after;
  bool resume = false;
  bool report = false;
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Output directory");
  run->add_option("--mode", mode, "oebe | doebe | sdoebe | edoebe");
  run->add_option("--sigma-rw", sigma_rw, "Random-walk variance level(s)");
  run->add_option("--checkpoint-every", checkpoint_every, "Checkpoint period in steps");
  run->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");
  run->add_option("--stop-after", stop_after, "Stop after N streamed records, leaving a checkpoint");
  run->add_flag("--report", report, "Print a summary table");

  auto* compare = app.add_subcommand("compare", "Tabulate final metrics of several runs");
  std::vector<std::string> files;
  compare->add_option("files", files, "summary.json files or run directories")->required();

  auto* gen = app.add_subcommand("gen", "Write a synthetic stream to CSV");
  std::string variant;
  long long n = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--variant", variant, "friedman1 | friedman2 | clusters | clusters-ordered")->required();
  gen->add_option("--n", n, "Number of records")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, seed, out, mode, sigma_rw, checkpoint_every, resume, stop_after, report);
    if (*compare) {
      std::vector<std::filesystem::path> paths(files.begin(), files.end());
      std::cout << doebe::render_table(doebe::compare_summaries(paths));
      return 0;
    }
    if (*gen) return cmd_gen(variant, n, gen_seed, gen_out);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
