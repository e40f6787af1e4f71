// Command-line driver: run, sweep, profile, ingest, report.
//
// Settings resolve as flag > config file > built-in default.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scanlearn/errors.hpp"
#include "scanlearn/harness.hpp"

namespace {

using scanlearn::ExperimentConfig;

struct CommonFlags {
  std::string config_path;
  std::string strategy;
  std::size_t batch_size = 0;
  std::size_t duplication = 0;
  std::size_t subgroups = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::size_t epochs = 0;
  bool reshuffle_epochs = false;
  std::string output_dir;
  std::size_t corpus_size = 0;
  std::size_t insights_per_task = 0;
  std::size_t pool_size = 0;
  std::string traces;
  std::string backend;
  bool controller = false;
  double tau_fraction = 0.0;
  std::vector<std::size_t> candidates;
  std::size_t reprofile_every = 0;

  std::map<std::string, CLI::Option*> options;

  bool given(const std::string& name) const { return options.at(name)->count() > 0; }
};

void track(CommonFlags& flags, const std::string& name, CLI::Option* option) { flags.options[name] = option; }

void add_common_flags(CLI::App& app, CommonFlags& flags) {
  track(flags, "config",
        app.add_option("-c,--config", flags.config_path, "JSON config file"));
  track(flags, "strategy",
        app.add_option("--strategy", flags.strategy, "sequential | naive_batch | parallel_scan"));
  track(flags, "bs",
        app.add_option("--bs,--batch-size", flags.batch_size, "Batch size"));
  track(flags, "duplication",
        app.add_option("-p,--duplication", flags.duplication, "Copies of each reflection"));
  track(flags, "subgroups",
        app.add_option("-k,--subgroups", flags.subgroups, "Level-0 curator groups"));
  track(flags, "seed",
        app.add_option("--seed", flags.seed, "Root seed"));
  track(flags, "workers",
        app.add_option("--workers", flags.workers, "Host threads"));
  track(flags, "epochs",
        app.add_option("--epochs", flags.epochs, "Passes over the corpus"));
  track(flags, "reshuffle_epochs",
        app.add_flag("--reshuffle-epochs", flags.reshuffle_epochs, "Shuffle task order between epochs"));
  track(flags, "output",
        app.add_option("-o,--output", flags.output_dir, "Output directory"));
  track(flags, "corpus_size",
        app.add_option("--corpus-size", flags.corpus_size, "Synthetic corpus size"));
  track(flags, "insights_per_task",
        app.add_option("--insights-per-task", flags.insights_per_task, "Insights required per task"));
  track(flags, "pool_size",
        app.add_option("--pool-size", flags.pool_size, "Distinct insights in the pool"));
  track(flags, "traces",
        app.add_option("--traces", flags.traces, "Train on a JSONL trace file instead"));
  track(flags, "backend",
        app.add_option("--backend", flags.backend, "sim | http"));
  track(flags, "controller",
        app.add_flag("--controller", flags.controller, "Pick the batch size by profiling"));
  track(flags, "tau_fraction",
        app.add_option("--tau-fraction", flags.tau_fraction, "Plateau threshold as a slope fraction"));
  track(flags, "candidates",
        app.add_option("--candidates", flags.candidates, "Profiled batch sizes"));
  track(flags, "reprofile_every",
        app.add_option("--reprofile-every", flags.reprofile_every, "Re-profile every n iterations"));
}

ExperimentConfig resolve(const CommonFlags& flags) {
  ExperimentConfig config;
  config.corpus = scanlearn::CorpusSpec{};
  if (flags.given("config")) {
    config = scanlearn::load_config(flags.config_path, config);
  }
  if (flags.given("strategy")) config.strategy.kind = scanlearn::parse_strategy(flags.strategy);
  if (flags.given("bs")) config.strategy.batch_size = flags.batch_size;
  if (flags.given("duplication")) config.strategy.duplication = flags.duplication;
  if (flags.given("subgroups")) config.strategy.subgroup_count = flags.subgroups;
  if (flags.given("seed")) config.seed = flags.seed;
  if (flags.given("workers")) config.workers = flags.workers;
  if (flags.given("epochs")) config.epochs = flags.epochs;
  if (flags.given("reshuffle_epochs")) config.reshuffle_epochs = true;
  if (flags.given("output")) config.output_dir = flags.output_dir;
  if (flags.given("corpus_size") || flags.given("insights_per_task") || flags.given("pool_size")) {
    auto spec = config.corpus.value_or(scanlearn::CorpusSpec{});
    if (flags.given("corpus_size")) spec.size = flags.corpus_size;
    if (flags.given("insights_per_task")) spec.insights_per_task = flags.insights_per_task;
    if (flags.given("pool_size")) spec.pool_size = flags.pool_size;
    config.corpus = spec;
    config.trace_path.reset();
  }
  if (flags.given("traces")) {
    config.trace_path = flags.traces;
    config.corpus.reset();
  }
  if (flags.given("backend")) {
    if (flags.backend == "sim") {
      config.backend = scanlearn::BackendKind::kSim;
    } else if (flags.backend == "http") {
      config.backend = scanlearn::BackendKind::kHttp;
    } else {
      throw scanlearn::InvalidConfig("--backend must be sim or http");
    }
  }
  if (flags.given("controller") || flags.given("tau_fraction") || flags.given("candidates") ||
      flags.given("reprofile_every")) {
    auto controller = config.controller.value_or(scanlearn::ControllerConfig{});
    if (flags.given("tau_fraction")) controller.tau_fraction = flags.tau_fraction;
    if (flags.given("candidates")) controller.candidates = flags.candidates;
    if (flags.given("reprofile_every")) controller.reprofile_every = flags.reprofile_every;
    config.controller = controller;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Batched prompt-learning experiments with parallel-scan aggregation"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "Train for the configured epochs and write run artifacts");
  add_common_flags(*run, run_flags);

  CommonFlags sweep_flags;
  std::vector<std::string> sweep_strategies{"naive_batch", "parallel_scan"};
  std::vector<std::size_t> sweep_sizes{1, 5, 10, 20, 50, 100};
  auto* sweep = app.add_subcommand("sweep", "Run every (strategy, batch size) pair");
  add_common_flags(*sweep, sweep_flags);
  sweep->add_option("--strategies", sweep_strategies, "Strategies to sweep");
  sweep->add_option("--batch-sizes", sweep_sizes, "Batch sizes to sweep");

  CommonFlags profile_flags;
  auto* profile = app.add_subcommand("profile", "Profile candidate batch sizes and fit the delay curve");
  add_common_flags(*profile, profile_flags);

  std::string ingest_path;
  auto* ingest = app.add_subcommand("ingest", "Validate a JSONL trace file");
  ingest->add_option("traces", ingest_path, "JSONL trace file")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize a run directory");
  report->add_option("run_dir", report_dir, "Directory written by run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      scanlearn::run_experiment(resolve(run_flags), &std::cout);
    } else if (sweep->parsed()) {
      scanlearn::SweepConfig config;
      config.base = resolve(sweep_flags);
      config.strategies.clear();
      for (const auto& name : sweep_strategies) {
        config.strategies.push_back(scanlearn::parse_strategy(name));
      }
      config.batch_sizes = sweep_sizes;
      const auto rows = scanlearn::run_sweep(config, &std::cout);
      std::cout << scanlearn::metrics_csv(rows);
    } else if (profile->parsed()) {
      auto config = resolve(profile_flags);
      if (!config.controller) config.controller = scanlearn::ControllerConfig{};
      scanlearn::run_profile(config, &std::cout);
    } else if (ingest->parsed()) {
      const auto corpus = scanlearn::ingest_traces(ingest_path);
      std::size_t successes = 0;
      std::size_t tagged = 0;
      for (const auto& task : corpus) {
        successes += task.offline_trajectory->outcome == scanlearn::Outcome::kSuccess;
        tagged += !task.required_insights.empty();
      }
      std::cout << corpus.size() << " traces, " << successes << " successful, " << tagged
                << " with insight tags\n";
    } else if (report->parsed()) {
      const auto summary = scanlearn::report(report_dir);
      std::cout << summary.iterations << " iterations, " << summary.final_entries << " entries, replay "
                << (summary.replay_matches ? "matches" : "differs") << "\n";
      if (!summary.replay_matches) return 8;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return scanlearn::exit_code_for(e);
  }
  return 0;
}
