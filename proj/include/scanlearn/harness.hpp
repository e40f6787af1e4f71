#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scanlearn/batch_controller.hpp"
#include "scanlearn/chat_backend.hpp"
#include "scanlearn/pipeline.hpp"
#include "scanlearn/sim_backend.hpp"

namespace scanlearn {

struct CorpusSpec {
  std::size_t size = 100;
  std::size_t insights_per_task = 3;
  std::size_t pool_size = 300;
};

/// Tasks "task-0000".. each requiring insights_per_task distinct pool
/// insights "ins-000".. drawn without replacement. Throws InvalidSpec.
std::vector<TaskSample> generate_corpus(const CorpusSpec& spec, std::uint64_t seed);

/// Rewrites one parsed trace line into the native schema before it is read;
/// lets external trace formats be ingested without a converter script.
using TraceMapper = std::function<nlohmann::ordered_json(nlohmann::ordered_json)>;

/// One TaskSample per non-blank JSONL line:
///   {"task_id": str, "steps": [str], "outcome": "success"|"failure",
///    "insights": [str]?, "payload": str?, ...}
/// Other fields are kept in TaskSample::extras. Throws ParseError (1-based
/// line), DuplicateTaskId, EmptyCorpus.
std::vector<TaskSample> ingest_traces(std::istream& in, const TraceMapper& mapper = {});
std::vector<TaskSample> ingest_traces(const std::filesystem::path& path, const TraceMapper& mapper = {});

enum class BackendKind { kSim, kHttp };

struct ExperimentConfig {
  // Exactly one of these two.
  std::optional<CorpusSpec> corpus;
  std::optional<std::filesystem::path> trace_path;

  StrategyConfig strategy;
  // Present: profile candidate batch sizes and train at the plateau.
  std::optional<ControllerConfig> controller;

  BackendKind backend = BackendKind::kSim;
  SimConfig sim;
  ChatBackendConfig chat;
  ScoreOptions score;

  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::size_t epochs = 1;
  // Shuffle task order (seeded) before every epoch after the first.
  bool reshuffle_epochs = false;
  std::filesystem::path output_dir = "runs/default";
};

/// Throws InvalidConfig.
void validate(const ExperimentConfig& config);

/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::ordered_json& doc, ExperimentConfig base = {});
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Loads or generates the training corpus described by the config.
std::vector<TaskSample> load_corpus(const ExperimentConfig& config);

std::unique_ptr<LearnerBackend> make_backend(const ExperimentConfig& config);

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  StrategyKind strategy = StrategyKind::kParallelScan;
  double epoch_time = 0.0;
  Metrics metrics;
};

struct ExperimentResult {
  Playbook playbook;
  std::vector<RunRecord> records;
  std::vector<EpochSummary> epochs;
  // One per profiling pass; empty without a controller.
  std::vector<ProfileResult> profiles;
  bool fell_back_to_bs1 = false;
};

/// Runs everything in memory. Progress lines go to `log` when given.
ExperimentResult simulate_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);
ExperimentResult simulate_experiment(const ExperimentConfig& config, std::span<const TaskSample> corpus,
                                     std::ostream* log = nullptr);

/// simulate_experiment, then writes config.json, playbook.json, playbook.md,
/// records.jsonl, metrics.csv and, with a controller, fit.json and
/// profile.csv into config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

inline constexpr std::string_view kMetricsCsvHeader =
    "epoch,bs,strategy,epoch_time,retained_entries,accuracy_proxy,token_size,specific_insights,"
    "total_helpful_hits";
std::string metrics_csv(std::span<const EpochSummary> rows);

struct SweepConfig {
  ExperimentConfig base;
  std::vector<StrategyKind> strategies{StrategyKind::kNaiveBatch, StrategyKind::kParallelScan};
  std::vector<std::size_t> batch_sizes{1, 5, 10, 20, 50, 100};
};

/// One fixed-bs run per (strategy, bs) in "<output_dir>/<strategy>-bs<bs>",
/// plus a combined metrics.csv (last epoch of each run) at the top level.
/// Sequential only takes bs = 1. Returns the combined rows.
std::vector<EpochSummary> run_sweep(const SweepConfig& config, std::ostream* log = nullptr);

/// Profiles and fits without training; writes profile.csv and fit.json.
ProfileResult run_profile(const ExperimentConfig& config, std::ostream* log = nullptr);

struct ReportSummary {
  std::size_t iterations = 0;
  std::size_t final_entries = 0;
  std::size_t replayed_entries = 0;
  bool replay_matches = false;
  std::uint64_t total_helpful = 0;
  std::uint64_t total_harmful = 0;
  double total_delay = 0.0;
};

/// Reads records.jsonl (and playbook.json when present) from a run dir and
/// writes report_quality.csv, report_histogram.csv and report.json there.
/// Throws MissingRunData.
ReportSummary report(const std::filesystem::path& run_dir);

/// Process exit status for an error escaping a subcommand.
int exit_code_for(const std::exception& error) noexcept;

}  // namespace scanlearn
