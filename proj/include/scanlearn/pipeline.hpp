#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scanlearn/backend.hpp"
#include "scanlearn/scan_aggregator.hpp"

namespace scanlearn {

struct Metrics {
  double accuracy_proxy = 0.0;
  std::size_t retained_entries = 0;
  std::size_t total_helpful_hits = 0;
  std::uint64_t token_size = 0;
  // Distinct corpus insights carried by the playbook.
  std::size_t specific_insights = 0;

  bool operator==(const Metrics&) const = default;
};

struct ScoreOptions {
  double coverage_fraction = 1.0;
};

struct ScoreResult {
  Metrics metrics;
  // IncrementHelpful for every covering entry of every solved task. Scoring
  // never mutates the playbook; callers decide whether to apply the marks.
  ContextDelta marks;
};

/// A task is solved when the playbook covers at least coverage_fraction of
/// its required insights. Throws MissingInsightTags if any eval task carries
/// no insight tags.
ScoreResult score_playbook(const Playbook& playbook, std::span<const TaskSample> eval_corpus,
                           const ScoreOptions& options = {});

/// Structural metrics only (for live-backend runs without insight tags).
Metrics shape_metrics(const Playbook& playbook);

struct IterationDelays {
  double map_s = 0.0;
  std::vector<double> reduce_s;
  double total_s = 0.0;
  bool operator==(const IterationDelays&) const = default;
};

struct RunRecord {
  std::uint64_t iteration = 0;
  StrategyConfig strategy;
  std::vector<std::string> batch_task_ids;
  std::optional<AggregationPlan> plan;
  ContextDelta delta;
  DeltaOpCounts op_counts;
  std::size_t curator_calls = 0;
  IterationDelays delays;
  std::optional<Metrics> metrics;
  std::uint64_t playbook_version = 0;

  bool operator==(const RunRecord&) const = default;
};

nlohmann::ordered_json metrics_to_json(const Metrics& metrics);
Metrics metrics_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json record_to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::ordered_json& doc);

struct MapResult {
  std::vector<Reflection> reflections;
  // Slowest sample's execute + reflect time; samples run side by side.
  double delay_s = 0.0;
  std::size_t execute_calls = 0;
  std::size_t reflect_calls = 0;
};

/// One reflection per sample, ordered by batch position. Samples with an
/// offline trajectory are reflected on without being executed.
MapResult map_phase(std::span<const TaskSample> batch, const Playbook& playbook, LearnerBackend& backend,
                    std::uint64_t seed, std::uint64_t iteration, std::size_t workers);

struct IterationOptions {
  std::size_t workers = 1;
  // Metric snapshots are taken against this corpus when set.
  std::span<const TaskSample> eval_corpus;
  ScoreOptions score;
};

struct IterationResult {
  Playbook playbook;
  RunRecord record;
};

/// Map, aggregate, apply: exactly one delta per call.
IterationResult run_iteration(std::span<const TaskSample> batch, const Playbook& playbook,
                              const StrategyConfig& strategy, LearnerBackend& backend,
                              std::uint64_t iteration, const IterationOptions& options);

struct EpochOptions {
  std::size_t workers = 1;
  std::uint64_t first_iteration = 0;
  std::span<const TaskSample> eval_corpus;
  ScoreOptions score;
};

struct EpochResult {
  Playbook playbook;
  std::vector<RunRecord> records;

  double epoch_time() const noexcept;
};

/// ceil(N / bs) consecutive batches in corpus order; the last may be short.
std::vector<std::span<const TaskSample>> partition_batches(std::span<const TaskSample> corpus,
                                                           std::size_t batch_size);

/// Throws EmptyCorpus, InvalidConfig, or BackendFailure carrying the
/// iteration index.
EpochResult run_epoch(std::span<const TaskSample> corpus, const Playbook& playbook,
                      const StrategyConfig& strategy, LearnerBackend& backend,
                      const EpochOptions& options = {});

}  // namespace scanlearn
