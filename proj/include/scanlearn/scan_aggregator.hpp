#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "scanlearn/backend.hpp"

namespace scanlearn {

/// One leaf of the augmented batch: which reflection, and which of its p copies.
struct ShuffledItem {
  std::size_t source = 0;
  std::size_t duplicate_index = 0;
  bool operator==(const ShuffledItem&) const = default;
};

struct ShuffledBatch {
  std::vector<ShuffledItem> items;
  std::uint64_t seed = 0;
  bool operator==(const ShuffledBatch&) const = default;
};

/// Half-open run [begin, end) of leaf positions in the shuffled batch.
struct LeafGroup {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const LeafGroup&) const = default;
};

struct PlanLevel {
  std::size_t calls = 0;
  std::size_t max_inputs_per_call = 0;
  bool operator==(const PlanLevel&) const = default;
};

struct AggregationPlan {
  std::size_t leaf_count = 0;
  std::size_t duplication = 1;
  std::size_t subgroup_count = 1;
  std::vector<LeafGroup> groups;
  // levels[0] = per-group curation; levels[1] = cross-group merge (absent when k == 1).
  std::vector<PlanLevel> levels;

  std::size_t curator_calls() const noexcept;
  bool operator==(const AggregationPlan&) const = default;
};

/// Duplicates every reflection p times and Fisher-Yates shuffles the result
/// with a generator seeded from `seed`.
ShuffledBatch augmented_shuffle(std::span<const Reflection> reflections, std::size_t p, std::uint64_t seed);

/// floor(sqrt(n)), at least 1.
std::size_t default_subgroup_count(std::size_t n) noexcept;

/// Balanced contiguous partition of n leaves into k groups (the first n % k
/// groups hold one extra leaf). Throws InvalidK unless 1 <= k <= n.
AggregationPlan build_plan(std::size_t n, std::optional<std::size_t> k, std::size_t duplication = 1);

/// Result of one Agg step: the single delta for this iteration plus what it cost.
struct AggregationOutcome {
  ContextDelta delta;
  std::optional<AggregationPlan> plan;
  // Simulated or wall-clock seconds per level; each level costs its slowest call.
  std::vector<double> level_delays;
  std::size_t curator_calls = 0;
  // Number of input items handed to each curator call, in call order.
  std::vector<std::size_t> call_loads;

  double reduce_delay() const noexcept;
};

struct ReduceContext {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::size_t workers = 1;
};

/// Level 0: one curate() per group, run concurrently. Level 1: one merge
/// curate() over the partial deltas in group order. A one-group plan stops
/// after level 0. Failures surface as BackendFailure carrying (level, group).
AggregationOutcome scan_reduce(const ShuffledBatch& batch, const AggregationPlan& plan,
                               std::span<const Reflection> reflections, const Playbook& playbook,
                               LearnerBackend& backend, const ReduceContext& ctx);

/// Sequential / naive batch: one curate() over all reflections as given.
/// Parallel scan: augmented_shuffle, build_plan, scan_reduce.
AggregationOutcome aggregate(std::span<const Reflection> reflections, const StrategyConfig& strategy,
                             const Playbook& playbook, LearnerBackend& backend, const ReduceContext& ctx);

nlohmann::ordered_json plan_to_json(const AggregationPlan& plan);
AggregationPlan plan_from_json(const nlohmann::ordered_json& doc);

}  // namespace scanlearn
