#include "scanlearn/scan_aggregator.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "scanlearn/errors.hpp"
#include "scanlearn/parallel.hpp"
#include "scanlearn/rng.hpp"

namespace scanlearn {

using json = nlohmann::ordered_json;

std::size_t AggregationPlan::curator_calls() const noexcept {
  std::size_t total = 0;
  for (const auto& level : levels) {
    total += level.calls;
  }
  return total;
}

double AggregationOutcome::reduce_delay() const noexcept {
  return std::accumulate(level_delays.begin(), level_delays.end(), 0.0);
}

ShuffledBatch augmented_shuffle(std::span<const Reflection> reflections, std::size_t p, std::uint64_t seed) {
  ShuffledBatch batch;
  batch.seed = seed;
  batch.items.reserve(reflections.size() * p);
  for (std::size_t source = 0; source < reflections.size(); ++source) {
    for (std::size_t copy = 0; copy < p; ++copy) {
      batch.items.push_back({source, copy});
    }
  }
  Rng rng(seed);
  rng.shuffle(std::span<ShuffledItem>(batch.items));
  return batch;
}

std::size_t default_subgroup_count(std::size_t n) noexcept {
  std::size_t k = 1;
  while ((k + 1) * (k + 1) <= n) {
    ++k;
  }
  return k;
}

AggregationPlan build_plan(std::size_t n, std::optional<std::size_t> k, std::size_t duplication) {
  if (n == 0) {
    throw InvalidK("aggregation plan needs at least one leaf");
  }
  const auto groups = k.value_or(default_subgroup_count(n));
  if (groups < 1 || groups > n) {
    throw InvalidK("subgroup count " + std::to_string(groups) + " outside [1, " + std::to_string(n) + "]");
  }
  AggregationPlan plan;
  plan.leaf_count = n;
  plan.duplication = duplication;
  plan.subgroup_count = groups;
  const auto base = n / groups;
  const auto extra = n % groups;
  std::size_t position = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const auto size = base + (g < extra ? 1 : 0);
    plan.groups.push_back({position, position + size});
    position += size;
  }
  plan.levels.push_back({groups, base + (extra > 0 ? 1 : 0)});
  if (groups > 1) {
    plan.levels.push_back({1, groups});
  }
  return plan;
}

AggregationOutcome scan_reduce(const ShuffledBatch& batch, const AggregationPlan& plan,
                               std::span<const Reflection> reflections, const Playbook& playbook,
                               LearnerBackend& backend, const ReduceContext& ctx) {
  if (plan.leaf_count != batch.items.size()) {
    throw InvalidK("plan covers " + std::to_string(plan.leaf_count) + " leaves but the batch holds " +
                   std::to_string(batch.items.size()));
  }
  const auto k = plan.groups.size();
  std::vector<Timed<ContextDelta>> partials(k);
  parallel_for(k, ctx.workers, [&](std::size_t g) {
    const auto& group = plan.groups[g];
    std::vector<Reflection> inputs;
    inputs.reserve(group.size());
    for (auto pos = group.begin; pos < group.end; ++pos) {
      inputs.push_back(reflections[batch.items[pos].source]);
    }
    const CallContext call{ctx.seed, ctx.iteration, Role::kCurate, 0, g};
    try {
      partials[g] = backend.curate(inputs, playbook, call);
    } catch (...) {
      rethrow_with_locus({ctx.iteration, std::nullopt, 0, g});
    }
  });

  AggregationOutcome outcome;
  outcome.plan = plan;
  outcome.curator_calls = k;
  double level0 = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    level0 = std::max(level0, partials[g].delay_s);
    outcome.call_loads.push_back(plan.groups[g].size());
  }
  outcome.level_delays.push_back(level0);

  if (k == 1) {
    outcome.delta = std::move(partials.front().value);
    return outcome;
  }

  std::vector<Reflection> merge_inputs;
  merge_inputs.reserve(k);
  for (std::size_t g = 0; g < k; ++g) {
    auto rendered = render_partial(partials[g].value, playbook, g);
    if (!rendered.items.empty()) {
      merge_inputs.push_back(std::move(rendered));
    }
  }
  if (merge_inputs.empty()) {
    outcome.level_delays.push_back(0.0);
    return outcome;
  }
  const CallContext call{ctx.seed, ctx.iteration, Role::kCurate, 1, 0};
  try {
    auto merged = backend.curate(merge_inputs, playbook, call);
    outcome.delta = std::move(merged.value);
    outcome.level_delays.push_back(merged.delay_s);
  } catch (...) {
    rethrow_with_locus({ctx.iteration, std::nullopt, 1, 0});
  }
  outcome.curator_calls += 1;
  outcome.call_loads.push_back(merge_inputs.size());
  return outcome;
}

AggregationOutcome aggregate(std::span<const Reflection> reflections, const StrategyConfig& strategy,
                             const Playbook& playbook, LearnerBackend& backend, const ReduceContext& ctx) {
  if (strategy.kind == StrategyKind::kParallelScan) {
    const auto shuffle_seed =
        derive_seed(ctx.seed, {ctx.iteration, static_cast<std::uint64_t>(Role::kShuffle)});
    const auto batch = augmented_shuffle(reflections, strategy.duplication, shuffle_seed);
    const auto plan = build_plan(batch.items.size(), strategy.subgroup_count, strategy.duplication);
    return scan_reduce(batch, plan, reflections, playbook, backend, ctx);
  }

  AggregationOutcome outcome;
  const CallContext call{ctx.seed, ctx.iteration, Role::kCurate, 0, 0};
  try {
    auto result = backend.curate(reflections, playbook, call);
    outcome.delta = std::move(result.value);
    outcome.level_delays.push_back(result.delay_s);
  } catch (...) {
    rethrow_with_locus({ctx.iteration, std::nullopt, 0, 0});
  }
  outcome.curator_calls = 1;
  outcome.call_loads.push_back(reflections.size());
  return outcome;
}

json plan_to_json(const AggregationPlan& plan) {
  json doc;
  doc["leaf_count"] = plan.leaf_count;
  doc["duplication"] = plan.duplication;
  doc["subgroup_count"] = plan.subgroup_count;
  doc["groups"] = json::array();
  for (const auto& group : plan.groups) {
    doc["groups"].push_back(json::array({group.begin, group.end}));
  }
  doc["levels"] = json::array();
  for (const auto& level : plan.levels) {
    json row;
    row["calls"] = level.calls;
    row["max_inputs_per_call"] = level.max_inputs_per_call;
    doc["levels"].push_back(std::move(row));
  }
  return doc;
}

AggregationPlan plan_from_json(const json& doc) {
  AggregationPlan plan;
  plan.leaf_count = doc.at("leaf_count").get<std::size_t>();
  plan.duplication = doc.at("duplication").get<std::size_t>();
  plan.subgroup_count = doc.at("subgroup_count").get<std::size_t>();
  for (const auto& group : doc.at("groups")) {
    plan.groups.push_back({group.at(0).get<std::size_t>(), group.at(1).get<std::size_t>()});
  }
  for (const auto& level : doc.at("levels")) {
    plan.levels.push_back(
        {level.at("calls").get<std::size_t>(), level.at("max_inputs_per_call").get<std::size_t>()});
  }
  return plan;
}

}  // namespace scanlearn
