#include "scanlearn/sim_backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "scanlearn/errors.hpp"
#include "scanlearn/rng.hpp"

namespace scanlearn {

namespace {

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::string_view kSpecificTemplates[] = {
    "When a task depends on {}, apply its exact rule and verify every intermediate value before answering.",
    "For {}: check the edge case first, then compute with full precision and round only at the end.",
    "Tasks involving {} need the dedicated procedure; do not substitute the generic shortcut.",
    "Use the {} convention as stated in the inputs and confirm units before returning.",
};

constexpr std::string_view kGenericTemplates[] = {
    "Double-check the requested output format before answering ({}).",
    "Read the task statement carefully and verify the final answer ({}).",
    "Prefer precise intermediate values and avoid premature rounding ({}).",
};

std::string fill(std::string_view pattern, std::string_view value) {
  std::string out(pattern);
  const auto at = out.find("{}");
  out.replace(at, 2, value);
  return out;
}

std::string generic_id(std::uint64_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 3) {
    digits.insert(0, 3 - digits.size(), '0');
  }
  return std::string(kGenericPrefix) + digits;
}

struct Offered {
  std::size_t mentions = 0;
  bool generic = false;
};

}  // namespace

std::size_t OverloadModel::capacity(std::size_t m) const {
  const double md = static_cast<double>(m);
  const double value = static_cast<double>(base_capacity) * md / (1.0 + crowding * (md - 1.0) * md);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(value)));
}

std::size_t OverloadModel::retained(std::size_t m, std::size_t distinct) const {
  if (distinct == 0) {
    return 0;
  }
  const double md = static_cast<double>(std::max<std::size_t>(m, 1));
  const double value = static_cast<double>(distinct) / (1.0 + crowding * (md - 1.0) * md);
  auto keep = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(value)), 1, distinct);
  if (m <= 1) {
    keep = std::min(keep, base_capacity);
  }
  return keep;
}

void validate(const SimConfig& config) {
  const auto& o = config.overload;
  if (o.base_capacity == 0) {
    throw InvalidConfig("overload.base_capacity must be positive");
  }
  if (!(o.crowding >= 0.0) || !std::isfinite(o.crowding)) {
    throw InvalidConfig("overload.crowding must be a non-negative number");
  }
  if (!(o.specificity_bias >= 0.0 && o.specificity_bias <= 1.0)) {
    throw InvalidConfig("overload.specificity_bias must lie in [0, 1]");
  }
  const auto& d = config.delay;
  if (!(d.rollout_latency > 0.0) || !(d.reflect_latency > 0.0) || !(d.curate_base > 0.0) ||
      !(d.curate_per_item >= 0.0)) {
    throw InvalidConfig("delay model latencies must be positive");
  }
  if (!(d.rollout_jitter >= 0.0 && d.rollout_jitter < 1.0)) {
    throw InvalidConfig("delay.rollout_jitter must lie in [0, 1)");
  }
  if (config.generic_pool_size == 0) {
    throw InvalidConfig("generic_pool_size must be positive");
  }
  if (!(config.coverage_fraction > 0.0 && config.coverage_fraction <= 1.0)) {
    throw InvalidConfig("coverage_fraction must lie in (0, 1]");
  }
}

bool is_generic_insight(std::string_view insight_id) noexcept {
  return insight_id.starts_with(kGenericPrefix);
}

SimBackend::SimBackend(SimConfig config) : config_(std::move(config)) { validate(config_); }

Section SimBackend::section_for(std::string_view insight_id) noexcept {
  if (is_generic_insight(insight_id)) {
    return Section::kOthers;
  }
  constexpr Section kSpecific[] = {Section::kStrategies, Section::kFormulas, Section::kMistakes,
                                   Section::kContextClues};
  return kSpecific[fnv1a(insight_id) % 4];
}

std::string SimBackend::insight_text(std::string_view insight_id) {
  const auto h = fnv1a(insight_id);
  if (is_generic_insight(insight_id)) {
    return fill(kGenericTemplates[h % std::size(kGenericTemplates)], insight_id);
  }
  return fill(kSpecificTemplates[h % std::size(kSpecificTemplates)], insight_id);
}

Timed<Trajectory> SimBackend::execute(const TaskSample& task, const Playbook& playbook,
                                      const CallContext& ctx) {
  if (task.required_insights.empty()) {
    throw BackendFailure("simulated execution needs insight tags on task " + task.task_id);
  }
  Rng rng(ctx.stream_seed());
  const double covered = coverage_fraction(playbook, task.required_insights);
  Trajectory trajectory;
  trajectory.task_id = task.task_id;
  trajectory.outcome = covered >= config_.coverage_fraction ? Outcome::kSuccess : Outcome::kFailure;
  const auto n_required = task.required_insights.size();
  const auto n_covered = static_cast<std::size_t>(std::llround(covered * static_cast<double>(n_required)));
  trajectory.steps = {
      "observe: " + task.task_id,
      "consult playbook: " + std::to_string(n_covered) + "/" + std::to_string(n_required) +
          " required insights available",
      std::string("result: ") + std::string(outcome_key(trajectory.outcome)),
  };
  const auto& delay = config_.delay;
  const double factor = 1.0 + delay.rollout_jitter * (2.0 * rng.uniform01() - 1.0);
  const double latency = delay.rollout_latency * factor;
  trajectory.latency_s = latency;
  return {std::move(trajectory), latency};
}

Timed<Reflection> SimBackend::reflect(const TaskSample& task, const Trajectory& trajectory,
                                      const Playbook& playbook, const CallContext& ctx) {
  Rng rng(ctx.stream_seed());
  Reflection reflection;
  reflection.source_task_id = task.task_id;
  reflection.origin_index = static_cast<std::size_t>(ctx.index);

  std::vector<std::string> covering;
  for (const auto& insight : task.required_insights) {
    if (playbook.covers(insight)) {
      covering.push_back(insight);
    } else {
      reflection.items.push_back({insight, insight_text(insight), Polarity::kHelpful});
    }
  }

  const auto generic = generic_id(rng.below(config_.generic_pool_size));
  reflection.items.push_back({generic, insight_text(generic), Polarity::kHelpful});

  if (trajectory.outcome == Outcome::kFailure && !covering.empty()) {
    const auto& blamed = covering[rng.below(covering.size())];
    const auto* entry = playbook.find_by_insight(blamed);
    reflection.items.push_back(
        {blamed, "Entry [" + entry->id + "] was applied but the task still failed.", Polarity::kHarmful});
  }
  return {std::move(reflection), config_.delay.reflect_latency};
}

Timed<ContextDelta> SimBackend::curate(std::span<const Reflection> inputs, const Playbook& playbook,
                                       const CallContext& ctx) {
  std::set<std::pair<std::string, std::size_t>> sources;
  std::map<std::string, Offered> offered;
  std::set<std::string> blamed;
  for (const auto& input : inputs) {
    sources.emplace(input.source_task_id, input.origin_index);
    for (const auto& item : input.items) {
      if (item.insight_id.empty()) {
        continue;
      }
      if (item.polarity == Polarity::kHarmful) {
        blamed.insert(item.insight_id);
        continue;
      }
      auto& slot = offered[item.insight_id];
      ++slot.mentions;
      slot.generic = is_generic_insight(item.insight_id);
    }
  }

  const auto keep = config_.overload.retained(sources.size(), offered.size());

  // Weighted sampling without replacement (exponential keys). Draws happen
  // in insight-id order, so input order never matters.
  const double bias = config_.overload.specificity_bias;
  struct Candidate {
    int tier;
    double key;
    const std::string* insight;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(offered.size());
  Rng rng(ctx.stream_seed());
  for (const auto& [insight, info] : offered) {
    const double log_u = std::log(rng.uniform_open0());
    int tier = 0;
    double weight = static_cast<double>(info.mentions);
    if (info.generic) {
      if (bias >= 1.0) {
        tier = 1;
      } else if (bias <= 0.0) {
        tier = -1;
      } else {
        weight *= bias / (1.0 - bias);
      }
    }
    candidates.push_back({tier, log_u / weight, &insight});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.tier != b.tier ? a.tier > b.tier : a.key > b.key;
  });
  candidates.resize(keep);
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return *a.insight < *b.insight; });

  ContextDelta delta;
  auto serial = playbook.next_serial();
  for (const auto& candidate : candidates) {
    const auto& insight = *candidate.insight;
    if (const auto* entry = playbook.find_by_insight(insight)) {
      delta.ops.emplace_back(IncrementHelpfulOp{entry->id});
      continue;
    }
    PlaybookEntry entry;
    entry.section = section_for(insight);
    entry.id = Playbook::make_id(entry.section, serial++);
    entry.text = insight_text(insight);
    entry.insight_ids = {insight};
    entry.created_iter = ctx.iteration;
    delta.ops.emplace_back(AddOp{std::move(entry)});
  }
  for (const auto& insight : blamed) {
    if (const auto* entry = playbook.find_by_insight(insight)) {
      delta.ops.emplace_back(IncrementHarmfulOp{entry->id});
    }
  }
  return {std::move(delta), config_.delay.curate(inputs.size())};
}

}  // namespace scanlearn
