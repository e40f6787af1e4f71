#include "scanlearn/pipeline.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "scanlearn/errors.hpp"
#include "scanlearn/parallel.hpp"

namespace scanlearn {

using json = nlohmann::ordered_json;

ScoreResult score_playbook(const Playbook& playbook, std::span<const TaskSample> eval_corpus,
                           const ScoreOptions& options) {
  ScoreResult result;
  std::set<std::string> universe;
  std::size_t solved = 0;
  for (const auto& task : eval_corpus) {
    if (task.required_insights.empty()) {
      throw MissingInsightTags("task " + task.task_id + " carries no insight tags; scoring needs the simulated backend");
    }
    universe.insert(task.required_insights.begin(), task.required_insights.end());
    if (coverage_fraction(playbook, task.required_insights) < options.coverage_fraction) {
      continue;
    }
    ++solved;
    for (const auto& insight : task.required_insights) {
      if (const auto* entry = playbook.find_by_insight(insight)) {
        result.marks.ops.emplace_back(IncrementHelpfulOp{entry->id});
      }
    }
  }
  result.metrics = shape_metrics(playbook);
  result.metrics.accuracy_proxy =
      eval_corpus.empty() ? 0.0 : static_cast<double>(solved) / static_cast<double>(eval_corpus.size());
  result.metrics.total_helpful_hits = result.marks.ops.size();
  result.metrics.specific_insights = static_cast<std::size_t>(
      std::count_if(universe.begin(), universe.end(), [&](const std::string& id) { return playbook.covers(id); }));
  return result;
}

Metrics shape_metrics(const Playbook& playbook) {
  Metrics metrics;
  metrics.retained_entries = playbook.size();
  metrics.token_size = playbook.token_size();
  return metrics;
}

MapResult map_phase(std::span<const TaskSample> batch, const Playbook& playbook, LearnerBackend& backend,
                    std::uint64_t seed, std::uint64_t iteration, std::size_t workers) {
  MapResult result;
  result.reflections.resize(batch.size());
  std::vector<double> delays(batch.size(), 0.0);
  std::vector<char> executed(batch.size(), 0);

  parallel_for(batch.size(), workers, [&](std::size_t i) {
    const auto& task = batch[i];
    try {
      Trajectory trajectory;
      double delay = 0.0;
      if (task.offline_trajectory) {
        trajectory = *task.offline_trajectory;
      } else {
        auto run = backend.execute(task, playbook, {seed, iteration, Role::kExecute, 0, i});
        trajectory = std::move(run.value);
        delay += run.delay_s;
        executed[i] = 1;
      }
      auto reflected = backend.reflect(task, trajectory, playbook, {seed, iteration, Role::kReflect, 0, i});
      delay += reflected.delay_s;
      reflected.value.source_task_id = task.task_id;
      reflected.value.origin_index = i;
      result.reflections[i] = std::move(reflected.value);
      delays[i] = delay;
    } catch (...) {
      rethrow_with_locus({iteration, task.task_id, std::nullopt, std::nullopt});
    }
  });

  result.delay_s = delays.empty() ? 0.0 : *std::max_element(delays.begin(), delays.end());
  result.execute_calls = static_cast<std::size_t>(std::count(executed.begin(), executed.end(), 1));
  result.reflect_calls = batch.size();
  return result;
}

IterationResult run_iteration(std::span<const TaskSample> batch, const Playbook& playbook,
                              const StrategyConfig& strategy, LearnerBackend& backend,
                              std::uint64_t iteration, const IterationOptions& options) {
  if (batch.empty()) {
    throw EmptyCorpus();
  }
  auto mapped = map_phase(batch, playbook, backend, strategy.seed, iteration, options.workers);
  auto aggregated = aggregate(mapped.reflections, strategy, playbook, backend,
                              {strategy.seed, iteration, options.workers});

  IterationResult result;
  result.playbook = apply_delta(playbook, aggregated.delta);

  auto& record = result.record;
  record.iteration = iteration;
  record.strategy = strategy;
  record.batch_task_ids.reserve(batch.size());
  for (const auto& task : batch) {
    record.batch_task_ids.push_back(task.task_id);
  }
  record.plan = aggregated.plan;
  record.op_counts = count_ops(aggregated.delta);
  record.curator_calls = aggregated.curator_calls;
  record.delays.map_s = mapped.delay_s;
  record.delays.reduce_s = aggregated.level_delays;
  record.delays.total_s = mapped.delay_s + aggregated.reduce_delay();
  record.delta = std::move(aggregated.delta);
  if (!options.eval_corpus.empty() && backend.provides_insight_tags()) {
    record.metrics = score_playbook(result.playbook, options.eval_corpus, options.score).metrics;
  } else {
    record.metrics = shape_metrics(result.playbook);
  }
  record.playbook_version = result.playbook.version();
  return result;
}

double EpochResult::epoch_time() const noexcept {
  return std::accumulate(records.begin(), records.end(), 0.0,
                         [](double acc, const RunRecord& r) { return acc + r.delays.total_s; });
}

std::vector<std::span<const TaskSample>> partition_batches(std::span<const TaskSample> corpus,
                                                           std::size_t batch_size) {
  std::vector<std::span<const TaskSample>> batches;
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    batches.push_back(corpus.subspan(begin, std::min(batch_size, corpus.size() - begin)));
  }
  return batches;
}

EpochResult run_epoch(std::span<const TaskSample> corpus, const Playbook& playbook,
                      const StrategyConfig& strategy, LearnerBackend& backend, const EpochOptions& options) {
  if (corpus.empty()) {
    throw EmptyCorpus();
  }
  validate(strategy, corpus.size());

  EpochResult result;
  result.playbook = playbook;
  const IterationOptions iteration_options{options.workers, options.eval_corpus, options.score};
  auto iteration = options.first_iteration;
  for (const auto batch : partition_batches(corpus, strategy.batch_size)) {
    auto step = run_iteration(batch, result.playbook, strategy, backend, iteration++, iteration_options);
    result.playbook = std::move(step.playbook);
    result.records.push_back(std::move(step.record));
  }
  return result;
}

json metrics_to_json(const Metrics& metrics) {
  json doc;
  doc["accuracy_proxy"] = metrics.accuracy_proxy;
  doc["retained_entries"] = metrics.retained_entries;
  doc["total_helpful_hits"] = metrics.total_helpful_hits;
  doc["token_size"] = metrics.token_size;
  doc["specific_insights"] = metrics.specific_insights;
  return doc;
}

Metrics metrics_from_json(const json& doc) {
  Metrics metrics;
  metrics.accuracy_proxy = doc.value("accuracy_proxy", 0.0);
  metrics.retained_entries = doc.value("retained_entries", std::size_t{0});
  metrics.total_helpful_hits = doc.value("total_helpful_hits", std::size_t{0});
  metrics.token_size = doc.value("token_size", std::uint64_t{0});
  metrics.specific_insights = doc.value("specific_insights", std::size_t{0});
  return metrics;
}

json record_to_json(const RunRecord& record) {
  json doc;
  doc["iteration"] = record.iteration;
  doc["strategy"] = strategy_to_json(record.strategy);
  doc["batch_task_ids"] = record.batch_task_ids;
  doc["plan"] = record.plan ? plan_to_json(*record.plan) : json(nullptr);
  json counts;
  counts["add"] = record.op_counts.add;
  counts["amend_text"] = record.op_counts.amend_text;
  counts["increment_helpful"] = record.op_counts.increment_helpful;
  counts["increment_harmful"] = record.op_counts.increment_harmful;
  counts["remove"] = record.op_counts.remove;
  doc["op_counts"] = std::move(counts);
  doc["curator_calls"] = record.curator_calls;
  json delays;
  delays["map_s"] = record.delays.map_s;
  delays["reduce_s"] = record.delays.reduce_s;
  delays["total_s"] = record.delays.total_s;
  doc["delays"] = std::move(delays);
  doc["metrics"] = record.metrics ? metrics_to_json(*record.metrics) : json(nullptr);
  doc["playbook_version"] = record.playbook_version;
  doc["delta"] = delta_to_json(record.delta);
  return doc;
}

RunRecord record_from_json(const json& doc) {
  RunRecord record;
  record.iteration = doc.at("iteration").get<std::uint64_t>();
  record.strategy = strategy_from_json(doc.at("strategy"));
  record.batch_task_ids = doc.at("batch_task_ids").get<std::vector<std::string>>();
  if (!doc.at("plan").is_null()) {
    record.plan = plan_from_json(doc.at("plan"));
  }
  const auto& counts = doc.at("op_counts");
  record.op_counts.add = counts.at("add").get<std::size_t>();
  record.op_counts.amend_text = counts.at("amend_text").get<std::size_t>();
  record.op_counts.increment_helpful = counts.at("increment_helpful").get<std::size_t>();
  record.op_counts.increment_harmful = counts.at("increment_harmful").get<std::size_t>();
  record.op_counts.remove = counts.at("remove").get<std::size_t>();
  record.curator_calls = doc.at("curator_calls").get<std::size_t>();
  const auto& delays = doc.at("delays");
  record.delays.map_s = delays.at("map_s").get<double>();
  record.delays.reduce_s = delays.at("reduce_s").get<std::vector<double>>();
  record.delays.total_s = delays.at("total_s").get<double>();
  if (!doc.at("metrics").is_null()) {
    record.metrics = metrics_from_json(doc.at("metrics"));
  }
  record.playbook_version = doc.at("playbook_version").get<std::uint64_t>();
  record.delta = delta_from_json(doc.at("delta"));
  return record;
}

}  // namespace scanlearn
