#include "scanlearn/learning_types.hpp"

#include "scanlearn/errors.hpp"

namespace scanlearn {

using json = nlohmann::ordered_json;

std::string_view strategy_key(StrategyKind kind) noexcept {
  switch (kind) {
    case StrategyKind::kSequential:
      return "sequential";
    case StrategyKind::kNaiveBatch:
      return "naive_batch";
    case StrategyKind::kParallelScan:
      return "parallel_scan";
  }
  return "parallel_scan";
}

StrategyKind parse_strategy(std::string_view key) {
  if (key == "sequential") return StrategyKind::kSequential;
  if (key == "naive_batch" || key == "naive") return StrategyKind::kNaiveBatch;
  if (key == "parallel_scan" || key == "scan") return StrategyKind::kParallelScan;
  throw InvalidConfig("unknown strategy: " + std::string(key));
}

void validate(const StrategyConfig& strategy, std::size_t corpus_size) {
  if (strategy.batch_size == 0) {
    throw InvalidConfig("batch_size must be positive");
  }
  if (corpus_size > 0 && strategy.batch_size > corpus_size) {
    throw InvalidConfig("batch_size " + std::to_string(strategy.batch_size) +
                        " exceeds training set size " + std::to_string(corpus_size));
  }
  if (strategy.kind == StrategyKind::kSequential && strategy.batch_size != 1) {
    throw InvalidConfig("sequential strategy runs with batch_size 1");
  }
  if (strategy.duplication == 0) {
    throw InvalidConfig("duplication must be at least 1");
  }
  if (strategy.subgroup_count && *strategy.subgroup_count == 0) {
    throw InvalidConfig("subgroup_count must be at least 1");
  }
}

std::string_view outcome_key(Outcome outcome) noexcept {
  return outcome == Outcome::kSuccess ? "success" : "failure";
}

std::string_view polarity_key(Polarity polarity) noexcept {
  return polarity == Polarity::kHelpful ? "helpful" : "harmful";
}

json strategy_to_json(const StrategyConfig& strategy) {
  json doc;
  doc["kind"] = strategy_key(strategy.kind);
  doc["batch_size"] = strategy.batch_size;
  doc["duplication"] = strategy.duplication;
  doc["subgroup_count"] = strategy.subgroup_count ? json(*strategy.subgroup_count) : json(nullptr);
  doc["seed"] = strategy.seed;
  return doc;
}

StrategyConfig strategy_from_json(const json& doc) {
  StrategyConfig strategy;
  strategy.kind = parse_strategy(doc.value("kind", std::string{"parallel_scan"}));
  strategy.batch_size = doc.value("batch_size", std::size_t{1});
  strategy.duplication = doc.value("duplication", std::size_t{2});
  if (doc.contains("subgroup_count") && !doc.at("subgroup_count").is_null()) {
    strategy.subgroup_count = doc.at("subgroup_count").get<std::size_t>();
  }
  strategy.seed = doc.value("seed", std::uint64_t{0});
  return strategy;
}

json reflection_to_json(const Reflection& reflection) {
  json doc;
  doc["source_task_id"] = reflection.source_task_id;
  doc["origin_index"] = reflection.origin_index;
  doc["items"] = json::array();
  for (const auto& item : reflection.items) {
    json row;
    row["insight_id"] = item.insight_id;
    row["text"] = item.text;
    row["polarity"] = polarity_key(item.polarity);
    doc["items"].push_back(std::move(row));
  }
  return doc;
}

}  // namespace scanlearn
