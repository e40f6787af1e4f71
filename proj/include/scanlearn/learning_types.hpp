#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace scanlearn {

enum class Outcome { kSuccess, kFailure };

struct Trajectory {
  std::string task_id;
  std::vector<std::string> steps;
  Outcome outcome = Outcome::kFailure;
  double latency_s = 0.0;

  bool operator==(const Trajectory&) const = default;
};

struct TaskSample {
  std::string task_id;
  std::string payload;
  // Simulation only; empty for live tasks.
  std::set<std::string> required_insights;
  // Set when training from recorded traces; the map phase then skips execution.
  std::optional<Trajectory> offline_trajectory;
  // Unrecognized fields from an ingested trace line, kept verbatim.
  nlohmann::ordered_json extras = nlohmann::ordered_json::object();

  bool operator==(const TaskSample&) const = default;
};

enum class Polarity { kHelpful, kHarmful };

struct ReflectionItem {
  std::string insight_id;
  std::string text;
  Polarity polarity = Polarity::kHelpful;

  bool operator==(const ReflectionItem&) const = default;
};

struct Reflection {
  std::string source_task_id;
  std::vector<ReflectionItem> items;
  std::size_t origin_index = 0;

  bool operator==(const Reflection&) const = default;
};

enum class StrategyKind { kSequential, kNaiveBatch, kParallelScan };

std::string_view strategy_key(StrategyKind kind) noexcept;
/// Throws InvalidConfig for unknown names.
StrategyKind parse_strategy(std::string_view key);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::kParallelScan;
  std::size_t batch_size = 1;
  std::size_t duplication = 2;
  // Defaults to floor(sqrt(n)) over the duplicated item count.
  std::optional<std::size_t> subgroup_count;
  std::uint64_t seed = 0;

  bool operator==(const StrategyConfig&) const = default;
};

/// Throws InvalidConfig when the strategy cannot run on a corpus of
/// `corpus_size` samples.
void validate(const StrategyConfig& strategy, std::size_t corpus_size);

std::string_view outcome_key(Outcome outcome) noexcept;
std::string_view polarity_key(Polarity polarity) noexcept;

nlohmann::ordered_json strategy_to_json(const StrategyConfig& strategy);
StrategyConfig strategy_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json reflection_to_json(const Reflection& reflection);

}  // namespace scanlearn
