#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scanlearn/backend.hpp"

namespace scanlearn::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("scanlearn_test_" + name + "_" +
                                                             std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline TaskSample task(std::string id, std::set<std::string> insights) {
  TaskSample t;
  t.task_id = std::move(id);
  t.payload = "payload for " + t.task_id;
  t.required_insights = std::move(insights);
  return t;
}

inline PlaybookEntry entry(std::string id, std::string text, std::set<std::string> insights = {},
                           Section section = Section::kStrategies) {
  PlaybookEntry e;
  e.id = std::move(id);
  e.section = section;
  e.text = std::move(text);
  e.insight_ids = std::move(insights);
  return e;
}

inline Playbook playbook_with(std::vector<PlaybookEntry> entries) {
  ContextDelta delta;
  for (auto& e : entries) {
    delta.ops.emplace_back(AddOp{std::move(e)});
  }
  return apply_delta(Playbook{}, delta);
}

// Deterministic backend with programmable costs; counts curate calls and
// their input sizes. Each curate adds one entry per distinct input source.
class CountingBackend : public LearnerBackend {
 public:
  double execute_delay = 0.0;
  double reflect_delay = 0.0;
  std::function<double(std::size_t)> curate_delay = [](std::size_t) { return 1.0; };

  Timed<Trajectory> execute(const TaskSample& t, const Playbook&, const CallContext&) override {
    ++execute_calls;
    return {{t.task_id, {"step"}, Outcome::kFailure, execute_delay}, execute_delay};
  }
  Timed<Reflection> reflect(const TaskSample& t, const Trajectory&, const Playbook&,
                            const CallContext&) override {
    ++reflect_calls;
    Reflection r;
    r.source_task_id = t.task_id;
    r.items.push_back({"ins-" + t.task_id, "lesson from " + t.task_id, Polarity::kHelpful});
    return {r, reflect_delay};
  }
  Timed<ContextDelta> curate(std::span<const Reflection> inputs, const Playbook& playbook,
                             const CallContext& ctx) override {
    {
      std::lock_guard lock(mutex);
      curate_loads.push_back(inputs.size());
      curate_levels.push_back(ctx.level);
    }
    ++curate_calls;
    ContextDelta delta;
    std::set<std::string> seen;
    auto serial = playbook.next_serial();
    for (const auto& r : inputs) {
      for (const auto& item : r.items) {
        if (item.insight_id.empty() || !seen.insert(item.insight_id).second || playbook.covers(item.insight_id)) {
          continue;
        }
        PlaybookEntry e;
        e.id = Playbook::make_id(Section::kOthers, serial++);
        e.text = item.text;
        e.insight_ids = {item.insight_id};
        delta.ops.emplace_back(AddOp{std::move(e)});
      }
    }
    return {delta, curate_delay(inputs.size())};
  }
  bool provides_insight_tags() const noexcept override { return true; }

  std::atomic<std::size_t> execute_calls{0};
  std::atomic<std::size_t> reflect_calls{0};
  std::atomic<std::size_t> curate_calls{0};
  std::mutex mutex;
  std::vector<std::size_t> curate_loads;
  std::vector<std::uint64_t> curate_levels;
};

}  // namespace scanlearn::testing
