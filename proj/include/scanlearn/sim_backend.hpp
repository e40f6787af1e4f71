#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "scanlearn/backend.hpp"

namespace scanlearn {

/// Capacity-limited lossy curator. A call over inputs from m distinct
/// sources keeps round(D / (1 + crowding * m * (m - 1))) of the D distinct
/// insights offered (at least one, at most base_capacity when m == 1), and
/// picks which ones by weighted sampling in which every generic insight
/// outweighs a specific one by bias / (1 - bias). With D = base_capacity * m
/// this is exactly capacity(m).
struct OverloadModel {
  std::size_t base_capacity = 4;
  double crowding = 0.0012;
  double specificity_bias = 0.85;

  /// max(1, round(C0 * m / (1 + crowding * (m - 1) * m))).
  std::size_t capacity(std::size_t m) const;
  /// Number of the `distinct` offered insights a call over m sources keeps.
  std::size_t retained(std::size_t m, std::size_t distinct) const;
};

/// Simulated seconds charged per call.
struct DelayModel {
  double rollout_latency = 2.0;
  // Rollout latency is scaled by a factor drawn uniformly from [1 - j, 1 + j].
  double rollout_jitter = 0.25;
  double reflect_latency = 1.0;
  double curate_base = 1.0;
  double curate_per_item = 0.05;

  double curate(std::size_t input_items) const noexcept {
    return curate_base + curate_per_item * static_cast<double>(input_items);
  }
};

struct SimConfig {
  OverloadModel overload;
  DelayModel delay;
  // Number of distinct generic reminders reflections draw from.
  std::size_t generic_pool_size = 20;
  // Share of a task's required insights the playbook must cover for success.
  double coverage_fraction = 1.0;
};

/// Throws InvalidConfig on out-of-range parameters.
void validate(const SimConfig& config);

inline constexpr std::string_view kGenericPrefix = "generic-";

bool is_generic_insight(std::string_view insight_id) noexcept;

/// Deterministic backend: every result is a pure function of the call's
/// arguments and CallContext.
class SimBackend : public LearnerBackend {
 public:
  explicit SimBackend(SimConfig config = {});

  const SimConfig& config() const noexcept { return config_; }

  Timed<Trajectory> execute(const TaskSample& task, const Playbook& playbook,
                            const CallContext& ctx) override;
  Timed<Reflection> reflect(const TaskSample& task, const Trajectory& trajectory,
                            const Playbook& playbook, const CallContext& ctx) override;
  Timed<ContextDelta> curate(std::span<const Reflection> inputs, const Playbook& playbook,
                             const CallContext& ctx) override;
  bool provides_insight_tags() const noexcept override { return true; }

  static Section section_for(std::string_view insight_id) noexcept;
  static std::string insight_text(std::string_view insight_id);

 private:
  SimConfig config_;
};

}  // namespace scanlearn
