#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "scanlearn/context_model.hpp"
#include "scanlearn/learning_types.hpp"

namespace scanlearn {

enum class Role : std::uint64_t {
  kExecute = 1,
  kReflect = 2,
  kCurate = 3,
  kShuffle = 4,
};

/// Identifies one backend call inside a run. Every random draw a backend
/// makes is seeded from this, never from shared state, so calls may run in
/// any order on any thread.
struct CallContext {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  Role role = Role::kExecute;
  std::uint64_t level = 0;
  std::uint64_t index = 0;

  std::uint64_t stream_seed() const noexcept;
};

template <typename T>
struct Timed {
  T value;
  double delay_s = 0.0;
};

/// Exec / Reflect / Update provider. Implementations must tolerate
/// concurrent calls.
class LearnerBackend {
 public:
  virtual ~LearnerBackend() = default;

  virtual Timed<Trajectory> execute(const TaskSample& task, const Playbook& playbook,
                                    const CallContext& ctx) = 0;

  virtual Timed<Reflection> reflect(const TaskSample& task, const Trajectory& trajectory,
                                    const Playbook& playbook, const CallContext& ctx) = 0;

  /// Folds reflection-like inputs into exactly one delta against `playbook`.
  /// Inputs may repeat (augmented shuffling); repeats share source_task_id
  /// and origin_index.
  virtual Timed<ContextDelta> curate(std::span<const Reflection> inputs, const Playbook& playbook,
                                     const CallContext& ctx) = 0;

  /// True when reflections carry insight tags that score_playbook can use.
  virtual bool provides_insight_tags() const noexcept = 0;
};

/// Renders a partial delta as one reflection-like item so that the merge
/// level can reuse curate(). Added/reinforced entries become helpful items;
/// harmful marks and removals become harmful items.
Reflection render_partial(const ContextDelta& partial, const Playbook& playbook, std::size_t group_index);

}  // namespace scanlearn
