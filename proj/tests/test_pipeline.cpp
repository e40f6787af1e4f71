#include <gtest/gtest.h>

#include "scanlearn/errors.hpp"
#include "scanlearn/pipeline.hpp"
#include "scanlearn/sim_backend.hpp"
#include "test_util.hpp"

namespace scanlearn {
namespace {

using testing::entry;
using testing::playbook_with;
using testing::task;

std::vector<TaskSample> corpus(std::size_t n, std::size_t pool = 60) {
  std::vector<TaskSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(task("task-" + std::to_string(i), {"ins-" + std::to_string((7 * i) % pool),
                                                     "ins-" + std::to_string((7 * i + 3) % pool)}));
  }
  return out;
}

std::string dump_records(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& r : records) out += record_to_json(r).dump() + "\n";
  return out;
}

TEST(PartitionBatches, KeepsRemainder) {
  const auto tasks = corpus(90);
  const auto batches = partition_batches(tasks, 40);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 40u);
  EXPECT_EQ(batches[1].size(), 40u);
  EXPECT_EQ(batches[2].size(), 10u);
  EXPECT_EQ(batches[2].front().task_id, "task-80");
}

TEST(RunEpoch, NinetyTasksAtForty) {
  SimBackend backend;
  const auto tasks = corpus(90);
  const auto result = run_epoch(tasks, Playbook{}, {StrategyKind::kParallelScan, 40, 2, std::nullopt, 1}, backend,
                                {4, 0, tasks, {}});
  ASSERT_EQ(result.records.size(), 3u);
  EXPECT_EQ(result.records[0].batch_task_ids.size(), 40u);
  EXPECT_EQ(result.records[2].batch_task_ids.size(), 10u);
  EXPECT_EQ(result.records[2].iteration, 2u);
  EXPECT_EQ(result.playbook.version(), 3u);
  ASSERT_TRUE(result.records[0].plan);
  EXPECT_EQ(result.records[0].plan->subgroup_count, 8u);
  EXPECT_EQ(result.records[0].curator_calls, 9u);
  EXPECT_GT(result.epoch_time(), 0.0);
}

TEST(RunEpoch, SequentialSingleTaskMatchesNaive) {
  SimBackend backend;
  const auto tasks = corpus(1);
  const auto seq = run_epoch(tasks, Playbook{}, {StrategyKind::kSequential, 1, 2, std::nullopt, 4}, backend);
  const auto naive = run_epoch(tasks, Playbook{}, {StrategyKind::kNaiveBatch, 1, 2, std::nullopt, 4}, backend);
  ASSERT_EQ(seq.records.size(), 1u);
  EXPECT_EQ(serialize_playbook(seq.playbook), serialize_playbook(naive.playbook));
  EXPECT_EQ(seq.records[0].delta, naive.records[0].delta);
  EXPECT_EQ(seq.records[0].delays, naive.records[0].delays);
}

TEST(RunEpoch, SequentialNeedsBatchOfOne) {
  SimBackend backend;
  const auto tasks = corpus(10);
  EXPECT_THROW(run_epoch(tasks, Playbook{}, {StrategyKind::kSequential, 2, 2, std::nullopt, 4}, backend),
               InvalidConfig);
  EXPECT_THROW(run_epoch(tasks, Playbook{}, {StrategyKind::kNaiveBatch, 11, 2, std::nullopt, 4}, backend),
               InvalidConfig);
  EXPECT_THROW(run_epoch(tasks, Playbook{}, {StrategyKind::kParallelScan, 5, 0, std::nullopt, 4}, backend),
               InvalidConfig);
}

TEST(RunEpoch, EmptyCorpusRejected) {
  SimBackend backend;
  EXPECT_THROW(run_epoch({}, Playbook{}, {}, backend), EmptyCorpus);
}

TEST(RunEpoch, RepeatableByteForByte) {
  SimBackend backend;
  const auto tasks = corpus(50);
  const StrategyConfig strategy{StrategyKind::kParallelScan, 10, 2, std::nullopt, 42};
  const auto a = run_epoch(tasks, Playbook{}, strategy, backend, {1, 0, tasks, {}});
  const auto b = run_epoch(tasks, Playbook{}, strategy, backend, {8, 0, tasks, {}});
  EXPECT_EQ(serialize_playbook(a.playbook), serialize_playbook(b.playbook));
  EXPECT_EQ(dump_records(a.records), dump_records(b.records));
}

TEST(RunEpoch, RecordsReplayToFinalPlaybook) {
  SimBackend backend;
  const auto tasks = corpus(40);
  const auto result =
      run_epoch(tasks, Playbook{}, {StrategyKind::kNaiveBatch, 3, 2, std::nullopt, 8}, backend, {2, 0, tasks, {}});
  std::vector<ContextDelta> deltas;
  for (const auto& r : result.records) deltas.push_back(r.delta);
  EXPECT_EQ(replay(deltas), result.playbook);
}

class FlakyBackend : public SimBackend {
 public:
  Timed<Reflection> reflect(const TaskSample& t, const Trajectory& traj, const Playbook& pb,
                            const CallContext& ctx) override {
    if (t.task_id == "task-7") throw TransportError("socket closed");
    return SimBackend::reflect(t, traj, pb, ctx);
  }
};

TEST(RunEpoch, FailureCarriesIterationAndTask) {
  FlakyBackend backend;
  const auto tasks = corpus(10);
  try {
    run_epoch(tasks, Playbook{}, {StrategyKind::kNaiveBatch, 3, 2, std::nullopt, 1}, backend, {4, 0, {}, {}});
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    ASSERT_TRUE(e.locus().iteration);
    EXPECT_EQ(*e.locus().iteration, 2u);
    ASSERT_TRUE(e.locus().task_id);
    EXPECT_EQ(*e.locus().task_id, "task-7");
  }
}

TEST(MapPhase, OrderedByBatchPosition) {
  SimBackend backend;
  const auto tasks = corpus(5);
  const auto mapped = map_phase(tasks, Playbook{}, backend, 3, 0, 4);
  ASSERT_EQ(mapped.reflections.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(mapped.reflections[i].source_task_id, tasks[i].task_id);
    EXPECT_EQ(mapped.reflections[i].origin_index, i);
  }
  EXPECT_EQ(mapped.execute_calls, 5u);
}

TEST(MapPhase, OfflineTrajectoriesSkipExecution) {
  testing::CountingBackend backend;
  auto tasks = corpus(6);
  for (auto& t : tasks) t.offline_trajectory = Trajectory{t.task_id, {"recorded"}, Outcome::kSuccess, 0.0};
  const auto mapped = map_phase(tasks, Playbook{}, backend, 3, 0, 3);
  EXPECT_EQ(backend.execute_calls.load(), 0u);
  EXPECT_EQ(backend.reflect_calls.load(), 6u);
  EXPECT_EQ(mapped.execute_calls, 0u);
}

TEST(MapPhase, WorkerCountInvariant) {
  SimBackend backend;
  const auto tasks = corpus(33);
  const auto pb = playbook_with({entry("sai-00001", "x", {"ins-3"})});
  const auto one = map_phase(tasks, pb, backend, 9, 2, 1);
  const auto eight = map_phase(tasks, pb, backend, 9, 2, 8);
  EXPECT_EQ(one.reflections, eight.reflections);
  EXPECT_EQ(one.delay_s, eight.delay_s);
}

TEST(MapPhase, DelayIsSlowestSample) {
  testing::CountingBackend backend;
  backend.execute_delay = 2.0;
  backend.reflect_delay = 0.5;
  const auto mapped = map_phase(corpus(4), Playbook{}, backend, 1, 0, 2);
  EXPECT_DOUBLE_EQ(mapped.delay_s, 2.5);
}

TEST(ScorePlaybook, FullCoverage) {
  const auto tasks = std::vector{task("t1", {"a", "b"}), task("t2", {"b"})};
  const auto pb = playbook_with({entry("sai-00001", "x", {"a"}), entry("sai-00002", "y", {"b"})});
  const auto score = score_playbook(pb, tasks);
  EXPECT_DOUBLE_EQ(score.metrics.accuracy_proxy, 1.0);
  EXPECT_EQ(score.metrics.total_helpful_hits, 3u);
  EXPECT_EQ(score.metrics.retained_entries, 2u);
  EXPECT_EQ(score.metrics.specific_insights, 2u);
  EXPECT_EQ(pb.entries()[0].helpful, 0u);
}

TEST(ScorePlaybook, EmptyPlaybook) {
  const auto score = score_playbook(Playbook{}, std::vector{task("t1", {"a"})});
  EXPECT_DOUBLE_EQ(score.metrics.accuracy_proxy, 0.0);
  EXPECT_EQ(score.metrics.total_helpful_hits, 0u);
}

TEST(ScorePlaybook, PartialCoverageEarnsNoHits) {
  const auto pb = playbook_with({entry("sai-00001", "x", {"a"})});
  const auto score = score_playbook(pb, std::vector{task("t1", {"a", "b"})});
  EXPECT_DOUBLE_EQ(score.metrics.accuracy_proxy, 0.0);
  EXPECT_TRUE(score.marks.ops.empty());
  const auto lenient = score_playbook(pb, std::vector{task("t1", {"a", "b"})}, {0.5});
  EXPECT_DOUBLE_EQ(lenient.metrics.accuracy_proxy, 1.0);
  EXPECT_EQ(lenient.marks.ops.size(), 1u);
}

TEST(ScorePlaybook, BruteForceAgreement) {
  const auto tasks = corpus(30, 20);
  std::vector<PlaybookEntry> entries;
  for (std::size_t i = 0; i < 20; i += 3) {
    entries.push_back(entry(Playbook::make_id(Section::kOthers, i + 1), "e", {"ins-" + std::to_string(i)}));
  }
  const auto pb = playbook_with(entries);
  std::size_t solved = 0;
  for (const auto& t : tasks) {
    bool all = true;
    for (const auto& need : t.required_insights) {
      bool found = false;
      for (const auto& e : pb.entries()) found = found || e.insight_ids.count(need) > 0;
      all = all && found;
    }
    solved += all;
  }
  EXPECT_DOUBLE_EQ(score_playbook(pb, tasks).metrics.accuracy_proxy, static_cast<double>(solved) / 30.0);
}

TEST(ScorePlaybook, UntaggedTasksRejected) {
  EXPECT_THROW(score_playbook(Playbook{}, std::vector{task("t1", {})}), MissingInsightTags);
}

TEST(RunRecord, JsonRoundTrip) {
  SimBackend backend;
  const auto tasks = corpus(12);
  const auto result = run_epoch(tasks, Playbook{}, {StrategyKind::kParallelScan, 6, 2, std::nullopt, 3}, backend,
                                {1, 0, tasks, {}});
  for (const auto& record : result.records) {
    EXPECT_EQ(record_from_json(record_to_json(record)), record);
  }
}

}  // namespace
}  // namespace scanlearn
