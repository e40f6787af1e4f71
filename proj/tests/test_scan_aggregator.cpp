#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "scanlearn/errors.hpp"
#include "scanlearn/rng.hpp"
#include "scanlearn/scan_aggregator.hpp"
#include "scanlearn/sim_backend.hpp"
#include "test_util.hpp"

namespace scanlearn {
namespace {

std::vector<Reflection> reflections(std::size_t n) {
  std::vector<Reflection> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].source_task_id = "task-" + std::to_string(i);
    out[i].origin_index = i;
    out[i].items.push_back({"ins-" + std::to_string(i), "lesson " + std::to_string(i), Polarity::kHelpful});
  }
  return out;
}

std::vector<std::size_t> group_sizes(const AggregationPlan& plan) {
  std::vector<std::size_t> sizes;
  for (const auto& g : plan.groups) sizes.push_back(g.size());
  return sizes;
}

TEST(AugmentedShuffle, ThreeReflectionsTwice) {
  const auto batch = augmented_shuffle(reflections(3), 2, 11);
  ASSERT_EQ(batch.items.size(), 6u);
  std::map<std::size_t, std::set<std::size_t>> copies;
  for (const auto& item : batch.items) copies[item.source].insert(item.duplicate_index);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(copies[r], (std::set<std::size_t>{0, 1}));
  }
}

TEST(AugmentedShuffle, SingleReflectionIsIdentity) {
  const auto batch = augmented_shuffle(reflections(1), 1, 5);
  ASSERT_EQ(batch.items.size(), 1u);
  EXPECT_EQ(batch.items[0], (ShuffledItem{0, 0}));
}

TEST(AugmentedShuffle, RepeatableForFixedSeed) {
  const auto input = reflections(17);
  const auto first = augmented_shuffle(input, 3, 99);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(augmented_shuffle(input, 3, 99), first);
  }
  EXPECT_NE(augmented_shuffle(input, 3, 100).items, first.items);
}

TEST(AugmentedShuffleProperty, EveryReflectionExactlyPTimes) {
  Rng rng(2024);
  for (std::size_t p = 1; p <= 4; ++p) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto n = 1 + static_cast<std::size_t>(rng.below(60));
      const auto batch = augmented_shuffle(reflections(n), p, rng.next());
      ASSERT_EQ(batch.items.size(), n * p);
      std::vector<std::size_t> counts(n, 0);
      std::set<std::pair<std::size_t, std::size_t>> distinct;
      for (const auto& item : batch.items) {
        ASSERT_LT(item.source, n);
        ASSERT_LT(item.duplicate_index, p);
        ++counts[item.source];
        distinct.insert({item.source, item.duplicate_index});
      }
      EXPECT_TRUE(std::all_of(counts.begin(), counts.end(), [&](std::size_t c) { return c == p; }))
          << "p=" << p << " n=" << n;
      EXPECT_EQ(distinct.size(), n * p);
    }
  }
}

TEST(BuildPlan, HundredLeavesMakeTenGroupsOfTen) {
  const auto plan = build_plan(100, std::nullopt);
  EXPECT_EQ(plan.subgroup_count, 10u);
  EXPECT_EQ(group_sizes(plan), std::vector<std::size_t>(10, 10));
  EXPECT_EQ(plan.curator_calls(), 11u);
  ASSERT_EQ(plan.levels.size(), 2u);
  EXPECT_EQ(plan.levels[0], (PlanLevel{10, 10}));
  EXPECT_EQ(plan.levels[1], (PlanLevel{1, 10}));
}

TEST(BuildPlan, FortyLeavesBalanced) {
  const auto plan = build_plan(40, std::nullopt);
  EXPECT_EQ(plan.subgroup_count, 6u);
  EXPECT_EQ(group_sizes(plan), (std::vector<std::size_t>{7, 7, 7, 7, 6, 6}));
}

TEST(BuildPlan, SingleLeafSingleCall) {
  const auto plan = build_plan(1, std::nullopt);
  EXPECT_EQ(plan.subgroup_count, 1u);
  EXPECT_EQ(plan.curator_calls(), 1u);
  EXPECT_EQ(plan.levels.size(), 1u);
}

TEST(BuildPlan, RejectsBadK) {
  EXPECT_THROW(build_plan(10, 0), InvalidK);
  EXPECT_THROW(build_plan(10, 11), InvalidK);
  EXPECT_NO_THROW(build_plan(10, 10));
}

TEST(BuildPlan, PlanJsonRoundTrip) {
  const auto plan = build_plan(23, 4, 2);
  EXPECT_EQ(plan_from_json(plan_to_json(plan)), plan);
}

TEST(DefaultSubgroupCount, IntegerSquareRoot) {
  EXPECT_EQ(default_subgroup_count(0), 1u);
  EXPECT_EQ(default_subgroup_count(1), 1u);
  EXPECT_EQ(default_subgroup_count(3), 1u);
  EXPECT_EQ(default_subgroup_count(4), 2u);
  EXPECT_EQ(default_subgroup_count(99), 9u);
  EXPECT_EQ(default_subgroup_count(100), 10u);
  EXPECT_EQ(default_subgroup_count(1'000'000), 1000u);
  EXPECT_EQ(default_subgroup_count(999'999), 999u);
}

TEST(BuildPlanProperty, BalancedDisjointCover) {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = 1 + static_cast<std::size_t>(rng.below(400));
    const std::optional<std::size_t> k =
        trial % 3 == 0 ? std::nullopt : std::optional(1 + static_cast<std::size_t>(rng.below(n)));
    const auto plan = build_plan(n, k);
    const auto expected_k = k.value_or(default_subgroup_count(n));
    ASSERT_EQ(plan.groups.size(), expected_k);
    std::size_t cursor = 0;
    std::size_t lo = n;
    std::size_t hi = 0;
    for (const auto& g : plan.groups) {
      ASSERT_EQ(g.begin, cursor);
      ASSERT_GT(g.size(), 0u);
      cursor = g.end;
      lo = std::min(lo, g.size());
      hi = std::max(hi, g.size());
    }
    EXPECT_EQ(cursor, n);
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(plan.curator_calls(), expected_k == 1 ? 1u : expected_k + 1);
  }
}

TEST(ScanReduce, CallCountLaw) {
  testing::CountingBackend backend;
  const auto input = reflections(50);
  StrategyConfig strategy{StrategyKind::kParallelScan, 50, 2, std::nullopt, 3};
  const auto outcome = aggregate(input, strategy, Playbook{}, backend, {3, 0, 4});
  ASSERT_TRUE(outcome.plan);
  EXPECT_EQ(outcome.plan->leaf_count, 100u);
  EXPECT_EQ(outcome.plan->subgroup_count, 10u);
  EXPECT_EQ(backend.curate_calls.load(), 11u);
  EXPECT_EQ(outcome.curator_calls, 11u);
  EXPECT_EQ(std::count(backend.curate_levels.begin(), backend.curate_levels.end(), 0u), 10);
  EXPECT_EQ(std::count(backend.curate_levels.begin(), backend.curate_levels.end(), 1u), 1);
  EXPECT_EQ(outcome.level_delays.size(), 2u);
}

TEST(ScanReduce, MaximalSplit) {
  testing::CountingBackend backend;
  const auto input = reflections(12);
  StrategyConfig strategy{StrategyKind::kParallelScan, 12, 1, 12, 3};
  const auto outcome = aggregate(input, strategy, Playbook{}, backend, {3, 0, 2});
  EXPECT_EQ(backend.curate_calls.load(), 13u);
  const auto ones = std::count(outcome.call_loads.begin(), outcome.call_loads.end(), 1u);
  EXPECT_EQ(ones, 12);
}

TEST(Aggregate, NaiveIsOneOverloadedCall) {
  testing::CountingBackend backend;
  const auto input = reflections(100);
  StrategyConfig strategy{StrategyKind::kNaiveBatch, 100, 2, std::nullopt, 3};
  const auto outcome = aggregate(input, strategy, Playbook{}, backend, {3, 0, 1});
  EXPECT_FALSE(outcome.plan);
  EXPECT_EQ(backend.curate_calls.load(), 1u);
  EXPECT_EQ(backend.curate_loads, std::vector<std::size_t>{100});
}

TEST(Aggregate, SingleGroupScanEqualsNaive) {
  const SimBackend backend;
  auto naive_backend = backend;
  auto scan_backend = backend;
  std::vector<Reflection> input;
  for (std::size_t i = 0; i < 30; ++i) {
    Reflection r;
    r.source_task_id = "task-" + std::to_string(i);
    r.origin_index = i;
    r.items.push_back({"ins-" + std::to_string(i), SimBackend::insight_text("ins-" + std::to_string(i)),
                       Polarity::kHelpful});
    r.items.push_back({"generic-00" + std::to_string(i % 7), SimBackend::insight_text("generic-00"),
                       Polarity::kHelpful});
    input.push_back(r);
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto naive = aggregate(input, {StrategyKind::kNaiveBatch, 30, 1, std::nullopt, seed}, Playbook{},
                                 naive_backend, {seed, 4, 1});
    const auto scan = aggregate(input, {StrategyKind::kParallelScan, 30, 1, 1, seed}, Playbook{}, scan_backend,
                                {seed, 4, 8});
    EXPECT_EQ(delta_to_json(scan.delta).dump(), delta_to_json(naive.delta).dump()) << "seed " << seed;
    EXPECT_EQ(scan.curator_calls, 1u);
  }
}

TEST(Aggregate, WorkerCountDoesNotChangeResult) {
  SimBackend backend;
  std::vector<Reflection> input;
  for (std::size_t i = 0; i < 64; ++i) {
    Reflection r;
    r.source_task_id = "task-" + std::to_string(i);
    r.origin_index = i;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto id = "ins-" + std::to_string((i * 3 + j) % 150);
      r.items.push_back({id, SimBackend::insight_text(id), Polarity::kHelpful});
    }
    input.push_back(r);
  }
  const StrategyConfig strategy{StrategyKind::kParallelScan, 64, 2, std::nullopt, 5};
  const auto one = aggregate(input, strategy, Playbook{}, backend, {5, 2, 1});
  const auto eight = aggregate(input, strategy, Playbook{}, backend, {5, 2, 8});
  EXPECT_EQ(one.delta, eight.delta);
  EXPECT_EQ(one.level_delays, eight.level_delays);
}

class FailingBackend : public testing::CountingBackend {
 public:
  Timed<ContextDelta> curate(std::span<const Reflection> inputs, const Playbook& playbook,
                             const CallContext& ctx) override {
    if (ctx.level == 0 && ctx.index == 2) {
      throw TransportError("connection reset");
    }
    return CountingBackend::curate(inputs, playbook, ctx);
  }
};

TEST(ScanReduce, FailureCarriesLevelAndGroup) {
  FailingBackend backend;
  const auto input = reflections(20);
  try {
    aggregate(input, {StrategyKind::kParallelScan, 20, 2, std::nullopt, 1}, Playbook{}, backend, {1, 0, 4});
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    ASSERT_TRUE(e.locus().level);
    EXPECT_EQ(*e.locus().level, 0u);
    ASSERT_TRUE(e.locus().group_index);
    EXPECT_EQ(*e.locus().group_index, 2u);
  }
}

TEST(ScanReduce, RetainsMoreInsightsThanNaiveAtForty) {
  SimBackend backend;
  std::size_t wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<Reflection> input;
    for (std::size_t i = 0; i < 40; ++i) {
      Reflection r;
      r.source_task_id = "task-" + std::to_string(i);
      r.origin_index = i;
      for (std::size_t j = 0; j < 3; ++j) {
        const auto id = "ins-" + std::to_string(rng.below(300));
        r.items.push_back({id, SimBackend::insight_text(id), Polarity::kHelpful});
      }
      const auto generic = "generic-" + std::to_string(rng.below(20));
      r.items.push_back({generic, SimBackend::insight_text(generic), Polarity::kHelpful});
      input.push_back(r);
    }
    auto distinct = [](const ContextDelta& delta) {
      std::set<std::string> ids;
      for (const auto& op : delta.ops) {
        if (const auto* add = std::get_if<AddOp>(&op)) {
          for (const auto& id : add->entry.insight_ids) {
            if (!is_generic_insight(id)) ids.insert(id);
          }
        }
      }
      return ids.size();
    };
    const auto naive = aggregate(input, {StrategyKind::kNaiveBatch, 40, 2, std::nullopt, seed}, Playbook{},
                                 backend, {seed, 0, 1});
    const auto scan = aggregate(input, {StrategyKind::kParallelScan, 40, 2, std::nullopt, seed}, Playbook{},
                                backend, {seed, 0, 4});
    ASSERT_TRUE(scan.plan);
    EXPECT_EQ(scan.plan->leaf_count, 80u);
    EXPECT_EQ(scan.plan->subgroup_count, 8u);
    wins += distinct(scan.delta) > distinct(naive.delta);
  }
  EXPECT_EQ(wins, 10u);
}

}  // namespace
}  // namespace scanlearn
