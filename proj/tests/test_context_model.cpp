#include <gtest/gtest.h>

#include "scanlearn/context_model.hpp"
#include "scanlearn/errors.hpp"
#include "test_util.hpp"

namespace scanlearn {
namespace {

using testing::entry;
using testing::playbook_with;

TEST(ApplyDelta, AddToEmptyPlaybook) {
  const auto pb = apply_delta(Playbook{}, {{AddOp{entry("sai-00001", "check units")}}});
  ASSERT_EQ(pb.size(), 1u);
  EXPECT_EQ(pb.entries()[0].id, "sai-00001");
  EXPECT_EQ(pb.version(), 1u);
  EXPECT_EQ(pb.next_serial(), 2u);
}

TEST(ApplyDelta, IncrementHelpfulAndHarmful) {
  const auto base = playbook_with({entry("sai-00001", "check units")});
  const auto pb = apply_delta(base, {{IncrementHelpfulOp{"sai-00001"}, IncrementHelpfulOp{"sai-00001"},
                                      IncrementHarmfulOp{"sai-00001"}}});
  EXPECT_EQ(pb.entries()[0].helpful, 2u);
  EXPECT_EQ(pb.entries()[0].harmful, 1u);
  EXPECT_EQ(base.entries()[0].helpful, 0u);
}

TEST(ApplyDelta, AmendChangesTextAndTokens) {
  const auto base = playbook_with({entry("sai-00001", "abcd")});
  const auto pb = apply_delta(base, {{AmendTextOp{"sai-00001", "abcdefghijkl"}}});
  EXPECT_EQ(pb.entries()[0].text, "abcdefghijkl");
  EXPECT_EQ(pb.token_size(), base.token_size() + 2);
}

TEST(ApplyDelta, CollapseFrom264To21) {
  std::vector<PlaybookEntry> entries;
  for (std::uint64_t i = 1; i <= 264; ++i) {
    entries.push_back(entry(Playbook::make_id(Section::kFormulas, i), "formula number " + std::to_string(i)));
  }
  const auto big = playbook_with(entries);
  ContextDelta removal;
  for (std::uint64_t i = 22; i <= 264; ++i) {
    removal.ops.emplace_back(RemoveOp{Playbook::make_id(Section::kFormulas, i)});
  }
  const auto small = apply_delta(big, removal);
  EXPECT_EQ(small.size(), 21u);
  EXPECT_LT(small.token_size(), big.token_size());
  std::uint64_t expected = 0;
  for (const auto& e : small.entries()) {
    expected += estimate_tokens(e.text);
  }
  EXPECT_EQ(small.token_size(), expected);
}

TEST(ApplyDelta, DanglingReferenceThrows) {
  const auto base = playbook_with({entry("sai-00001", "x")});
  EXPECT_THROW(apply_delta(base, {{IncrementHelpfulOp{"sai-00002"}}}), UnknownEntryId);
  EXPECT_THROW(apply_delta(base, {{RemoveOp{"nope"}}}), UnknownEntryId);
  EXPECT_THROW(apply_delta(base, {{AmendTextOp{"nope", "t"}}}), UnknownEntryId);
}

TEST(ApplyDelta, CollidingAddThrows) {
  const auto base = playbook_with({entry("sai-00001", "x")});
  EXPECT_THROW(apply_delta(base, {{AddOp{entry("sai-00001", "y")}}}), DuplicateEntryId);
}

TEST(ApplyDelta, FailedDeltaLeavesInputUntouched) {
  const auto base = playbook_with({entry("sai-00001", "x")});
  const auto before = serialize_playbook(base);
  EXPECT_THROW(apply_delta(base, {{IncrementHelpfulOp{"sai-00001"}, RemoveOp{"missing"}}}), UnknownEntryId);
  EXPECT_EQ(serialize_playbook(base), before);
}

TEST(ApplyDelta, EmptyDeltaStillBumpsVersion) {
  const auto base = playbook_with({entry("sai-00001", "x")});
  const auto next = apply_delta(base, {});
  EXPECT_EQ(next.version(), base.version() + 1);
  EXPECT_EQ(next.entries(), base.entries());
}

TEST(ApplyDelta, InsightIndexFollowsRemoval) {
  const auto base = playbook_with({entry("sai-00001", "x", {"ins-001"}), entry("sai-00002", "y", {"ins-002"})});
  EXPECT_TRUE(base.covers("ins-001"));
  const auto next = apply_delta(base, {{RemoveOp{"sai-00001"}}});
  EXPECT_FALSE(next.covers("ins-001"));
  EXPECT_TRUE(next.covers("ins-002"));
  EXPECT_EQ(next.find("sai-00002")->text, "y");
}

TEST(EstimateTokens, Examples) {
  EXPECT_EQ(estimate_tokens(""), 0u);
  EXPECT_EQ(estimate_tokens("abcd"), 1u);
  EXPECT_EQ(estimate_tokens("abcde"), 2u);
  EXPECT_EQ(estimate_tokens(std::string(8000, 'x')), 2000u);
  EXPECT_EQ(estimate_tokens(std::string(8001, 'x')), 2001u);
}

TEST(EstimateTokens, CountsCodePointsNotBytes) {
  // four two-byte code points
  EXPECT_EQ(estimate_tokens("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9"), 1u);
}

TEST(Sections, IdsAndKeys) {
  EXPECT_EQ(Playbook::make_id(Section::kFormulas, 1), "calc-00001");
  EXPECT_EQ(Playbook::make_id(Section::kStrategies, 42), "sai-00042");
  EXPECT_EQ(Playbook::make_id(Section::kMistakes, 7), "err-00007");
  EXPECT_EQ(Playbook::make_id(Section::kContextClues, 7), "ctx-00007");
  EXPECT_EQ(Playbook::make_id(Section::kOthers, 7), "misc-00007");
  for (const auto section : kAllSections) {
    EXPECT_EQ(parse_section(section_key(section)), section);
    EXPECT_EQ(parse_section(section_heading(section)), section);
  }
  EXPECT_EQ(parse_section("whatever"), Section::kOthers);
}

TEST(Serialization, RoundTripIsExact) {
  auto pb = playbook_with({entry("calc-00003", "area = w * h", {"ins-001"}, Section::kFormulas),
                           entry("err-00004", "do not \"guess\"\nunits", {}, Section::kMistakes)});
  pb = apply_delta(pb, {{IncrementHelpfulOp{"calc-00003"}, IncrementHarmfulOp{"err-00004"}}});
  const auto text = serialize_playbook(pb);
  const auto back = deserialize_playbook(text);
  EXPECT_EQ(back, pb);
  EXPECT_EQ(serialize_playbook(back), text);
  EXPECT_EQ(back.next_serial(), 5u);
}

TEST(Serialization, RejectsTamperedTokenSize) {
  const auto pb = playbook_with({entry("sai-00001", "some text")});
  auto doc = playbook_to_json(pb);
  doc["token_size"] = 999;
  EXPECT_THROW(playbook_from_json(doc), InvalidEntry);
}

TEST(Serialization, DeltaRoundTrip) {
  const ContextDelta delta{{AddOp{entry("sai-00001", "x", {"a", "b"})}, AmendTextOp{"sai-00001", "y"},
                            IncrementHelpfulOp{"sai-00001"}, IncrementHarmfulOp{"sai-00001"},
                            RemoveOp{"sai-00001"}}};
  EXPECT_EQ(delta_from_json(delta_to_json(delta)), delta);
  const auto counts = count_ops(delta);
  EXPECT_EQ(counts.add, 1u);
  EXPECT_EQ(counts.amend_text, 1u);
  EXPECT_EQ(counts.increment_helpful, 1u);
  EXPECT_EQ(counts.increment_harmful, 1u);
  EXPECT_EQ(counts.remove, 1u);
}

TEST(Replay, ReproducesSequentialApplication) {
  std::vector<ContextDelta> deltas{
      {{AddOp{entry("sai-00001", "a", {"i1"})}}},
      {{AddOp{entry("calc-00002", "b", {"i2"}, Section::kFormulas)}, IncrementHelpfulOp{"sai-00001"}}},
      {{RemoveOp{"sai-00001"}}},
  };
  Playbook pb;
  for (const auto& d : deltas) pb = apply_delta(pb, d);
  EXPECT_EQ(replay(deltas), pb);
  EXPECT_EQ(pb.version(), 3u);
}

TEST(Markdown, GroupsBySectionWithCounters) {
  auto pb = playbook_with({entry("calc-00001", "area = w * h", {}, Section::kFormulas),
                           entry("sai-00002", "plan first", {}, Section::kStrategies)});
  pb = apply_delta(pb, {{IncrementHelpfulOp{"calc-00001"}}});
  const auto md = export_markdown(pb);
  EXPECT_NE(md.find("## STRATEGIES & INSIGHTS"), std::string::npos);
  EXPECT_NE(md.find("## FORMULAS & CALCULATIONS"), std::string::npos);
  EXPECT_NE(md.find("[calc-00001] h=1 r=0 area = w * h"), std::string::npos);
  EXPECT_EQ(md.find("## COMMON MISTAKES"), std::string::npos);
  EXPECT_LT(md.find("STRATEGIES"), md.find("FORMULAS"));
}

TEST(Coverage, FractionOfRequiredInsights) {
  const auto pb = playbook_with({entry("sai-00001", "x", {"a"})});
  EXPECT_DOUBLE_EQ(coverage_fraction(pb, {"a", "b"}), 0.5);
  EXPECT_DOUBLE_EQ(coverage_fraction(pb, {"a"}), 1.0);
  EXPECT_DOUBLE_EQ(coverage_fraction(pb, {}), 1.0);
}

}  // namespace
}  // namespace scanlearn
