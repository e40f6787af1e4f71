#include "scanlearn/backend.hpp"

#include <string>

#include "scanlearn/rng.hpp"

namespace scanlearn {

std::uint64_t CallContext::stream_seed() const noexcept {
  return derive_seed(seed, {iteration, static_cast<std::uint64_t>(role), level, index});
}

namespace {

void push_entry_items(Reflection& out, const PlaybookEntry& entry, const std::string& text,
                      Polarity polarity) {
  if (entry.insight_ids.empty()) {
    out.items.push_back({"", text, polarity});
    return;
  }
  for (const auto& insight : entry.insight_ids) {
    out.items.push_back({insight, text, polarity});
  }
}

}  // namespace

Reflection render_partial(const ContextDelta& partial, const Playbook& playbook, std::size_t group_index) {
  Reflection out;
  out.source_task_id = "partial-" + std::to_string(group_index);
  out.origin_index = group_index;
  for (const auto& op : partial.ops) {
    if (const auto* add = std::get_if<AddOp>(&op)) {
      push_entry_items(out, add->entry, add->entry.text, Polarity::kHelpful);
      continue;
    }
    std::string id;
    std::string text;
    Polarity polarity = Polarity::kHelpful;
    if (const auto* amend = std::get_if<AmendTextOp>(&op)) {
      id = amend->id;
      text = "[" + id + "] amend: " + amend->text;
    } else if (const auto* helpful = std::get_if<IncrementHelpfulOp>(&op)) {
      id = helpful->id;
      polarity = Polarity::kHelpful;
    } else if (const auto* harmful = std::get_if<IncrementHarmfulOp>(&op)) {
      id = harmful->id;
      polarity = Polarity::kHarmful;
    } else {
      id = std::get<RemoveOp>(op).id;
      text = "[" + id + "] remove";
      polarity = Polarity::kHarmful;
    }
    const auto* entry = playbook.find(id);
    if (text.empty()) {
      text = "[" + id + "] " + (entry ? entry->text : std::string{});
    }
    if (entry) {
      push_entry_items(out, *entry, text, polarity);
    } else {
      out.items.push_back({"", text, polarity});
    }
  }
  return out;
}

}  // namespace scanlearn
