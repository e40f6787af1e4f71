#include "scanlearn/context_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "scanlearn/errors.hpp"

namespace scanlearn {

using json = nlohmann::ordered_json;

namespace {

struct SectionInfo {
  Section section;
  std::string_view key;
  std::string_view heading;
  std::string_view prefix;
};

constexpr SectionInfo kSectionTable[] = {
    {Section::kStrategies, "strategies", "STRATEGIES & INSIGHTS", "sai"},
    {Section::kFormulas, "formulas", "FORMULAS & CALCULATIONS", "calc"},
    {Section::kMistakes, "mistakes", "COMMON MISTAKES TO AVOID", "err"},
    {Section::kContextClues, "context_clues", "CONTEXT CLUES & INDICATORS", "ctx"},
    {Section::kOthers, "others", "OTHERS", "misc"},
};

const SectionInfo& info(Section section) noexcept {
  return kSectionTable[static_cast<std::size_t>(section)];
}

// "calc-00042" -> 42; anything else -> nullopt.
std::optional<std::uint64_t> serial_of(std::string_view id) noexcept {
  const auto dash = id.rfind('-');
  if (dash == std::string_view::npos || dash + 1 >= id.size()) {
    return std::nullopt;
  }
  std::uint64_t value = 0;
  const char* first = id.data() + dash + 1;
  const char* last = id.data() + id.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    return std::nullopt;
  }
  return value;
}

void check_text(const std::string& id, const std::string& text) {
  if (text.empty()) {
    throw InvalidEntry("entry " + id + " has empty text");
  }
}

}  // namespace

std::string_view section_key(Section section) noexcept { return info(section).key; }
std::string_view section_heading(Section section) noexcept { return info(section).heading; }
std::string_view section_id_prefix(Section section) noexcept { return info(section).prefix; }

Section parse_section(std::string_view key) noexcept {
  for (const auto& row : kSectionTable) {
    if (row.key == key || row.heading == key || row.prefix == key) {
      return row.section;
    }
  }
  return Section::kOthers;
}

const PlaybookEntry* Playbook::find(std::string_view id) const noexcept {
  const auto it = id_index_.find(id);
  return it == id_index_.end() ? nullptr : &entries_[it->second];
}

const PlaybookEntry* Playbook::find_by_insight(std::string_view insight_id) const noexcept {
  const auto it = insight_index_.find(insight_id);
  return it == insight_index_.end() ? nullptr : &entries_[it->second];
}

std::set<std::string> Playbook::insight_set() const {
  std::set<std::string> out;
  for (const auto& [insight, _] : insight_index_) {
    out.insert(insight);
  }
  return out;
}

std::string Playbook::make_id(Section section, std::uint64_t serial) {
  char digits[32];
  std::snprintf(digits, sizeof digits, "%05llu", static_cast<unsigned long long>(serial));
  return std::string(section_id_prefix(section)) + "-" + digits;
}

void Playbook::reindex() {
  id_index_.clear();
  insight_index_.clear();
  token_size_ = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& entry = entries_[i];
    id_index_.emplace(entry.id, i);
    for (const auto& insight : entry.insight_ids) {
      insight_index_.emplace(insight, i);  // first entry wins
    }
    token_size_ += estimate_tokens(entry.text);
  }
}

DeltaOpCounts count_ops(const ContextDelta& delta) noexcept {
  DeltaOpCounts counts;
  for (const auto& op : delta.ops) {
    std::visit(
        [&counts](const auto& o) {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, AddOp>) {
            ++counts.add;
          } else if constexpr (std::is_same_v<T, AmendTextOp>) {
            ++counts.amend_text;
          } else if constexpr (std::is_same_v<T, IncrementHelpfulOp>) {
            ++counts.increment_helpful;
          } else if constexpr (std::is_same_v<T, IncrementHarmfulOp>) {
            ++counts.increment_harmful;
          } else {
            ++counts.remove;
          }
        },
        op);
  }
  return counts;
}

std::uint64_t estimate_tokens(std::string_view text) noexcept {
  std::uint64_t code_points = 0;
  for (const char c : text) {
    if ((static_cast<unsigned char>(c) & 0xC0U) != 0x80U) {
      ++code_points;
    }
  }
  return (code_points + 3) / 4;
}

Playbook apply_delta(const Playbook& playbook, const ContextDelta& delta) {
  Playbook next = playbook;
  auto& entries = next.entries_;
  std::map<std::string, std::size_t, std::less<>> index = playbook.id_index_;

  const auto locate = [&](const std::string& id) -> PlaybookEntry& {
    const auto it = index.find(id);
    if (it == index.end()) {
      throw UnknownEntryId(id);
    }
    return entries[it->second];
  };

  for (const auto& op : delta.ops) {
    if (const auto* add = std::get_if<AddOp>(&op)) {
      const auto& entry = add->entry;
      if (entry.id.empty()) {
        throw InvalidEntry("entry id must not be empty");
      }
      if (index.contains(entry.id)) {
        throw DuplicateEntryId(entry.id);
      }
      check_text(entry.id, entry.text);
      index.emplace(entry.id, entries.size());
      entries.push_back(entry);
      if (const auto serial = serial_of(entry.id); serial && *serial >= next.next_serial_) {
        next.next_serial_ = *serial + 1;
      }
    } else if (const auto* amend = std::get_if<AmendTextOp>(&op)) {
      check_text(amend->id, amend->text);
      locate(amend->id).text = amend->text;
    } else if (const auto* helpful = std::get_if<IncrementHelpfulOp>(&op)) {
      ++locate(helpful->id).helpful;
    } else if (const auto* harmful = std::get_if<IncrementHarmfulOp>(&op)) {
      ++locate(harmful->id).harmful;
    } else {
      const auto& id = std::get<RemoveOp>(op).id;
      const auto it = index.find(id);
      if (it == index.end()) {
        throw UnknownEntryId(id);
      }
      entries.erase(entries.begin() + static_cast<std::ptrdiff_t>(it->second));
      index.clear();
      for (std::size_t i = 0; i < entries.size(); ++i) {
        index.emplace(entries[i].id, i);
      }
    }
  }

  ++next.version_;
  next.reindex();
  return next;
}

Playbook replay(std::span<const ContextDelta> deltas) {
  Playbook playbook;
  for (const auto& delta : deltas) {
    playbook = apply_delta(playbook, delta);
  }
  return playbook;
}

double coverage_fraction(const Playbook& playbook, const std::set<std::string>& required) {
  if (required.empty()) {
    return 1.0;
  }
  std::size_t covered = 0;
  for (const auto& insight : required) {
    if (playbook.covers(insight)) {
      ++covered;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(required.size());
}

json entry_to_json(const PlaybookEntry& entry) {
  json doc;
  doc["id"] = entry.id;
  doc["section"] = section_key(entry.section);
  doc["text"] = entry.text;
  doc["insight_ids"] = json::array();
  for (const auto& insight : entry.insight_ids) {
    doc["insight_ids"].push_back(insight);
  }
  doc["helpful"] = entry.helpful;
  doc["harmful"] = entry.harmful;
  doc["created_iter"] = entry.created_iter;
  return doc;
}

PlaybookEntry entry_from_json(const json& doc) {
  PlaybookEntry entry;
  entry.id = doc.at("id").get<std::string>();
  entry.section = parse_section(doc.value("section", std::string{"others"}));
  entry.text = doc.at("text").get<std::string>();
  if (doc.contains("insight_ids")) {
    for (const auto& insight : doc.at("insight_ids")) {
      entry.insight_ids.insert(insight.get<std::string>());
    }
  }
  entry.helpful = doc.value("helpful", std::uint64_t{0});
  entry.harmful = doc.value("harmful", std::uint64_t{0});
  entry.created_iter = doc.value("created_iter", std::uint64_t{0});
  return entry;
}

json playbook_to_json(const Playbook& playbook) {
  json doc;
  doc["version"] = playbook.version();
  doc["next_serial"] = playbook.next_serial();
  doc["token_size"] = playbook.token_size();
  doc["entries"] = json::array();
  for (const auto& entry : playbook.entries()) {
    doc["entries"].push_back(entry_to_json(entry));
  }
  return doc;
}

Playbook playbook_from_json(const json& doc) {
  Playbook playbook;
  for (const auto& item : doc.at("entries")) {
    auto entry = entry_from_json(item);
    check_text(entry.id, entry.text);
    if (playbook.id_index_.contains(entry.id)) {
      throw DuplicateEntryId(entry.id);
    }
    playbook.id_index_.emplace(entry.id, playbook.entries_.size());
    playbook.entries_.push_back(std::move(entry));
  }
  playbook.version_ = doc.value("version", std::uint64_t{0});
  playbook.next_serial_ = doc.value("next_serial", std::uint64_t{1});
  playbook.reindex();
  if (doc.contains("token_size") && doc.at("token_size").get<std::uint64_t>() != playbook.token_size_) {
    throw InvalidEntry("stored token_size does not match entry texts");
  }
  return playbook;
}

json delta_to_json(const ContextDelta& delta) {
  json ops = json::array();
  for (const auto& op : delta.ops) {
    json row;
    if (const auto* add = std::get_if<AddOp>(&op)) {
      row["op"] = "add";
      row["entry"] = entry_to_json(add->entry);
    } else if (const auto* amend = std::get_if<AmendTextOp>(&op)) {
      row["op"] = "amend_text";
      row["id"] = amend->id;
      row["text"] = amend->text;
    } else if (const auto* helpful = std::get_if<IncrementHelpfulOp>(&op)) {
      row["op"] = "increment_helpful";
      row["id"] = helpful->id;
    } else if (const auto* harmful = std::get_if<IncrementHarmfulOp>(&op)) {
      row["op"] = "increment_harmful";
      row["id"] = harmful->id;
    } else {
      row["op"] = "remove";
      row["id"] = std::get<RemoveOp>(op).id;
    }
    ops.push_back(std::move(row));
  }
  json doc;
  doc["ops"] = std::move(ops);
  return doc;
}

ContextDelta delta_from_json(const json& doc) {
  ContextDelta delta;
  for (const auto& row : doc.at("ops")) {
    const auto kind = row.at("op").get<std::string>();
    if (kind == "add") {
      delta.ops.emplace_back(AddOp{entry_from_json(row.at("entry"))});
    } else if (kind == "amend_text") {
      delta.ops.emplace_back(AmendTextOp{row.at("id").get<std::string>(), row.at("text").get<std::string>()});
    } else if (kind == "increment_helpful") {
      delta.ops.emplace_back(IncrementHelpfulOp{row.at("id").get<std::string>()});
    } else if (kind == "increment_harmful") {
      delta.ops.emplace_back(IncrementHarmfulOp{row.at("id").get<std::string>()});
    } else if (kind == "remove") {
      delta.ops.emplace_back(RemoveOp{row.at("id").get<std::string>()});
    } else {
      throw InvalidEntry("unknown delta op: " + kind);
    }
  }
  return delta;
}

std::string serialize_playbook(const Playbook& playbook) {
  return playbook_to_json(playbook).dump(2) + "\n";
}

Playbook deserialize_playbook(std::string_view text) {
  return playbook_from_json(json::parse(text));
}

std::string export_markdown(const Playbook& playbook) {
  std::ostringstream out;
  out << "# Playbook\n\n";
  out << "Total context entries: " << playbook.size() << " | Tokens: " << playbook.token_size()
      << " | Version: " << playbook.version() << "\n";
  for (const auto section : kAllSections) {
    bool heading_written = false;
    for (const auto& entry : playbook.entries()) {
      if (entry.section != section) {
        continue;
      }
      if (!heading_written) {
        out << "\n## " << section_heading(section) << "\n\n";
        heading_written = true;
      }
      out << "- [" << entry.id << "] h=" << entry.helpful << " r=" << entry.harmful << " "
          << entry.text << "\n";
    }
  }
  return out.str();
}

}  // namespace scanlearn
