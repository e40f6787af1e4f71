#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace scanlearn {

// Playbook headings, in export order.
enum class Section { kStrategies, kFormulas, kMistakes, kContextClues, kOthers };

inline constexpr Section kAllSections[] = {Section::kStrategies, Section::kFormulas,
                                           Section::kMistakes, Section::kContextClues,
                                           Section::kOthers};

std::string_view section_key(Section section) noexcept;
std::string_view section_heading(Section section) noexcept;
std::string_view section_id_prefix(Section section) noexcept;
/// Unknown keys map to Section::kOthers.
Section parse_section(std::string_view key) noexcept;

struct PlaybookEntry {
  std::string id;
  Section section = Section::kOthers;
  std::string text;
  // Opaque simulation tags; empty under the live backend.
  std::set<std::string> insight_ids;
  std::uint64_t helpful = 0;
  std::uint64_t harmful = 0;
  std::uint64_t created_iter = 0;

  bool operator==(const PlaybookEntry&) const = default;
};

struct ContextDelta;

/// Immutable-by-convention snapshot of the learnable context. The only way
/// to produce a successor is apply_delta().
class Playbook {
 public:
  Playbook() = default;

  const std::vector<PlaybookEntry>& entries() const noexcept { return entries_; }
  std::uint64_t version() const noexcept { return version_; }
  std::uint64_t token_size() const noexcept { return token_size_; }
  /// Next free numeric suffix for generated ids ("calc-00042").
  std::uint64_t next_serial() const noexcept { return next_serial_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  const PlaybookEntry* find(std::string_view id) const noexcept;
  /// First entry tagged with the insight, if any.
  const PlaybookEntry* find_by_insight(std::string_view insight_id) const noexcept;
  bool covers(std::string_view insight_id) const noexcept { return find_by_insight(insight_id) != nullptr; }

  /// Distinct insight tags carried by all entries.
  std::set<std::string> insight_set() const;

  /// Builds an id "<prefix>-<serial>" for the given section, zero padded to five digits.
  static std::string make_id(Section section, std::uint64_t serial);

  bool operator==(const Playbook&) const = default;

 private:
  friend Playbook apply_delta(const Playbook& playbook, const ContextDelta& delta);
  friend Playbook playbook_from_json(const nlohmann::ordered_json& doc);

  // Rebuilds the lookup maps and token_size_ from entries_.
  void reindex();

  std::vector<PlaybookEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> id_index_;
  std::map<std::string, std::size_t, std::less<>> insight_index_;
  std::uint64_t version_ = 0;
  std::uint64_t token_size_ = 0;
  std::uint64_t next_serial_ = 1;
};

struct AddOp {
  PlaybookEntry entry;
  bool operator==(const AddOp&) const = default;
};
struct AmendTextOp {
  std::string id;
  std::string text;
  bool operator==(const AmendTextOp&) const = default;
};
struct IncrementHelpfulOp {
  std::string id;
  bool operator==(const IncrementHelpfulOp&) const = default;
};
struct IncrementHarmfulOp {
  std::string id;
  bool operator==(const IncrementHarmfulOp&) const = default;
};
struct RemoveOp {
  std::string id;
  bool operator==(const RemoveOp&) const = default;
};

using DeltaOp = std::variant<AddOp, AmendTextOp, IncrementHelpfulOp, IncrementHarmfulOp, RemoveOp>;

struct ContextDelta {
  std::vector<DeltaOp> ops;
  bool operator==(const ContextDelta&) const = default;
};

struct DeltaOpCounts {
  std::size_t add = 0;
  std::size_t amend_text = 0;
  std::size_t increment_helpful = 0;
  std::size_t increment_harmful = 0;
  std::size_t remove = 0;
  bool operator==(const DeltaOpCounts&) const = default;
};

DeltaOpCounts count_ops(const ContextDelta& delta) noexcept;

/// ceil(code points / 4).
std::uint64_t estimate_tokens(std::string_view text) noexcept;

/// Applies the ops in order to a copy of `playbook` and bumps the version by
/// one. Throws UnknownEntryId, DuplicateEntryId or InvalidEntry; the input is
/// never modified.
Playbook apply_delta(const Playbook& playbook, const ContextDelta& delta);

/// Folds a sequence of deltas starting from the empty playbook.
Playbook replay(std::span<const ContextDelta> deltas);

/// Fraction of `required` covered by the playbook; 1.0 for an empty set.
double coverage_fraction(const Playbook& playbook, const std::set<std::string>& required);

// Serialization. JSON output is canonical: the same playbook always dumps to
// the same bytes.
nlohmann::ordered_json entry_to_json(const PlaybookEntry& entry);
PlaybookEntry entry_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json playbook_to_json(const Playbook& playbook);
Playbook playbook_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json delta_to_json(const ContextDelta& delta);
ContextDelta delta_from_json(const nlohmann::ordered_json& doc);

std::string serialize_playbook(const Playbook& playbook);
Playbook deserialize_playbook(std::string_view text);

/// Sectioned Markdown: one heading per non-empty section, one
/// "- [id] h=.. r=.. text" line per entry.
std::string export_markdown(const Playbook& playbook);

}  // namespace scanlearn
