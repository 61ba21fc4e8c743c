#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qscore {

inline constexpr std::size_t kNumTargets = 20;

/// The 20 question-quality targets, in canonical order. Source files name
/// them with a "question_" prefix.
inline constexpr std::array<std::string_view, kNumTargets> kTargetNames = {
    "asker_intent_understanding",
    "conversational",
    "expect_short_answer",
    "fact_seeking",
    "has_commonly_accepted_answer",
    "interestingness_others",
    "interestingness_self",
    "multi_intent",
    "not_really_a_question",
    "opinion_seeking",
    "type_choice",
    "type_compare",
    "type_consequence",
    "type_definition",
    "type_entity",
    "type_instructions",
    "type_procedure",
    "type_reason_explanation",
    "type_spelling",
    "well_written",
};

/// Index of a target name (with or without the "question_" prefix).
std::optional<std::size_t> target_index(std::string_view name);

enum class Category { kTechnology, kStackoverflow, kCulture, kScience, kLifeArts };

std::optional<Category> parse_category(std::string_view text);
std::string_view to_string(Category c);

struct QuestionRecord {
  std::string qa_id;
  std::string title;
  std::string body;
  Category category = Category::kTechnology;
  std::string host;
};

struct TargetVector {
  std::array<double, kNumTargets> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const TargetVector&) const = default;
};

struct Example {
  QuestionRecord record;
  TargetVector targets;
};

struct Corpus {
  std::vector<Example> rows;
  std::string source;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }

  /// Stable content hash over every loaded field.
  std::uint64_t fingerprint() const;
  /// Column `t` of the target matrix.
  std::vector<double> target_column(std::size_t t) const;
};

enum class ColumnPolicy { kStrict, kLenient };

struct ValidationReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> reasons;  // skip reasons
  std::map<std::string, std::size_t> flags;    // kept rows with warnings
  std::vector<std::string> messages;

  nlohmann::json to_json() const;
};

/// Parse a corpus from CSV text. Answer-related columns and
/// question_body_critical are ignored. In strict mode any bad row throws; in
/// lenient mode bad rows are skipped and recorded in `report`. Diagnostic
/// lines go to `log` when it is non-null.
Corpus parse_corpus(std::string_view csv_text, std::string source, ColumnPolicy policy,
                    ValidationReport* report = nullptr, std::ostream* log = nullptr);

Corpus load_corpus(const std::filesystem::path& path, ColumnPolicy policy,
                   ValidationReport* report = nullptr, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Splits

enum class SplitKind { kHoldout, kGroupKFold };
enum class GroupKey { kBodyHash, kQaId };

struct SplitPlan {
  SplitKind kind = SplitKind::kHoldout;
  double holdout_fraction = 0.2;
  std::size_t n_folds = 5;
  GroupKey group_key = GroupKey::kBodyHash;
  std::uint64_t seed = 42;
};

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Whitespace-collapsed, trimmed, lowercased body text.
std::string normalize_body(std::string_view body);
std::uint64_t body_hash(std::string_view body);
std::string group_key_of(const QuestionRecord& record, GroupKey key);

/// Holdout returns one fold with round(fraction * N) validation rows, drawn by
/// a seeded shuffle. GroupKFold returns n_folds folds; groups are visited in
/// descending size (seeded order among equal sizes) and each goes to the
/// fold with the fewest rows so far.
std::vector<Fold> make_split(const Corpus& corpus, const SplitPlan& plan);

/// Group k-fold over precomputed group labels, one per row.
std::vector<Fold> group_kfold(const std::vector<std::string>& groups, std::size_t n_folds,
                              std::uint64_t seed);
std::vector<Fold> holdout_split(std::size_t n_rows, double fraction, std::uint64_t seed);

std::string_view to_string(SplitKind k);
std::string_view to_string(GroupKey k);
SplitKind parse_split_kind(std::string_view s);
GroupKey parse_group_key(std::string_view s);

nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j, SplitPlan defaults = {});

}  // namespace qscore
