#include "qscore/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "qscore/csv.hpp"
#include "qscore/error.hpp"
#include "qscore/rng.hpp"
#include "qscore/utf8.hpp"

namespace qscore {

namespace {

constexpr std::string_view kTargetPrefix = "question_";

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_real(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

struct ColumnMap {
  std::optional<std::size_t> qa_id, title, body, category, host;
  std::array<std::optional<std::size_t>, kNumTargets> targets{};
};

ColumnMap map_header(const csv::Row& header) {
  ColumnMap m;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = ascii_lower(trim(header[i]));
    if (name == "qa_id") m.qa_id = i;
    else if (name == "question_title") m.title = i;
    else if (name == "question_body") m.body = i;
    else if (name == "category") m.category = i;
    else if (name == "host") m.host = i;
    else if (name.starts_with(kTargetPrefix)) {
      if (auto t = target_index(name)) m.targets[*t] = i;
    }
  }
  return m;
}

// Per-row failure, either thrown (strict) or recorded (lenient).
struct RowFailure {
  ErrorCode code;
  std::string reason;
  std::string detail;
};

}  // namespace

std::optional<std::size_t> target_index(std::string_view name) {
  if (name.starts_with(kTargetPrefix)) name.remove_prefix(kTargetPrefix.size());
  for (std::size_t i = 0; i < kTargetNames.size(); ++i) {
    if (kTargetNames[i] == name) return i;
  }
  return std::nullopt;
}

std::optional<Category> parse_category(std::string_view text) {
  std::string s = ascii_lower(trim(text));
  std::replace(s.begin(), s.end(), ' ', '_');
  if (s == "technology") return Category::kTechnology;
  if (s == "stackoverflow") return Category::kStackoverflow;
  if (s == "culture") return Category::kCulture;
  if (s == "science") return Category::kScience;
  if (s == "life_arts" || s == "lifearts") return Category::kLifeArts;
  return std::nullopt;
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::kTechnology: return "technology";
    case Category::kStackoverflow: return "stackoverflow";
    case Category::kCulture: return "culture";
    case Category::kScience: return "science";
    case Category::kLifeArts: return "life_arts";
  }
  return "technology";
}

std::uint64_t Corpus::fingerprint() const {
  Fnv1a h;
  for (const auto& ex : rows) {
    h.update_str(ex.record.qa_id);
    h.update_str(ex.record.title);
    h.update_str(ex.record.body);
    h.update_str(to_string(ex.record.category));
    h.update_str(ex.record.host);
    h.update(ex.targets.values.data(), sizeof(double) * kNumTargets);
  }
  return h.digest();
}

std::vector<double> Corpus::target_column(std::size_t t) const {
  std::vector<double> col;
  col.reserve(rows.size());
  for (const auto& ex : rows) col.push_back(ex.targets[t]);
  return col;
}

nlohmann::json ValidationReport::to_json() const {
  return nlohmann::json{{"loaded", loaded}, {"skipped", skipped}, {"reasons", reasons}, {"flags", flags}};
}

Corpus parse_corpus(std::string_view csv_text, std::string source, ColumnPolicy policy,
                    ValidationReport* report_out, std::ostream* log) {
  ValidationReport report;
  csv::Reader reader(csv_text);
  const auto header = reader.next();
  if (!header) throw Error(ErrorCode::kMalformedRow, source + ": missing header row");
  const ColumnMap cols = map_header(*header);

  // Title and body are always required; the rest only fail eagerly in strict mode.
  auto require = [&](const std::optional<std::size_t>& c, std::string_view name, bool always) {
    if (!c && (always || policy == ColumnPolicy::kStrict)) {
      throw Error(ErrorCode::kMissingColumn, std::string(name));
    }
  };
  require(cols.title, "question_title", true);
  require(cols.body, "question_body", true);
  require(cols.category, "category", false);
  require(cols.host, "host", false);
  for (std::size_t t = 0; t < kNumTargets; ++t) {
    require(cols.targets[t], std::string(kTargetPrefix) + std::string(kTargetNames[t]), false);
  }

  Corpus corpus;
  corpus.source = std::move(source);
  std::unordered_set<std::string> seen_ids;
  std::size_t row_index = 0;

  auto emit = [&](const std::string& line) {
    report.messages.push_back(line);
    if (log) *log << line << '\n';
  };

  while (true) {
    std::optional<csv::Row> fields;
    try {
      fields = reader.next();
    } catch (const Error& e) {
      // The reader cannot resynchronise after a broken quote; treat as fatal.
      throw Error(ErrorCode::kMalformedRow, "row " + std::to_string(row_index + 1) + ": " + e.what());
    }
    if (!fields) break;
    ++row_index;
    // A trailing blank line is not a record.
    if (fields->size() == 1 && (*fields)[0].empty()) continue;

    Example ex;
    std::optional<RowFailure> failure;
    const std::string where = "row " + std::to_string(row_index);

    if (fields->size() != header->size()) {
      failure = RowFailure{ErrorCode::kMalformedRow, "field_count",
                           where + ": expected " + std::to_string(header->size()) + " fields, got " +
                               std::to_string(fields->size())};
    }

    if (!failure) {
      const auto& f = *fields;
      ex.record.qa_id = cols.qa_id ? trim(f[*cols.qa_id]) : std::to_string(row_index);
      ex.record.title = f[*cols.title];
      ex.record.body = f[*cols.body];
      if (cols.host) ex.record.host = trim(f[*cols.host]);

      if (!cols.host) {
        failure = RowFailure{ErrorCode::kMissingColumn, "missing_host", where + ": no host column"};
      } else if (!cols.category) {
        failure = RowFailure{ErrorCode::kMissingColumn, "missing_category", where + ": no category column"};
      } else if (auto c = parse_category(f[*cols.category])) {
        ex.record.category = *c;
      } else {
        failure = RowFailure{ErrorCode::kMalformedRow, "bad_category",
                             where + ": unknown category '" + f[*cols.category] + "'"};
      }

      for (std::size_t t = 0; t < kNumTargets && !failure; ++t) {
        const std::string col_name = std::string(kTargetPrefix) + std::string(kTargetNames[t]);
        if (!cols.targets[t]) {
          failure = RowFailure{ErrorCode::kMissingColumn, "missing_target", where + ": no column " + col_name};
          break;
        }
        const auto v = parse_real(f[*cols.targets[t]]);
        if (!v) {
          failure = RowFailure{ErrorCode::kMalformedRow, "bad_target_value",
                               where + ", column " + col_name + ": not a number '" + f[*cols.targets[t]] + "'"};
        } else if (*v < 0.0 || *v > 1.0) {
          std::ostringstream os;
          os << where << ", column " << col_name << ": value " << *v << " outside [0,1]";
          failure = RowFailure{ErrorCode::kTargetOutOfRange, "target_out_of_range", os.str()};
        } else {
          ex.targets[t] = *v;
        }
      }

      if (!failure && seen_ids.contains(ex.record.qa_id)) {
        failure = RowFailure{ErrorCode::kMalformedRow, "duplicate_qa_id",
                             where + ": duplicate qa_id '" + ex.record.qa_id + "'"};
      }
    }

    if (failure) {
      if (policy == ColumnPolicy::kStrict) throw Error(failure->code, failure->detail);
      ++report.skipped;
      ++report.reasons[failure->reason];
      emit("skipped " + failure->detail);
      continue;
    }

    if (ex.record.title.empty()) {
      ++report.flags["empty_title"];
      emit("warning " + where + ": empty title");
    }
    if (ex.record.body.empty()) {
      ++report.flags["empty_body"];
      emit("warning " + where + ": empty body");
    }
    seen_ids.insert(ex.record.qa_id);
    corpus.rows.push_back(std::move(ex));
    ++report.loaded;
  }

  if (report_out) *report_out = report;
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, corpus.source + ": no valid rows");
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, ColumnPolicy policy, ValidationReport* report,
                   std::ostream* log) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), path.string(), policy, report, log);
}

// ---------------------------------------------------------------------------

std::string normalize_body(std::string_view body) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : utf8::decode(body)) {
    if (utf8::is_whitespace(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    utf8::append(out, utf8::to_lower(cp));
  }
  return out;
}

std::uint64_t body_hash(std::string_view body) {
  Fnv1a h;
  const std::string norm = normalize_body(body);
  h.update(norm.data(), norm.size());
  return h.digest();
}

std::string group_key_of(const QuestionRecord& record, GroupKey key) {
  if (key == GroupKey::kQaId) return record.qa_id;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(body_hash(record.body)));
  return buf;
}

std::vector<Fold> holdout_split(std::size_t n_rows, double fraction, std::uint64_t seed) {
  if (n_rows == 0) throw Error(ErrorCode::kEmptyCorpus, "cannot split an empty corpus");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "holdout_fraction must lie in (0,1)");
  }
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_rows)));
  Fold fold;
  fold.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  fold.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(fold.validation.begin(), fold.validation.end());
  std::sort(fold.train.begin(), fold.train.end());
  return {std::move(fold)};
}

std::vector<Fold> group_kfold(const std::vector<std::string>& groups, std::size_t n_folds, std::uint64_t seed) {
  if (groups.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot split an empty corpus");
  if (n_folds < 2) throw Error(ErrorCode::kInvalidConfig, "n_folds must be at least 2");

  // Group ids in order of first appearance.
  std::unordered_map<std::string, std::size_t> id_of;
  std::vector<std::size_t> row_group(groups.size());
  std::vector<std::size_t> group_size;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, inserted] = id_of.try_emplace(groups[i], group_size.size());
    if (inserted) group_size.push_back(0);
    row_group[i] = it->second;
    ++group_size[it->second];
  }
  const std::size_t n_groups = group_size.size();
  if (n_groups < n_folds) {
    throw Error(ErrorCode::kTooFewGroups,
                std::to_string(n_groups) + " distinct groups for " + std::to_string(n_folds) + " folds");
  }

  std::vector<std::size_t> order(n_groups);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return group_size[a] > group_size[b]; });

  std::vector<std::size_t> fold_rows(n_folds, 0);
  std::vector<std::size_t> group_fold(n_groups);
  for (std::size_t g : order) {
    const auto smallest = static_cast<std::size_t>(
        std::min_element(fold_rows.begin(), fold_rows.end()) - fold_rows.begin());
    group_fold[g] = smallest;
    fold_rows[smallest] += group_size[g];
  }

  std::vector<Fold> folds(n_folds);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const std::size_t f = group_fold[row_group[i]];
    for (std::size_t k = 0; k < n_folds; ++k) {
      (k == f ? folds[k].validation : folds[k].train).push_back(i);
    }
  }
  return folds;
}

std::vector<Fold> make_split(const Corpus& corpus, const SplitPlan& plan) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "cannot split an empty corpus");
  if (plan.kind == SplitKind::kHoldout) {
    return holdout_split(corpus.size(), plan.holdout_fraction, plan.seed);
  }
  std::vector<std::string> groups;
  groups.reserve(corpus.size());
  for (const auto& ex : corpus.rows) groups.push_back(group_key_of(ex.record, plan.group_key));
  return group_kfold(groups, plan.n_folds, plan.seed);
}

std::string_view to_string(SplitKind k) { return k == SplitKind::kHoldout ? "holdout" : "group_kfold"; }
std::string_view to_string(GroupKey k) { return k == GroupKey::kBodyHash ? "body_hash" : "qa_id"; }

SplitKind parse_split_kind(std::string_view s) {
  if (s == "holdout") return SplitKind::kHoldout;
  if (s == "group_kfold") return SplitKind::kGroupKFold;
  throw Error(ErrorCode::kInvalidConfig, "unknown split kind '" + std::string(s) + "'");
}

GroupKey parse_group_key(std::string_view s) {
  if (s == "body_hash") return GroupKey::kBodyHash;
  if (s == "qa_id") return GroupKey::kQaId;
  throw Error(ErrorCode::kInvalidConfig, "unknown group key '" + std::string(s) + "'");
}

nlohmann::json to_json(const SplitPlan& plan) {
  nlohmann::json j{{"kind", to_string(plan.kind)}, {"seed", plan.seed}};
  if (plan.kind == SplitKind::kHoldout) {
    j["holdout_fraction"] = plan.holdout_fraction;
  } else {
    j["n_folds"] = plan.n_folds;
    j["group_key"] = to_string(plan.group_key);
  }
  return j;
}

SplitPlan split_plan_from_json(const nlohmann::json& j, SplitPlan p) {
  if (j.contains("kind")) p.kind = parse_split_kind(j.at("kind").get<std::string>());
  if (j.contains("holdout_fraction")) p.holdout_fraction = j.at("holdout_fraction").get<double>();
  if (j.contains("n_folds")) p.n_folds = j.at("n_folds").get<std::size_t>();
  if (j.contains("group_key")) p.group_key = parse_group_key(j.at("group_key").get<std::string>());
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace qscore
