#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qscore/corpus.hpp"

namespace qscore {

struct SentimentScore {
  double polarity = 0.0;      // [-1, 1]
  double subjectivity = 0.0;  // [0, 1]
  std::size_t matched_terms = 0;
};

struct LexiconEntry {
  double polarity = 0.0;
  double subjectivity = 0.0;
};

struct SentimentLexicon {
  std::unordered_map<std::string, LexiconEntry> entries;
  std::string source;
};

/// Parses `word<TAB>polarity<TAB>subjectivity` lines. Blank lines and lines
/// starting with '#' are ignored. A repeated word overrides the earlier entry
/// and adds a line to `warnings`.
SentimentLexicon parse_lexicon(std::string_view text, std::string source,
                               std::vector<std::string>* warnings = nullptr);
SentimentLexicon load_lexicon(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// Bag-of-words average over lexicon hits, using the textfeat word rule.
SentimentScore score_text(std::string_view text, const SentimentLexicon& lexicon);

struct SentimentRow {
  std::string qa_id;
  SentimentScore score;
};

struct SentimentReport {
  std::vector<SentimentRow> rows;
  double mean_polarity = 0.0;
  double mean_subjectivity = 0.0;

  /// `qa_id,polarity,subjectivity` with a header line.
  std::string to_csv() const;
};

SentimentReport sentiment_report(const Corpus& corpus, const SentimentLexicon& lexicon);

}  // namespace qscore
