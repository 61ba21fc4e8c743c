#include "qscore/sentiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qscore/csv.hpp"
#include "qscore/error.hpp"
#include "qscore/textfeat.hpp"
#include "qscore/utf8.hpp"

namespace qscore {

namespace {

double parse_field(std::string_view s, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

SentimentLexicon parse_lexicon(std::string_view text, std::string source, std::vector<std::string>* warnings) {
  SentimentLexicon lex;
  lex.source = std::move(source);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    const std::string word = utf8::to_lower(line.substr(0, t1));
    if (word.empty()) throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": empty word");
    const double pol = parse_field(line.substr(t1 + 1, t2 - t1 - 1), line_no);
    const double subj = parse_field(line.substr(t2 + 1), line_no);
    if (pol < -1.0 || pol > 1.0 || subj < 0.0 || subj > 1.0) {
      throw Error(ErrorCode::kValueOutOfBounds,
                  "line " + std::to_string(line_no) + ": '" + word + "' outside [-1,1]x[0,1]");
    }
    auto [it, inserted] = lex.entries.insert_or_assign(word, LexiconEntry{pol, subj});
    if (!inserted && warnings) {
      warnings->push_back("line " + std::to_string(line_no) + ": duplicate entry '" + word + "' overrides earlier one");
    }
  }
  return lex;
}

SentimentLexicon load_lexicon(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_lexicon(buf.str(), path.string(), warnings);
}

SentimentScore score_text(std::string_view text, const SentimentLexicon& lexicon) {
  SentimentScore s;
  double pol = 0.0;
  double subj = 0.0;
  for (const auto& w : words_of(text)) {
    const auto it = lexicon.entries.find(w);
    if (it == lexicon.entries.end()) continue;
    pol += it->second.polarity;
    subj += it->second.subjectivity;
    ++s.matched_terms;
  }
  if (s.matched_terms > 0) {
    const auto n = static_cast<double>(s.matched_terms);
    s.polarity = std::clamp(pol / n, -1.0, 1.0);
    s.subjectivity = std::clamp(subj / n, 0.0, 1.0);
  }
  return s;
}

SentimentReport sentiment_report(const Corpus& corpus, const SentimentLexicon& lexicon) {
  SentimentReport r;
  r.rows.reserve(corpus.size());
  for (const auto& ex : corpus.rows) {
    r.rows.push_back({ex.record.qa_id, score_text(ex.record.body, lexicon)});
    r.mean_polarity += r.rows.back().score.polarity;
    r.mean_subjectivity += r.rows.back().score.subjectivity;
  }
  if (!r.rows.empty()) {
    r.mean_polarity /= static_cast<double>(r.rows.size());
    r.mean_subjectivity /= static_cast<double>(r.rows.size());
  }
  return r;
}

std::string SentimentReport::to_csv() const {
  std::string out = "qa_id,polarity,subjectivity\n";
  for (const auto& row : rows) {
    out += csv::escape(row.qa_id) + "," + format_real(row.score.polarity) + "," +
           format_real(row.score.subjectivity) + "\n";
  }
  return out;
}

}  // namespace qscore
