#include "qscore/textfeat.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "qscore/error.hpp"
#include "qscore/utf8.hpp"

namespace qscore {

std::array<double, FeatureVector::kCount> FeatureVector::as_array() const {
  return {static_cast<double>(char_count_title),   static_cast<double>(char_count_body),
          static_cast<double>(word_count_title),   static_cast<double>(word_count_body),
          static_cast<double>(punct_count_body),   static_cast<double>(dup_words_body),
          dup_rate_body,                           static_cast<double>(sentence_count_body)};
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::vector<char32_t> token;
  auto flush = [&] {
    std::size_t b = 0;
    std::size_t e = token.size();
    while (b < e && utf8::is_ascii_punct(token[b])) ++b;
    while (e > b && utf8::is_ascii_punct(token[e - 1])) --e;
    if (b < e) {
      std::string w;
      for (std::size_t i = b; i < e; ++i) utf8::append(w, utf8::to_lower(token[i]));
      words.push_back(std::move(w));
    }
    token.clear();
  };
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_whitespace(cp)) {
      flush();
    } else {
      token.push_back(cp);
    }
  }
  flush();
  return words;
}

FeatureVector extract_features(const QuestionRecord& record) {
  FeatureVector f;
  const auto body_cps = utf8::decode(record.body);
  f.char_count_title = utf8::scalar_count(record.title);
  f.char_count_body = body_cps.size();
  f.word_count_title = words_of(record.title).size();

  const auto body_words = words_of(record.body);
  f.word_count_body = body_words.size();
  const std::unordered_set<std::string> distinct(body_words.begin(), body_words.end());
  f.dup_words_body = body_words.size() - distinct.size();
  f.dup_rate_body = f.word_count_body > 0
                        ? static_cast<double>(f.dup_words_body) / static_cast<double>(f.word_count_body)
                        : 0.0;

  bool segment_has_text = false;
  for (char32_t cp : body_cps) {
    if (utf8::is_ascii_punct(cp)) ++f.punct_count_body;
    if (cp == U'.' || cp == U'?' || cp == U'!') {
      if (segment_has_text) ++f.sentence_count_body;
      segment_has_text = false;
    } else if (!utf8::is_whitespace(cp)) {
      segment_has_text = true;
    }
  }
  if (segment_has_text) ++f.sentence_count_body;
  return f;
}

std::size_t Histogram::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

Histogram histogram(std::span<const double> values) {
  Histogram h;
  for (std::size_t i = 0; i <= 10; ++i) h.bin_edges[i] = static_cast<double>(i) / 10.0;
  for (double v : values) {
    // Compare against the edges directly so 0.1, 0.2, ... land right of their edge.
    std::size_t bin = 9;
    for (std::size_t b = 1; b < 10; ++b) {
      if (v < h.bin_edges[b]) {
        bin = b - 1;
        break;
      }
    }
    ++h.counts[bin];
  }
  return h;
}

Histogram histogram_targets(const Corpus& corpus, std::string_view column) {
  const auto idx = target_index(column);
  if (!idx) throw Error(ErrorCode::kUnknownColumn, std::string(column));
  const auto col = corpus.target_column(*idx);
  return histogram(col);
}

double correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(xs.size()) + " vs " + std::to_string(ys.size()) + " observations");
  }
  if (xs.size() < 2) throw Error(ErrorCode::kLengthMismatch, "correlation needs at least 2 observations");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return std::clamp(r, -1.0, 1.0);
}

bool CorrelationMatrix::undefined(std::size_t r, std::size_t c) const { return std::isnan(at(r, c)); }

CorrelationMatrix correlation_matrix(const Corpus& corpus, CorrelationRows rows) {
  if (corpus.empty()) throw Error(ErrorCode::kEmptyCorpus, "correlation over an empty corpus");
  CorrelationMatrix m;
  for (auto name : kTargetNames) m.col_labels.emplace_back(name);

  std::vector<std::vector<double>> targets;
  for (std::size_t t = 0; t < kNumTargets; ++t) targets.push_back(corpus.target_column(t));

  std::vector<std::vector<double>> row_series;
  if (rows == CorrelationRows::kTargets) {
    m.row_labels = m.col_labels;
    row_series = targets;
  } else {
    for (auto name : kFeatureNames) m.row_labels.emplace_back(name);
    row_series.assign(FeatureVector::kCount, std::vector<double>(corpus.size()));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto f = extract_features(corpus.rows[i].record).as_array();
      for (std::size_t k = 0; k < f.size(); ++k) row_series[k][i] = f[k];
    }
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.values.assign(m.row_labels.size() * m.col_labels.size(), nan);
  if (corpus.size() < 2) return m;  // every series is constant
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
    for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
      double v;
      if (rows == CorrelationRows::kTargets && r == c) {
        // Exact unit diagonal unless the column is constant.
        v = std::isnan(correlation(row_series[r], targets[c])) ? nan : 1.0;
      } else if (rows == CorrelationRows::kTargets && r > c) {
        v = m.values[c * m.col_labels.size() + r];
      } else {
        v = correlation(row_series[r], targets[c]);
      }
      m.values[r * m.col_labels.size() + c] = v;
    }
  }
  return m;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::json to_json(const Histogram& h, std::string_view column) {
  return nlohmann::json{{"column", column}, {"bin_edges", h.bin_edges}, {"counts", h.counts}, {"total", h.total()}};
}

std::string to_csv(const Histogram& h) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < 10; ++b) {
    out += format_real(h.bin_edges[b]) + "," + format_real(h.bin_edges[b + 1]) + "," +
           std::to_string(h.counts[b]) + "\n";
  }
  return out;
}

nlohmann::json to_json(const CorrelationMatrix& m) {
  nlohmann::json values = nlohmann::json::array();
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.col_labels.size(); ++c) {
      if (m.undefined(r, c)) {
        row.push_back(nullptr);
      } else {
        row.push_back(m.at(r, c));
      }
    }
    values.push_back(std::move(row));
  }
  return nlohmann::json{{"rows", m.row_labels}, {"cols", m.col_labels}, {"values", std::move(values)}};
}

std::string to_csv(const CorrelationMatrix& m) {
  std::string out = "label";
  for (const auto& c : m.col_labels) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
    out += m.row_labels[r];
    for (std::size_t c = 0; c < m.col_labels.size(); ++c) out += "," + format_real(m.at(r, c));
    out += "\n";
  }
  return out;
}

void write_report(const std::filesystem::path& dir, std::string_view report, std::string_view column,
                  const nlohmann::json& json, const std::string& csv) {
  std::filesystem::create_directories(dir);
  const std::string stem = std::string(report) + "_" + std::string(column);
  {
    std::ofstream out(dir / (stem + ".json"), std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / (stem + ".json")).string());
    out << json.dump(2) << '\n';
  }
  std::ofstream out(dir / (stem + ".csv"), std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / (stem + ".csv")).string());
  out << csv;
}

}  // namespace qscore
