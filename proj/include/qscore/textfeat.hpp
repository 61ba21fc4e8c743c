#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qscore/corpus.hpp"

namespace qscore {

struct FeatureVector {
  std::size_t char_count_title = 0;
  std::size_t char_count_body = 0;
  std::size_t word_count_title = 0;
  std::size_t word_count_body = 0;
  std::size_t punct_count_body = 0;
  std::size_t dup_words_body = 0;
  double dup_rate_body = 0.0;
  std::size_t sentence_count_body = 0;

  static constexpr std::size_t kCount = 8;
  std::array<double, kCount> as_array() const;
  bool operator==(const FeatureVector&) const = default;
};

inline constexpr std::array<std::string_view, FeatureVector::kCount> kFeatureNames = {
    "char_count_title", "char_count_body",  "word_count_title", "word_count_body",
    "punct_count_body", "dup_words_body",   "dup_rate_body",    "sentence_count_body",
};

/// Lowercase, split on whitespace, strip leading/trailing ASCII punctuation
/// from each token, drop tokens that end up empty.
std::vector<std::string> words_of(std::string_view text);

FeatureVector extract_features(const QuestionRecord& record);

struct Histogram {
  std::array<double, 11> bin_edges{};
  std::array<std::size_t, 10> counts{};

  std::size_t total() const;
};

/// Ten equal bins over [0,1]; bins are [left, right) except the last,
/// which is closed so that 1.0 lands in it.
Histogram histogram(std::span<const double> values);
Histogram histogram_targets(const Corpus& corpus, std::string_view column);

/// Pearson product-moment coefficient. Returns NaN (the "undefined" flag)
/// when either series is constant.
double correlation(std::span<const double> xs, std::span<const double> ys);

struct CorrelationMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<double> values;  // row-major; NaN marks an undefined entry

  double at(std::size_t r, std::size_t c) const { return values[r * col_labels.size() + c]; }
  bool undefined(std::size_t r, std::size_t c) const;
};

enum class CorrelationRows { kTargets, kFeatures };

CorrelationMatrix correlation_matrix(const Corpus& corpus, CorrelationRows rows);

// Report emission: JSON (labels + arrays, undefined entries as null) and
// plot-ready CSV.
nlohmann::json to_json(const Histogram& h, std::string_view column);
std::string to_csv(const Histogram& h);
nlohmann::json to_json(const CorrelationMatrix& m);
std::string to_csv(const CorrelationMatrix& m);

/// Writes `<report>_<column>.json` and `<report>_<column>.csv` under `dir`.
void write_report(const std::filesystem::path& dir, std::string_view report, std::string_view column,
                  const nlohmann::json& json, const std::string& csv);

/// Shortest round-trip decimal form; "nan" for NaN.
std::string format_real(double v);

}  // namespace qscore
