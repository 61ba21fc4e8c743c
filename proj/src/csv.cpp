#include "qscore/csv.hpp"

#include "qscore/error.hpp"

namespace qscore::csv {

std::optional<Row> Reader::next() {
  // Skip a UTF-8 byte order mark at the very start.
  if (pos_ == 0 && data_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
  if (pos_ >= data_.size()) return std::nullopt;

  record_line_ = line_;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool after_quote = false;

  while (pos_ < data_.size()) {
    const char c = data_[pos_];
    if (in_quotes) {
      if (c == '"') {
        if (pos_ + 1 < data_.size() && data_[pos_ + 1] == '"') {
          field.push_back('"');
          pos_ += 2;
          continue;
        }
        in_quotes = false;
        after_quote = true;
        ++pos_;
        continue;
      }
      if (c == '\n') ++line_;
      field.push_back(c);
      ++pos_;
      continue;
    }

    if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      after_quote = false;
      ++pos_;
    } else if (c == '\r' || c == '\n') {
      ++pos_;
      if (c == '\r' && pos_ < data_.size() && data_[pos_] == '\n') ++pos_;
      ++line_;
      row.push_back(std::move(field));
      return row;
    } else if (c == '"' && field.empty() && !after_quote) {
      in_quotes = true;
      ++pos_;
    } else if (after_quote) {
      throw Error(ErrorCode::kMalformedRow,
                  "line " + std::to_string(line_) + ": unexpected character after closing quote");
    } else {
      field.push_back(c);
      ++pos_;
    }
  }

  if (in_quotes) {
    throw Error(ErrorCode::kMalformedRow,
                "line " + std::to_string(record_line_) + ": unterminated quoted field");
  }
  row.push_back(std::move(field));
  return row;
}

std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string join(const Row& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(fields[i]);
  }
  return out;
}

}  // namespace qscore::csv
