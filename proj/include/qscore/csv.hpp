#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qscore::csv {

using Row = std::vector<std::string>;

/// RFC-4180 reader over an in-memory buffer. Quoted fields may contain
/// commas, doubled quotes and line breaks; CRLF and LF line endings are both
/// accepted.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  /// Next record, or nullopt at end of input. Throws Error(kMalformedRow) on
  /// an unterminated quoted field or stray characters after a closing quote.
  std::optional<Row> next();

  /// 1-based physical line where the most recently returned record started.
  std::size_t line() const { return record_line_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t record_line_ = 0;
};

/// Quote a field only when it needs it.
std::string escape(std::string_view field);
std::string join(const Row& fields);

}  // namespace qscore::csv
