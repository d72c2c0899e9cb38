#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace recur::csv {

// Splits one CSV line. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_line(std::string_view line);

// Header-indexed reader. Row numbers are 1-based and count the header line,
// so they match what an editor shows.
class Reader {
 public:
  explicit Reader(std::istream& in);

  bool next();
  std::size_t row_number() const { return row_; }
  bool has_column(std::string_view name) const;
  // Empty string when the column is absent.
  const std::string& field(std::string_view name) const;
  void require_columns(const std::vector<std::string>& names) const;

 private:
  std::istream& in_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::string> fields_;
  std::size_t row_ = 1;
};

// Quotes a field when it contains a comma, quote or line break.
std::string quote(std::string_view field);

double parse_double(std::string_view text, std::size_t row, std::string_view column);
long parse_long(std::string_view text, std::size_t row, std::string_view column);

}  // namespace recur::csv
