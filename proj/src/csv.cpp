#include "recur/csv.hpp"

#include <charconv>
#include <cstdlib>

#include "recur/error.hpp"

namespace recur::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

Reader::Reader(std::istream& in) : in_(in) {
  std::string header;
  if (!std::getline(in_, header)) throw ParseError("empty CSV input: header row required");
  if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
  const auto names = split_line(header);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!index_.emplace(names[i], i).second) {
      throw ParseError("duplicate column '" + names[i] + "' in CSV header");
    }
  }
}

bool Reader::next() {
  std::string line;
  while (std::getline(in_, line)) {
    ++row_;
    if (trim(line).empty()) continue;
    fields_ = split_line(line);
    if (fields_.size() != index_.size()) {
      throw ParseError("row " + std::to_string(row_) + ": expected " +
                       std::to_string(index_.size()) + " fields, found " +
                       std::to_string(fields_.size()));
    }
    return true;
  }
  return false;
}

bool Reader::has_column(std::string_view name) const { return index_.find(name) != index_.end(); }

const std::string& Reader::field(std::string_view name) const {
  static const std::string empty;
  auto it = index_.find(name);
  if (it == index_.end()) return empty;
  return fields_[it->second];
}

void Reader::require_columns(const std::vector<std::string>& names) const {
  for (const auto& n : names) {
    if (!has_column(n)) throw ParseError("CSV is missing required column '" + n + "'");
  }
}

std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

double parse_double(std::string_view text, std::size_t row, std::string_view column) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ParseError("row " + std::to_string(row) + ": column '" + std::string(column) +
                     "' is not a number: '" + s + "'");
  }
  return v;
}

long parse_long(std::string_view text, std::size_t row, std::string_view column) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError("row " + std::to_string(row) + ": column '" + std::string(column) +
                     "' is not an integer: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace recur::csv
