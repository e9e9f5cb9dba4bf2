#pragma once

// Line-oriented text helpers shared by the network, trip, assignment, and CSV formats.

#include <charconv>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "trafsim/errors.hpp"

namespace trafsim::text {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(s.substr(start)));
      return out;
    }
    out.push_back(trim(s.substr(start, pos - start)));
    start = pos + 1;
  }
}

// Whitespace-separated tokens, empty tokens dropped.
inline std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct Location {
  std::string source;
  std::size_t line = 0;
};

[[noreturn]] inline void fail(const Location& loc, const std::string& what) {
  throw InputError(loc.source + ":" + std::to_string(loc.line) + ": " + what);
}

inline double parse_double(std::string_view field, const Location& loc, std::string_view name) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    fail(loc, "field '" + std::string(name) + "': expected a number, got '" + std::string(field) + "'");
  }
  return v;
}

inline std::int64_t parse_int(std::string_view field, const Location& loc, std::string_view name) {
  std::int64_t v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    fail(loc, "field '" + std::string(name) + "': expected an integer, got '" + std::string(field) + "'");
  }
  return v;
}

// Iterates records of a sectioned file: `[section]` headers, `#` comments, blank lines skipped.
// `on_record(section, fields, location)` is called for every data line.
template <typename F>
void for_each_record(std::istream& in, const std::string& source, F&& on_record) {
  std::string line;
  std::string section;
  Location loc{source, 0};
  while (std::getline(in, line)) {
    ++loc.line;
    std::string_view sv = trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    if (sv.front() == '[') {
      if (sv.back() != ']') fail(loc, "malformed section header");
      section = std::string(sv.substr(1, sv.size() - 2));
      continue;
    }
    if (section.empty()) fail(loc, "record outside of any section");
    on_record(section, split(sv, ','), loc);
  }
}

}  // namespace trafsim::text
