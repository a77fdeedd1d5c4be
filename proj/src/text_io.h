#pragma once

// Line-oriented text parsing shared by the COLMAP, match-dump, retrieval and
// pose-file readers.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "deviloc/error.h"

namespace deviloc {

class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path)
      : path_(path.string()), stream_(path) {
    if (!stream_) Throw(ErrorCode::kIoError, "cannot open " + path_);
  }

  // Next line that is neither blank nor a '#' comment.
  bool NextContent(std::string* line) {
    while (NextRaw(line)) {
      const size_t first = line->find_first_not_of(" \t\r");
      if (first == std::string::npos || (*line)[first] == '#') continue;
      return true;
    }
    return false;
  }

  // Next line that is not a comment; may be empty.
  bool NextNonComment(std::string* line) {
    while (NextRaw(line)) {
      const size_t first = line->find_first_not_of(" \t\r");
      if (first != std::string::npos && (*line)[first] == '#') continue;
      return true;
    }
    return false;
  }

  int line_number() const { return line_number_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void Fail(const std::string& reason) const {
    throw ParseError(path_, line_number_, reason);
  }

 private:
  bool NextRaw(std::string* line) {
    if (!std::getline(stream_, *line)) return false;
    ++line_number_;
    if (!line->empty() && line->back() == '\r') line->pop_back();
    return true;
  }

  std::string path_;
  std::ifstream stream_;
  int line_number_ = 0;
};

inline std::vector<std::string_view> Tokenize(std::string_view line) {
  std::vector<std::string_view> tokens;
  size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos >= line.size()) break;
    size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
    tokens.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return tokens;
}

template <typename T>
inline T ParseNumber(std::string_view token, const LineReader& reader,
              const char* field) {
  T value{};
  const auto [ptr, ec] =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    reader.Fail(std::string("invalid ") + field + " '" + std::string(token) +
                "'");
  }
  return value;
}

}  // namespace deviloc
