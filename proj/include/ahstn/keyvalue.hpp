#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ahstn {

struct KeyValueEntry {
  std::string section;  // empty before the first [section] header
  std::string key;
  std::string value;
  std::size_t line = 0;
};

// Parses `key = value` lines with optional `[section]` headers. Blank lines
// and `#` comments are skipped; anything else is a ParseError.
std::vector<KeyValueEntry> parse_key_value_text(std::string_view text, const std::string& source);
std::vector<KeyValueEntry> parse_key_value_file(const std::filesystem::path& path);

}  // namespace ahstn
