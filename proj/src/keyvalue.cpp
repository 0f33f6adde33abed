#include "ahstn/keyvalue.hpp"

#include <fstream>
#include <sstream>

#include "ahstn/errors.hpp"
#include "csv.hpp"

namespace ahstn {

std::vector<KeyValueEntry> parse_key_value_text(std::string_view text, const std::string& source) {
  std::vector<KeyValueEntry> out;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = std::string(csv::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = csv::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
    out.push_back({section, std::string(key), std::string(csv::trim(line.substr(eq + 1))), line_no});
    if (end == text.size()) break;
  }
  return out;
}

std::vector<KeyValueEntry> parse_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_value_text(ss.str(), path.string());
}

}  // namespace ahstn
