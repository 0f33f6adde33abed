#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ahstn/errors.hpp"

namespace support {

// Collects warnings for the lifetime of the object.
struct WarningCapture {
  std::vector<std::string> messages;
  ahstn::WarningHandler previous;
  WarningCapture() {
    previous = ahstn::set_warning_handler([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { ahstn::set_warning_handler(previous); }
};

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ahstn_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace support
