#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ahstn/keyvalue.hpp"
#include "ahstn/model.hpp"
#include "ahstn/training.hpp"

namespace ahstn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Bad flags, bad config, refused output directory.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Sections: [data] series, edges | distances, threshold, labels, train_ratio,
// val_ratio, test_ratio; [model] every ModelConfig key except seed;
// [train] epochs, batch_size, learning_rate, lr_decay, finetune_epochs;
// [run] seed, out. Relative paths resolve against the config file's folder.
struct RunConfig {
  std::filesystem::path series;
  std::filesystem::path edges;
  std::filesystem::path distances;
  double threshold = 0.1;
  std::filesystem::path labels;
  training::SplitRatios split;
  model::ModelConfig model;
  training::TrainConfig train;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;

  // Propagates `seed` into the model and train configs.
  void apply_seed(std::uint64_t value);
  std::map<std::string, std::string> to_map() const;
};

RunConfig run_config_from_entries(const std::vector<KeyValueEntry>& entries, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Returns the process exit code.
int run(int argc, char** argv);
// `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace ahstn::cli
