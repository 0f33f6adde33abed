#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ahstn/graph.hpp"
#include "ahstn/hierarchy.hpp"
#include "ahstn/stblock.hpp"

namespace ahstn::model {

enum class Variant { kFull, kNoSkip, kNoHierarchy };

std::string to_string(Variant v);
// Accepts full | no-skip | no-hierarchy (and the FULL/NO_SKIP/NO_HIERARCHY
// spellings).
Variant parse_variant(std::string_view text);

struct ModelConfig {
  std::size_t input_steps = 12;       // T
  std::size_t horizon = 12;           // H
  std::size_t kernel = 2;             // K
  std::size_t temporal_channels = 64; // C_t
  std::size_t graph_channels = 32;    // C_g
  double p_cluster = 0.1;
  double tau = 1.0;
  double alpha = 0.9;
  double eps_pinv = 1e-6;
  Variant variant = Variant::kFull;
  std::uint64_t seed = 0;

  // Time steps left after the three node-level blocks (the head's kernel).
  std::size_t final_steps() const;
  // Throws ParameterError on any inconsistency.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
  bool operator==(const ModelConfig&) const = default;
};

struct CensusEntry {
  std::string name;
  diff::Shape shape;
  std::size_t count;
};

struct ForwardOptions {
  bool training = false;
  // Allows training-mode passes (batch statistics, live assignment proposal)
  // without mutating running statistics or the stored assignment.
  bool update_state = true;
  // Replaces the upsampled cluster branch by zeros before the merge.
  bool zero_hierarchy = false;
};

// Mutable state that is not a trainable parameter.
struct ModelState {
  std::vector<std::vector<double>> parameters;
  std::optional<Matrix> assignment;
  std::vector<diff::BatchNormState> batchnorm;
};

class AHSTNModel {
 public:
  AHSTNModel(ModelConfig config, graph::GraphSpec graph);
  // Parameter handles alias internal tensors, so copies would share storage.
  AHSTNModel(const AHSTNModel&) = delete;
  AHSTNModel& operator=(const AHSTNModel&) = delete;
  AHSTNModel(AHSTNModel&&) = default;
  AHSTNModel& operator=(AHSTNModel&&) = default;

  // x: [B, N, T, 1] normalized inputs -> [B, N, H] normalized forecasts.
  diff::Tensor forward(const diff::Tensor& x, bool training);
  diff::Tensor forward(const diff::Tensor& x, const ForwardOptions& options);

  // Trainable parameters in declared census order.
  const std::vector<nn::NamedParameter>& parameters() const { return parameters_; }
  std::vector<CensusEntry> census() const;
  std::size_t parameter_count() const;

  std::size_t head_input_channels() const;
  std::size_t st_block_count() const { return has_hierarchy() ? 4 : 3; }
  bool has_hierarchy() const { return config_.variant != Variant::kNoHierarchy; }
  std::size_t n_clusters() const;

  hierarchy::AssignmentState* assignment() { return assignment_ ? &*assignment_ : nullptr; }
  const hierarchy::AssignmentState* assignment() const { return assignment_ ? &*assignment_ : nullptr; }
  std::vector<diff::BatchNormState*> batchnorm_states();

  const ModelConfig& config() const { return config_; }
  const graph::GraphSpec& graph() const { return graph_; }

  ModelState state() const;
  void load_state(const ModelState& state);
  void zero_grad();

 private:
  ModelConfig config_;
  graph::GraphSpec graph_;
  diff::Tensor adjacency_;  // raw A as a constant tensor
  nn::STBlock block1_, block2_, block3_;
  std::optional<nn::STBlock> block4_;
  diff::Tensor cluster_weight_;  // [T, N'], hierarchy variants only
  std::optional<hierarchy::AssignmentState> assignment_;
  nn::GTCNLayer head_temporal_;
  diff::Tensor head_w1_, head_b1_, head_w2_, head_b2_;
  std::vector<nn::NamedParameter> parameters_;
};

// Versioned little-endian binary checkpoint; see README for the layout.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> metadata;  // normalizer, split ratios, scores
  Matrix adjacency;
  ModelState state;
  std::vector<std::string> parameter_names;
};

inline constexpr char kCheckpointMagic[8] = {'A', 'H', 'S', 'T', 'N', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const AHSTNModel& model,
                     const std::map<std::string, std::string>& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Rebuilds the model described by a checkpoint with its stored state frozen
// for inference.
AHSTNModel restore_model(const Checkpoint& checkpoint);

}  // namespace ahstn::model
