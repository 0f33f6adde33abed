#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ahstn/graph.hpp"
#include "ahstn/ops.hpp"
#include "ahstn/tensor.hpp"

namespace ahstn::nn {

struct NamedParameter {
  std::string name;
  diff::Tensor tensor;
};

// Glorot-uniform tensor whose draws depend only on (seed, name), so adding
// or removing other parameters never changes this one.
diff::Tensor glorot_uniform(const diff::Shape& shape, std::size_t fan_in, std::size_t fan_out,
                            std::uint64_t seed, std::string_view name);

// Gated temporal convolution: conv to 2*C_t channels, then P * sigmoid(Q).
class GTCNLayer {
 public:
  GTCNLayer() = default;
  GTCNLayer(std::size_t kernel, std::size_t in_channels, std::size_t out_channels, std::uint64_t seed,
            std::string name);

  diff::Tensor forward(const diff::Tensor& x) const;

  std::size_t kernel() const { return kernel_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }
  diff::Tensor& weight() { return weight_; }
  diff::Tensor& bias() { return bias_; }
  void collect(std::vector<NamedParameter>& out) const;

 private:
  std::size_t kernel_ = 0, in_channels_ = 0, out_channels_ = 0;
  std::string name_;
  diff::Tensor weight_;  // [K, C_in, 2*C_t]
  diff::Tensor bias_;    // [2*C_t]
};

// GTCN -> GCN(+ReLU) -> GTCN -> batch norm.
class STBlock {
 public:
  STBlock() = default;
  STBlock(std::size_t kernel, std::size_t in_channels, std::size_t temporal_channels,
          std::size_t graph_channels, std::uint64_t seed, std::string name);

  // x: [..., N, T, C_in] -> [..., N, T - 2(K-1), C_t]. `update_stats` lets
  // gradient checks run training-mode passes without touching running stats.
  diff::Tensor forward(const diff::Tensor& x, const diff::Tensor& normalized_adjacency, bool training,
                       bool update_stats = true);
  diff::Tensor forward(const diff::Tensor& x, const graph::GraphSpec& g, bool training) {
    return forward(x, g.normalized_tensor(), training);
  }

  std::size_t output_steps(std::size_t input_steps) const;
  const std::string& name() const { return name_; }
  GTCNLayer& temporal_in() { return temporal_in_; }
  GTCNLayer& temporal_out() { return temporal_out_; }
  diff::Tensor& gcn_weight() { return gcn_weight_; }
  diff::Tensor& bn_gamma() { return bn_gamma_; }
  diff::Tensor& bn_beta() { return bn_beta_; }
  diff::BatchNormState& bn_state() { return bn_state_; }
  const diff::BatchNormState& bn_state() const { return bn_state_; }
  void collect(std::vector<NamedParameter>& out) const;

 private:
  std::string name_;
  GTCNLayer temporal_in_;
  diff::Tensor gcn_weight_;  // [C_t, C_g]
  GTCNLayer temporal_out_;
  diff::Tensor bn_gamma_, bn_beta_;
  diff::BatchNormState bn_state_;
};

}  // namespace ahstn::nn
