#include "ahstn/stblock.hpp"

#include <cmath>

#include "ahstn/errors.hpp"
#include "ahstn/random.hpp"

namespace ahstn::nn {

using diff::Tensor;

Tensor glorot_uniform(const diff::Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                      std::string_view name) {
  Rng rng(hash_name(name, seed));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(diff::element_count(shape));
  for (double& v : values) v = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(values), true);
}

GTCNLayer::GTCNLayer(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                     std::uint64_t seed, std::string name)
    : kernel_(kernel), in_channels_(in_channels), out_channels_(out_channels), name_(std::move(name)) {
  if (kernel == 0 || in_channels == 0 || out_channels == 0) {
    throw ParameterError(name_ + ": kernel and channel sizes must be positive");
  }
  weight_ = glorot_uniform({kernel, in_channels, 2 * out_channels}, kernel * in_channels,
                           kernel * 2 * out_channels, seed, name_ + ".weight");
  bias_ = Tensor::zeros({2 * out_channels}, true);
}

Tensor GTCNLayer::forward(const Tensor& x) const {
  return diff::glu(diff::conv1d_time(x, weight_, bias_));
}

void GTCNLayer::collect(std::vector<NamedParameter>& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

STBlock::STBlock(std::size_t kernel, std::size_t in_channels, std::size_t temporal_channels,
                 std::size_t graph_channels, std::uint64_t seed, std::string name)
    : name_(std::move(name)),
      temporal_in_(kernel, in_channels, temporal_channels, seed, name_ + ".gtcn_in"),
      gcn_weight_(glorot_uniform({temporal_channels, graph_channels}, temporal_channels, graph_channels,
                                 seed, name_ + ".gcn.weight")),
      temporal_out_(kernel, graph_channels, temporal_channels, seed, name_ + ".gtcn_out"),
      bn_gamma_(Tensor::full({temporal_channels}, 1.0, true)),
      bn_beta_(Tensor::zeros({temporal_channels}, true)),
      bn_state_(temporal_channels) {}

std::size_t STBlock::output_steps(std::size_t input_steps) const {
  const auto shrink = 2 * (temporal_in_.kernel() - 1);
  if (input_steps < shrink + 1) {
    throw DimensionError(name_ + ": temporal length " + std::to_string(input_steps) +
                         " too short for two kernels of size " + std::to_string(temporal_in_.kernel()));
  }
  return input_steps - shrink;
}

Tensor STBlock::forward(const Tensor& x, const Tensor& normalized_adjacency, bool training,
                        bool update_stats) {
  if (x.rank() < 3) throw DimensionError(name_ + ": input must be [..., N, T, C]");
  output_steps(x.dim(x.rank() - 2));
  Tensor h = temporal_in_.forward(x);
  h = graph::gcn_forward(h, normalized_adjacency, gcn_weight_, graph::Activation::kRelu);
  h = temporal_out_.forward(h);
  return diff::batchnorm(h, bn_gamma_, bn_beta_, bn_state_, training, update_stats);
}

void STBlock::collect(std::vector<NamedParameter>& out) const {
  temporal_in_.collect(out);
  out.push_back({name_ + ".gcn.weight", gcn_weight_});
  temporal_out_.collect(out);
  out.push_back({name_ + ".bn.gamma", bn_gamma_});
  out.push_back({name_ + ".bn.beta", bn_beta_});
}

}  // namespace ahstn::nn
