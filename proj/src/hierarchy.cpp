#include "ahstn/hierarchy.hpp"

#include <cmath>

#include "ahstn/errors.hpp"
#include "ahstn/graph.hpp"
#include "ahstn/ops.hpp"
#include "ahstn/random.hpp"

namespace ahstn::hierarchy {

using diff::Tensor;

std::size_t cluster_count(std::size_t n_nodes, double p_cluster) {
  if (!(p_cluster > 0.0 && p_cluster <= 1.0)) throw ParameterError("clustering ratio must lie in (0, 1]");
  if (n_nodes < 1) throw ParameterError("cluster_count: need at least one node");
  const double product = static_cast<double>(n_nodes) * p_cluster;
  const auto rounded = static_cast<std::size_t>(std::floor(product + 0.5));
  return std::max<std::size_t>(1, rounded);
}

AssignmentState::AssignmentState(std::size_t n_nodes, std::size_t n_clusters, double alpha, double tau,
                                 std::uint64_t seed)
    : alpha_(alpha), tau_(tau) {
  if (n_clusters < 1 || n_clusters > n_nodes) throw ParameterError("cluster count must lie in [1, N]");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ParameterError("momentum alpha must lie in [0, 1)");
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  Rng rng(hash_name("assignment.init", seed));
  std::vector<double> values(n_nodes * n_clusters);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n_clusters; ++j) {
      values[i * n_clusters + j] = rng.uniform(1e-3, 1.0);
      total += values[i * n_clusters + j];
    }
    for (std::size_t j = 0; j < n_clusters; ++j) values[i * n_clusters + j] /= total;
  }
  matrix_ = Tensor({n_nodes, n_clusters}, std::move(values));
}

void AssignmentState::set_matrix(const Matrix& m) {
  if (matrix_.defined() && (m.rows != n_nodes() || m.cols != n_clusters())) {
    throw DimensionError("assignment matrix shape differs from the configured N x N'");
  }
  matrix_ = Tensor({m.rows, m.cols}, m.values);
}

Tensor AssignmentState::momentum_update(const Tensor& m_prime, bool store) {
  if (frozen_) throw StateError("assignment matrix is frozen; momentum updates are training-only");
  if (m_prime.shape() != matrix_.shape()) {
    throw DimensionError("momentum_update: M' " + diff::to_string(m_prime.shape()) + " vs stored " +
                         diff::to_string(matrix_.shape()));
  }
  // The stored matrix enters as a constant, so only M' carries gradient.
  Tensor blended = diff::add(diff::scale(m_prime, 1.0 - alpha_), diff::scale(matrix_, alpha_));
  if (store) matrix_ = blended.detach();
  return blended;
}

Tensor propose_assignment(const Tensor& x_batch, const Tensor& normalized_adjacency, const Tensor& w_cluster,
                          double tau) {
  if (x_batch.rank() != 4) throw DimensionError("propose_assignment: input must be [B, N, T, C]");
  const auto b = x_batch.dim(0), n = x_batch.dim(1);
  const auto features = x_batch.dim(2) * x_batch.dim(3);
  if (b == 0) throw DimensionError("propose_assignment: empty batch");
  if (w_cluster.rank() != 2 || w_cluster.dim(0) != features) {
    throw DimensionError("propose_assignment: clustering weight " + diff::to_string(w_cluster.shape()) +
                         " does not match window features " + std::to_string(features));
  }
  const auto n_clusters = w_cluster.dim(1);
  if (n_clusters > n) throw ParameterError("propose_assignment: more clusters than nodes");
  // The GCN is linear, so averaging the window over the batch first gives the
  // batch-mean logits.
  Tensor window = diff::reshape(diff::mean_axis0(x_batch), {n, features});
  Tensor logits = diff::matmul(diff::matmul(normalized_adjacency, window), w_cluster);
  return diff::softmax_rows(logits, tau);
}

Downsampled downsample(const Tensor& z_node, const Tensor& m, const Tensor& adjacency) {
  if (m.rank() != 2) throw DimensionError("downsample: assignment must be 2-D");
  if (z_node.rank() < 3 || z_node.dim(z_node.rank() - 3) != m.dim(0)) {
    throw DimensionError("downsample: assignment " + diff::to_string(m.shape()) + " does not match features " +
                         diff::to_string(z_node.shape()));
  }
  if (adjacency.rank() != 2 || adjacency.dim(0) != m.dim(0) || adjacency.dim(1) != m.dim(0)) {
    throw DimensionError("downsample: adjacency " + diff::to_string(adjacency.shape()) +
                         " does not match assignment " + diff::to_string(m.shape()));
  }
  Tensor mt = diff::transpose(m);
  Downsampled out;
  out.features = diff::node_mix(mt, z_node);
  out.graph.adjacency = diff::matmul(mt, diff::matmul(adjacency, m));
  out.graph.normalized = graph::normalize_adjacency(out.graph.adjacency);
  return out;
}

Tensor upsample(const Tensor& z_cluster, const Tensor& m, double eps) {
  if (m.rank() != 2) throw DimensionError("upsample: assignment must be 2-D");
  if (z_cluster.rank() < 3 || z_cluster.dim(z_cluster.rank() - 3) != m.dim(1)) {
    throw DimensionError("upsample: assignment " + diff::to_string(m.shape()) +
                         " does not match cluster features " + diff::to_string(z_cluster.shape()));
  }
  Tensor pinv = diff::regularized_pinv(m, eps);  // [N', N]
  return diff::node_mix(diff::transpose(pinv), z_cluster);
}

std::vector<std::size_t> hard_assignment(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("hard_assignment: assignment must be 2-D");
  const auto rows = m.dim(0), cols = m.dim(1);
  const auto d = m.data();
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j)
      if (d[i * cols + j] > d[i * cols + out[i]]) out[i] = j;
  }
  return out;
}

}  // namespace ahstn::hierarchy
