#pragma once

#include <cstdint>

#include "ahstn/matrix.hpp"
#include "ahstn/tensor.hpp"

namespace ahstn::hierarchy {

// round-half-up(n_nodes * p_cluster), at least 1.
std::size_t cluster_count(std::size_t n_nodes, double p_cluster);

// Stored soft assignment of N nodes to N' clusters, blended across training
// steps with momentum and frozen for inference.
class AssignmentState {
 public:
  AssignmentState() = default;
  // Uniform positive noise, row-normalized.
  AssignmentState(std::size_t n_nodes, std::size_t n_clusters, double alpha, double tau, std::uint64_t seed);

  // Stored M (row-stochastic, never requires grad).
  const diff::Tensor& matrix() const { return matrix_; }
  void set_matrix(const Matrix& m);

  std::size_t n_nodes() const { return matrix_.dim(0); }
  std::size_t n_clusters() const { return matrix_.dim(1); }
  double alpha() const { return alpha_; }
  double tau() const { return tau_; }

  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }

  // Returns alpha*M + (1-alpha)*M' with gradient through M' only. When
  // `store` is set the detached blend replaces M.
  diff::Tensor momentum_update(const diff::Tensor& m_prime, bool store = true);

 private:
  diff::Tensor matrix_;
  double alpha_ = 0.9;
  double tau_ = 1.0;
  bool frozen_ = false;
};

// Clustering GCN over the raw window: logits = Â X W per sample with time and
// channels flattened into features, averaged over the batch axis, then a
// temperature softmax per row.
// x_batch: [B, N, T, C], w_cluster: [T*C, N'] -> [N, N'].
diff::Tensor propose_assignment(const diff::Tensor& x_batch, const diff::Tensor& normalized_adjacency,
                                const diff::Tensor& w_cluster, double tau);

struct ClusterGraph {
  diff::Tensor adjacency;   // M^T A M
  diff::Tensor normalized;  // D^-1/2 (A_c + I) D^-1/2
};

struct Downsampled {
  diff::Tensor features;  // [..., N', T, C]
  ClusterGraph graph;
};

// Z_cluster = M^T Z_node per (time, channel); A_cluster = M^T A M.
Downsampled downsample(const diff::Tensor& z_node, const diff::Tensor& m, const diff::Tensor& adjacency);

// Z_node = (M^+)^T Z_cluster with M^+ the ridge-regularized pseudoinverse.
diff::Tensor upsample(const diff::Tensor& z_cluster, const diff::Tensor& m, double eps);

// Index of the largest entry per row; the lowest index wins ties.
std::vector<std::size_t> hard_assignment(const diff::Tensor& m);

}  // namespace ahstn::hierarchy
