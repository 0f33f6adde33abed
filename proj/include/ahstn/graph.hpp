#pragma once

#include <filesystem>

#include "ahstn/matrix.hpp"
#include "ahstn/tensor.hpp"

namespace ahstn::graph {

// Immutable road-network graph: raw adjacency plus the self-loop augmented,
// symmetrically normalized propagation matrix D^-1/2 (A + I) D^-1/2.
class GraphSpec {
 public:
  GraphSpec() = default;

  // Validates symmetry (1e-12), zero diagonal and nonnegativity; warns when
  // the graph is disconnected.
  static GraphSpec from_adjacency(Matrix adjacency);

  std::size_t n_nodes() const { return adjacency_.rows; }
  const Matrix& adjacency() const { return adjacency_; }
  const Matrix& normalized() const { return normalized_; }
  // Constant tensor view of normalized(), shared by every forward pass.
  const diff::Tensor& normalized_tensor() const { return normalized_tensor_; }
  std::size_t component_count() const { return components_; }

 private:
  Matrix adjacency_;
  Matrix normalized_;
  diff::Tensor normalized_tensor_;
  std::size_t components_ = 0;
};

Matrix normalize(const Matrix& adjacency);

// Differentiable version of normalize() for adjacency matrices that depend on
// learned parameters (the cluster graph). Degrees are row sums of A + I.
diff::Tensor normalize_adjacency(const diff::Tensor& adjacency);

// Standard deviation of the off-diagonal distances, the default kernel width.
double default_sigma(const Matrix& dist);

// A_ij = exp(-d_ij^2 / sigma^2) when that weight reaches `threshold` and
// i != j, else 0.
GraphSpec build_gaussian_adjacency(const Matrix& dist, double sigma, double threshold = 0.1);

enum class Activation { kRelu, kSigmoid, kNone };

// act(Â X W) applied per time step. x: [..., N, T, C_in], w: [C_in, C_out].
diff::Tensor gcn_forward(const diff::Tensor& x, const diff::Tensor& normalized, const diff::Tensor& w,
                         Activation activation);
diff::Tensor gcn_forward(const diff::Tensor& x, const GraphSpec& g, const diff::Tensor& w,
                         Activation activation);

// Edge list CSV: header `src,dst,weight`, each undirected pair listed once.
Matrix read_edge_list(const std::filesystem::path& path, std::size_t n_nodes);
void write_edge_list(const std::filesystem::path& path, const Matrix& adjacency);

// Distance matrix CSV: n rows of n comma-separated values, no header.
Matrix read_distance_matrix(const std::filesystem::path& path);

}  // namespace ahstn::graph
