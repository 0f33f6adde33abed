#include "ahstn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "ahstn/errors.hpp"
#include "ahstn/ops.hpp"
#include "csv.hpp"

namespace ahstn::graph {

namespace {

std::size_t count_components(const Matrix& a) {
  const auto n = a.rows;
  std::vector<bool> seen(n, false);
  std::size_t components = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++components;
    std::queue<std::size_t> q;
    q.push(s);
    seen[s] = true;
    while (!q.empty()) {
      const auto u = q.front();
      q.pop();
      for (std::size_t v = 0; v < n; ++v) {
        if (!seen[v] && a(u, v) > 0.0) {
          seen[v] = true;
          q.push(v);
        }
      }
    }
  }
  return components;
}

}  // namespace

Matrix normalize(const Matrix& adjacency) {
  if (adjacency.rows != adjacency.cols) throw DimensionError("normalize: adjacency must be square");
  const auto n = adjacency.rows;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) deg += adjacency(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = adjacency(i, j) + (i == j ? 1.0 : 0.0);
      out(i, j) = a * (inv_sqrt_deg[i] * inv_sqrt_deg[j]);  // keeps out(i, j) == out(j, i) bitwise
    }
  }
  return out;
}

diff::Tensor normalize_adjacency(const diff::Tensor& adjacency) {
  using diff::Tensor;
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw DimensionError("normalize_adjacency: adjacency must be square, got " +
                         diff::to_string(adjacency.shape()));
  }
  const auto n = adjacency.dim(0);
  const auto a = adjacency.data();
  std::vector<double> deg(n, 1.0), inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
    if (!(deg[i] > 0.0)) throw NumericalError("normalize_adjacency: nonpositive degree");
    inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
  }
  std::vector<double> out_data(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out_data[i * n + j] = (a[i * n + j] + (i == j ? 1.0 : 0.0)) * (inv_sqrt[i] * inv_sqrt[j]);
  Tensor out({n, n}, std::move(out_data));
  if (diff::should_record({&adjacency})) {
    out.set_requires_grad(true);
    diff::active_tape()->record(out, [adjacency, out, deg, inv_sqrt, n]() mutable {
      // out_ij = s_i (A_ij + δ_ij) s_j with s = deg^-1/2 and deg_i = 1 + Σ_j A_ij.
      const auto g = out.grad();
      const auto y = out.data();
      auto d = adjacency.grad_buffer();
      std::vector<double> ddeg(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gy = g[i * n + j] * y[i * n + j];
          ddeg[i] -= 0.5 * gy / deg[i];
          ddeg[j] -= 0.5 * gy / deg[j];
        }
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          d[i * n + j] += g[i * n + j] * inv_sqrt[i] * inv_sqrt[j] + ddeg[i];
    });
  }
  return out;
}

GraphSpec GraphSpec::from_adjacency(Matrix adjacency) {
  if (adjacency.rows != adjacency.cols || adjacency.rows == 0) {
    throw DimensionError("adjacency must be a nonempty square matrix");
  }
  const auto n = adjacency.rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (adjacency(i, i) != 0.0) throw ParameterError("adjacency diagonal must be zero (node " + std::to_string(i) + ")");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = adjacency(i, j);
      if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("adjacency entries must be finite and nonnegative");
      if (std::abs(v - adjacency(j, i)) > 1e-12) {
        std::ostringstream os;
        os << "adjacency is not symmetric at (" << i << ", " << j << ")";
        throw ParameterError(os.str());
      }
    }
  }
  GraphSpec g;
  g.normalized_ = normalize(adjacency);
  g.normalized_tensor_ = diff::Tensor({n, n}, g.normalized_.values);
  g.components_ = count_components(adjacency);
  g.adjacency_ = std::move(adjacency);
  if (g.components_ > 1) {
    warn("graph is disconnected (" + std::to_string(g.components_) + " components)");
  }
  return g;
}

double default_sigma(const Matrix& dist) {
  const auto n = dist.rows;
  if (n < 2) return 1.0;
  double total = 0.0, total_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        total += dist(i, j);
        total_sq += dist(i, j) * dist(i, j);
        ++count;
      }
  const double m = total / static_cast<double>(count);
  const double var = std::max(0.0, total_sq / static_cast<double>(count) - m * m);
  const double sd = std::sqrt(var);
  return sd > 0.0 ? sd : (m > 0.0 ? m : 1.0);
}

GraphSpec build_gaussian_adjacency(const Matrix& dist, double sigma, double threshold) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian kernel width sigma must be positive");
  if (!(threshold >= 0.0)) throw ParameterError("gaussian kernel threshold must be nonnegative");
  if (dist.rows != dist.cols) throw DimensionError("distance matrix must be square");
  const auto n = dist.rows;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist(i, j);
      if (d < 0.0) throw ParameterError("distances must be nonnegative");
      const double w = std::exp(-(d * d) / (sigma * sigma));
      a(i, j) = w >= threshold ? w : 0.0;
    }
  }
  // Symmetrize exactly so that tiny asymmetries in the input do not survive.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(j, i) = a(i, j);
  return GraphSpec::from_adjacency(std::move(a));
}

diff::Tensor gcn_forward(const diff::Tensor& x, const diff::Tensor& normalized, const diff::Tensor& w,
                         Activation activation) {
  using namespace diff;
  if (x.rank() < 3) throw DimensionError("gcn_forward: input must be [..., N, T, C]");
  if (w.rank() != 2 || w.dim(0) != x.shape().back()) {
    throw DimensionError("gcn_forward: weight " + to_string(w.shape()) + " does not match input " +
                         to_string(x.shape()));
  }
  const auto n = x.dim(x.rank() - 3);
  if (normalized.dim(0) != n || normalized.dim(1) != n) {
    throw DimensionError("node-count mismatch: graph has " + std::to_string(normalized.dim(0)) +
                         " nodes, input " + to_string(x.shape()));
  }
  const auto c_in = w.dim(0), c_out = w.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = c_out;
  // Â(XW) == (ÂX)W; the linear map goes first since C_out <= C_in in this model.
  Tensor xw = reshape(matmul(reshape(x, {x.numel() / c_in, c_in}), w), out_shape);
  Tensor mixed = node_mix(normalized, xw);
  switch (activation) {
    case Activation::kRelu:
      return relu(mixed);
    case Activation::kSigmoid:
      return sigmoid(mixed);
    case Activation::kNone:
      break;
  }
  return mixed;
}

diff::Tensor gcn_forward(const diff::Tensor& x, const GraphSpec& g, const diff::Tensor& w,
                         Activation activation) {
  return gcn_forward(x, g.normalized_tensor(), w, activation);
}

Matrix read_edge_list(const std::filesystem::path& path, std::size_t n_nodes) {
  auto in = csv::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty edge list");
  ++line_no;
  const auto header = csv::split(csv::trim(line));
  if (header.size() != 3 || csv::trim(header[0]) != "src" || csv::trim(header[1]) != "dst" ||
      csv::trim(header[2]) != "weight") {
    throw ParseError(csv::where(path, 1) + ": expected header 'src,dst,weight'");
  }
  Matrix a(n_nodes, n_nodes);
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split(csv::trim(line));
    if (cells.size() != 3) throw ParseError(csv::where(path, line_no) + ": expected 3 columns");
    const auto src = csv::parse_int(cells[0], path, line_no);
    const auto dst = csv::parse_int(cells[1], path, line_no);
    const double w = csv::parse_double(cells[2], path, line_no);
    if (src < 0 || dst < 0 || static_cast<std::size_t>(src) >= n_nodes ||
        static_cast<std::size_t>(dst) >= n_nodes) {
      throw ParseError(csv::where(path, line_no) + ": node id out of range");
    }
    if (src == dst) throw ParseError(csv::where(path, line_no) + ": self loop");
    if (!(w >= 0.0)) throw ParseError(csv::where(path, line_no) + ": negative weight");
    a(static_cast<std::size_t>(src), static_cast<std::size_t>(dst)) = w;
    a(static_cast<std::size_t>(dst), static_cast<std::size_t>(src)) = w;
  }
  return a;
}

void write_edge_list(const std::filesystem::path& path, const Matrix& adjacency) {
  auto out = csv::open_output(path);
  out << "src,dst,weight\n";
  for (std::size_t i = 0; i < adjacency.rows; ++i)
    for (std::size_t j = i + 1; j < adjacency.cols; ++j)
      if (adjacency(i, j) != 0.0) out << i << ',' << j << ',' << csv::format_double(adjacency(i, j)) << '\n';
}

Matrix read_distance_matrix(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& cell : csv::split(csv::trim(line))) row.push_back(csv::parse_double(cell, path, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(csv::where(path, line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");
  const auto n = rows.size();
  if (rows.front().size() != n) throw ParseError(path.string() + ": distance matrix is not square");
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d(i, j) = rows[i][j];
  return d;
}

}  // namespace ahstn::graph
