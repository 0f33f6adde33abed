#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ahstn/matrix.hpp"
#include "ahstn/tensor.hpp"

namespace ahstn::data {

// N x L observations, node-major. Missing entries have observed == 0 and a
// sentinel value of 0 that downstream code never reads.
struct RawSeries {
  std::size_t n_nodes = 0;
  std::size_t length = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  double bin_minutes = 10.0;

  RawSeries() = default;
  RawSeries(std::size_t nodes, std::size_t len)
      : n_nodes(nodes), length(len), values(nodes * len, 0.0), observed(nodes * len, 1) {}

  double value(std::size_t node, std::size_t t) const { return values[node * length + t]; }
  bool is_observed(std::size_t node, std::size_t t) const { return observed[node * length + t] != 0; }
  void set(std::size_t node, std::size_t t, double v) {
    values[node * length + t] = v;
    observed[node * length + t] = 1;
  }
  void set_missing(std::size_t node, std::size_t t) {
    values[node * length + t] = 0.0;
    observed[node * length + t] = 0;
  }
  std::size_t missing_count() const;
};

// Header `node_0,...,node_{N-1}`, one row per time bin, empty cell = missing.
RawSeries load_series(const std::filesystem::path& path);
void save_series(const std::filesystem::path& path, const RawSeries& series);

struct SyntheticSpec {
  std::size_t n_clusters = 8;
  std::size_t nodes_per_cluster = 8;
  std::size_t length = 5000;
  double intra_density = 0.6;
  double inter_density = 0.02;
  double base_level = 40.0;
  double base_spread = 0.1;      // relative spread of per-cluster base levels
  double amplitude_min = 0.15;   // relative periodic amplitude range
  double amplitude_max = 0.35;
  double period_min = 36.0;      // in time bins
  double period_max = 144.0;
  double ar_coefficient = 0.9;   // persistence of the regional disturbance
  double diffusion = 0.2;        // neighbour coupling of the disturbance
  double shock_sigma = 1.5;      // per-cluster disturbance innovations
  double noise_sigma = 1.0;      // per-node observation noise
  double missing_rate = 0.01;
  double bin_minutes = 10.0;
  std::uint64_t seed = 7;

  std::size_t n_nodes() const { return n_clusters * nodes_per_cluster; }
  void validate() const;
  std::map<std::string, std::string> to_map() const;
};

// Line-oriented `key = value` text; `#` starts a comment. Unknown keys are
// ParseErrors naming the key.
SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path);
SyntheticSpec synthetic_spec_from_map(const std::map<std::string, std::string>& values);

struct SyntheticDataset {
  RawSeries series;
  Matrix adjacency;
  std::vector<std::size_t> labels;
};

// Node i in cluster c:
//   x_i(t) = base_c (1 + A_c sin(2 pi t / P_c + phi_c)) + u_i(t) + noise
// where u is an AR(1) disturbance driven by per-cluster shocks and diffused
// over the graph. Deterministic per seed.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Majority-label purity of the argmax assignment (lowest index wins ties).
double assignment_quality(const diff::Tensor& m, const std::vector<std::size_t>& labels);
double assignment_quality(const std::vector<std::size_t>& assigned, const std::vector<std::size_t>& labels);

// `node,cluster` CSV.
void save_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels);
std::vector<std::size_t> load_labels(const std::filesystem::path& path);

// Pearson correlation over entries observed in both series.
double pearson(const RawSeries& series, std::size_t a, std::size_t b);

}  // namespace ahstn::data
