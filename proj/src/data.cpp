#include "ahstn/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ahstn/errors.hpp"
#include "ahstn/hierarchy.hpp"
#include "ahstn/keyvalue.hpp"
#include "ahstn/random.hpp"
#include "csv.hpp"

namespace ahstn::data {

std::size_t RawSeries::missing_count() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), std::uint8_t{0}));
}

RawSeries load_series(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = csv::split(csv::trim(line));
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (csv::trim(header[i]) != "node_" + std::to_string(i)) {
      throw ParseError(csv::where(path, 1) + ": expected header column 'node_" + std::to_string(i) + "'");
    }
  }
  const auto n = header.size();
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::uint8_t>> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = csv::trim(line);
    // A single-column file writes a missing value as an empty line, so blank
    // lines are only skipped when there are several columns.
    if (trimmed.empty() && n > 1) continue;
    const auto cells = csv::split(trimmed);
    if (cells.size() != n) {
      throw ParseError(csv::where(path, line_no) + ": ragged row (" + std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(n) + ")");
    }
    std::vector<double> row(n, 0.0);
    std::vector<std::uint8_t> obs(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (csv::trim(cells[i]).empty()) continue;
      row[i] = csv::parse_double(cells[i], path, line_no);
      obs[i] = 1;
    }
    rows.push_back(std::move(row));
    seen.push_back(std::move(obs));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");
  RawSeries s(n, rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      if (seen[t][i]) {
        s.set(i, t, rows[t][i]);
      } else {
        s.set_missing(i, t);
      }
    }
  }
  return s;
}

void save_series(const std::filesystem::path& path, const RawSeries& series) {
  auto out = csv::open_output(path);
  for (std::size_t i = 0; i < series.n_nodes; ++i) out << (i ? "," : "") << "node_" << i;
  out << '\n';
  for (std::size_t t = 0; t < series.length; ++t) {
    for (std::size_t i = 0; i < series.n_nodes; ++i) {
      if (i) out << ',';
      if (series.is_observed(i, t)) out << csv::format_double(series.value(i, t));
    }
    out << '\n';
  }
}

void SyntheticSpec::validate() const {
  if (n_clusters < 1 || nodes_per_cluster < 1) throw ParameterError("synthetic spec needs at least one node per cluster");
  if (length < 2) throw ParameterError("synthetic length must be at least 2");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError(std::string(name) + " must lie in [0, 1]");
  };
  prob(intra_density, "intra_density");
  prob(inter_density, "inter_density");
  prob(missing_rate, "missing_rate");
  if (!(period_min > 0.0 && period_max >= period_min)) throw ParameterError("periods must satisfy 0 < period_min <= period_max");
  if (!(amplitude_max >= amplitude_min && amplitude_min >= 0.0)) throw ParameterError("invalid amplitude range");
  if (!(noise_sigma >= 0.0 && shock_sigma >= 0.0)) throw ParameterError("noise levels must be nonnegative");
  if (!(bin_minutes > 0.0)) throw ParameterError("bin_minutes must be positive");
}

std::map<std::string, std::string> SyntheticSpec::to_map() const {
  using csv::format_double;
  return {
      {"n_clusters", std::to_string(n_clusters)},
      {"nodes_per_cluster", std::to_string(nodes_per_cluster)},
      {"length", std::to_string(length)},
      {"intra_density", format_double(intra_density)},
      {"inter_density", format_double(inter_density)},
      {"base_level", format_double(base_level)},
      {"base_spread", format_double(base_spread)},
      {"amplitude_min", format_double(amplitude_min)},
      {"amplitude_max", format_double(amplitude_max)},
      {"period_min", format_double(period_min)},
      {"period_max", format_double(period_max)},
      {"ar_coefficient", format_double(ar_coefficient)},
      {"diffusion", format_double(diffusion)},
      {"shock_sigma", format_double(shock_sigma)},
      {"noise_sigma", format_double(noise_sigma)},
      {"missing_rate", format_double(missing_rate)},
      {"bin_minutes", format_double(bin_minutes)},
      {"seed", std::to_string(seed)},
  };
}

SyntheticSpec synthetic_spec_from_map(const std::map<std::string, std::string>& values) {
  SyntheticSpec s;
  for (const auto& [key, value] : values) {
    const std::filesystem::path src = "synthetic spec key '" + key + "'";
    auto as_size = [&] {
      const auto v = csv::parse_int(value, src, 0);
      if (v < 0) throw ParseError("synthetic spec key '" + key + "' must be nonnegative");
      return static_cast<std::size_t>(v);
    };
    auto as_double = [&] { return csv::parse_double(value, src, 0); };
    if (key == "n_clusters") s.n_clusters = as_size();
    else if (key == "nodes_per_cluster") s.nodes_per_cluster = as_size();
    else if (key == "length") s.length = as_size();
    else if (key == "intra_density") s.intra_density = as_double();
    else if (key == "inter_density") s.inter_density = as_double();
    else if (key == "base_level") s.base_level = as_double();
    else if (key == "base_spread") s.base_spread = as_double();
    else if (key == "amplitude_min") s.amplitude_min = as_double();
    else if (key == "amplitude_max") s.amplitude_max = as_double();
    else if (key == "period_min") s.period_min = as_double();
    else if (key == "period_max") s.period_max = as_double();
    else if (key == "ar_coefficient") s.ar_coefficient = as_double();
    else if (key == "diffusion") s.diffusion = as_double();
    else if (key == "shock_sigma") s.shock_sigma = as_double();
    else if (key == "noise_sigma") s.noise_sigma = as_double();
    else if (key == "missing_rate") s.missing_rate = as_double();
    else if (key == "bin_minutes") s.bin_minutes = as_double();
    else if (key == "seed") s.seed = as_size();
    else throw ParseError("unknown synthetic spec key '" + key + "'");
  }
  s.validate();
  return s;
}

SyntheticSpec parse_synthetic_spec(const std::filesystem::path& path) {
  std::map<std::string, std::string> values;
  for (const auto& e : parse_key_value_file(path)) {
    if (!e.section.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(e.line) + ": sections are not used in synthetic specs");
    }
    values[e.key] = e.value;
  }
  return synthetic_spec_from_map(values);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto n = spec.n_nodes();
  const auto len = spec.length;
  SyntheticDataset ds;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = i / spec.nodes_per_cluster;

  Rng graph_rng(hash_name("synthetic.graph", spec.seed));
  ds.adjacency = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double p = ds.labels[i] == ds.labels[j] ? spec.intra_density : spec.inter_density;
      const double draw = graph_rng.uniform();
      const double weight = graph_rng.uniform(0.5, 1.0);
      if (draw < p) ds.adjacency(i, j) = ds.adjacency(j, i) = weight;
    }
  }
  std::size_t isolated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < n && !any; ++j) any = ds.adjacency(i, j) > 0.0;
    if (!any) ++isolated;
  }
  if (isolated > 0 && n > 1) warn("synthetic graph has " + std::to_string(isolated) + " isolated nodes");

  struct ClusterProfile {
    double base, amplitude, period, phase;
  };
  Rng param_rng(hash_name("synthetic.clusters", spec.seed));
  std::vector<ClusterProfile> profiles(spec.n_clusters);
  for (auto& p : profiles) {
    p.base = spec.base_level * (1.0 + param_rng.uniform(-spec.base_spread, spec.base_spread));
    p.amplitude = param_rng.uniform(spec.amplitude_min, spec.amplitude_max);
    p.period = param_rng.uniform(spec.period_min, spec.period_max);
    p.phase = param_rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  std::vector<double> row_weight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) row_weight[i] += ds.adjacency(i, j);

  Rng process_rng(hash_name("synthetic.process", spec.seed));
  Rng noise_rng(hash_name("synthetic.noise", spec.seed));
  Rng missing_rng(hash_name("synthetic.missing", spec.seed));
  ds.series = RawSeries(n, len);
  ds.series.bin_minutes = spec.bin_minutes;
  std::vector<double> u(n, 0.0), next(n, 0.0), shock(spec.n_clusters, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    for (auto& s : shock) s = spec.shock_sigma * process_rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      double coupling = 0.0;
      if (row_weight[i] > 0.0) {
        double neighbour = 0.0;
        for (std::size_t j = 0; j < n; ++j) neighbour += ds.adjacency(i, j) * u[j];
        coupling = spec.diffusion * (neighbour / row_weight[i] - u[i]);
      }
      next[i] = spec.ar_coefficient * u[i] + coupling + shock[ds.labels[i]];
    }
    u.swap(next);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = profiles[ds.labels[i]];
      const double periodic =
          p.base * (1.0 + p.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / p.period + p.phase));
      const double value = periodic + u[i] + spec.noise_sigma * noise_rng.normal();
      if (missing_rng.bernoulli(spec.missing_rate)) {
        ds.series.set_missing(i, t);
      } else {
        ds.series.set(i, t, value);
      }
    }
  }
  return ds;
}

double assignment_quality(const std::vector<std::size_t>& assigned, const std::vector<std::size_t>& labels) {
  if (assigned.size() != labels.size()) throw DimensionError("purity: labels must cover every node");
  if (labels.empty()) return 0.0;
  std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[assigned[i]][labels[i]];
  std::size_t majority_total = 0;
  for (const auto& [cluster, by_label] : counts) {
    std::size_t best = 0;
    for (const auto& [label, c] : by_label) best = std::max(best, c);
    majority_total += best;
  }
  return static_cast<double>(majority_total) / static_cast<double>(labels.size());
}

double assignment_quality(const diff::Tensor& m, const std::vector<std::size_t>& labels) {
  return assignment_quality(hierarchy::hard_assignment(m), labels);
}

void save_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels) {
  auto out = csv::open_output(path);
  out << "node,cluster\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
}

std::vector<std::size_t> load_labels(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || csv::trim(line) != "node,cluster") {
    throw ParseError(csv::where(path, 1) + ": expected header 'node,cluster'");
  }
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto cells = csv::split(csv::trim(line));
    if (cells.size() != 2) throw ParseError(csv::where(path, line_no) + ": expected 2 columns");
    const auto node = csv::parse_int(cells[0], path, line_no);
    const auto cluster = csv::parse_int(cells[1], path, line_no);
    if (node < 0 || cluster < 0) throw ParseError(csv::where(path, line_no) + ": negative id");
    entries.emplace_back(static_cast<std::size_t>(node), static_cast<std::size_t>(cluster));
  }
  std::vector<std::size_t> labels(entries.size());
  std::vector<bool> seen(entries.size(), false);
  for (const auto& [node, cluster] : entries) {
    if (node >= labels.size() || seen[node]) throw ParseError(path.string() + ": node ids must be 0..N-1, each once");
    labels[node] = cluster;
    seen[node] = true;
  }
  return labels;
}

double pearson(const RawSeries& series, std::size_t a, std::size_t b) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < series.length; ++t) {
    if (!series.is_observed(a, t) || !series.is_observed(b, t)) continue;
    const double x = series.value(a, t), y = series.value(b, t);
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
    ++n;
  }
  if (n < 2) return 0.0;
  const double dn = static_cast<double>(n);
  const double cov = sab / dn - (sa / dn) * (sb / dn);
  const double va = saa / dn - (sa / dn) * (sa / dn);
  const double vb = sbb / dn - (sb / dn) * (sb / dn);
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace ahstn::data
