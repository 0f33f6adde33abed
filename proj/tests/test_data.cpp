#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "ahstn/data.hpp"
#include "ahstn/errors.hpp"
#include "ahstn/graph.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ahstn;
using namespace ahstn::data;
using diff::Tensor;

namespace {

const std::filesystem::path& scratch() {
  static const auto dir = support::scratch_dir("data");
  return dir;
}

std::filesystem::path write_file(const std::string& name, const std::string& text) {
  const auto path = scratch() / name;
  std::ofstream(path) << text;
  return path;
}

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_clusters = 3;
  s.nodes_per_cluster = 4;
  s.length = 400;
  s.intra_density = 1.0;
  return s;
}

}  // namespace

TEST_CASE("load_series") {
  SUBCASE("one empty cell is the only missing entry") {
    const auto s = load_series(write_file("one_missing.csv", "node_0,node_1\n1.5,2\n,4\n5,6.25\n"));
    CHECK(s.n_nodes == 2);
    CHECK(s.length == 3);
    CHECK(s.missing_count() == 1);
    CHECK_FALSE(s.is_observed(0, 1));
    CHECK(s.value(0, 0) == 1.5);
    CHECK(s.value(1, 2) == 6.25);
  }

  SUBCASE("save then load is value-identical") {
    RawSeries s(3, 5);
    const auto v = oracle::random_values(15, 1, -100.0, 100.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t t = 0; t < 5; ++t) s.set(i, t, v[i * 5 + t]);
    s.set_missing(2, 4);
    s.set_missing(0, 0);
    const auto path = scratch() / "roundtrip.csv";
    save_series(path, s);
    const auto back = load_series(path);
    CHECK(back.values == s.values);
    CHECK(back.observed == s.observed);
  }

  SUBCASE("malformed files") {
    CHECK_THROWS_WITH(load_series(write_file("header_only.csv", "node_0,node_1\n")), doctest::Contains("no data rows"));
    CHECK_THROWS_WITH(load_series(write_file("ragged.csv", "node_0,node_1\n1,2\n3\n")), doctest::Contains(":3"));
    CHECK_THROWS_WITH(load_series(write_file("text.csv", "node_0,node_1\n1,2\n3,abc\n")), doctest::Contains(":3"));
    CHECK_THROWS_AS(load_series(write_file("bad_header.csv", "a,b\n1,2\n")), ParseError);
    CHECK_THROWS_WITH_AS(load_series(scratch() / "does_not_exist.csv"), doctest::Contains("cannot open"), ParseError);
  }
}

TEST_CASE("generate_synthetic") {
  SUBCASE("bit-reproducible per seed") {
    const auto a = generate_synthetic(small_spec());
    const auto b = generate_synthetic(small_spec());
    CHECK(a.series.values == b.series.values);
    CHECK(a.series.observed == b.series.observed);
    CHECK(a.adjacency == b.adjacency);
    auto other = small_spec();
    other.seed = 8;
    CHECK(generate_synthetic(other).series.values != a.series.values);
  }

  SUBCASE("labels partition the nodes and the graph is valid") {
    const auto ds = generate_synthetic(SyntheticSpec{});
    CHECK(ds.series.n_nodes == 64);
    CHECK(ds.series.length == 5000);
    std::vector<std::size_t> sizes(8, 0);
    for (auto l : ds.labels) ++sizes.at(l);
    for (auto c : sizes) CHECK(c == 8);
    CHECK_NOTHROW(graph::GraphSpec::from_adjacency(ds.adjacency));
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(ds.adjacency(i, i) == 0.0);
      for (std::size_t j = 0; j < 64; ++j) CHECK(ds.adjacency(i, j) == ds.adjacency(j, i));
    }
  }

  SUBCASE("noise-free single cluster gives identical nodes") {
    SyntheticSpec s;
    s.n_clusters = 1;
    s.nodes_per_cluster = 5;
    s.length = 300;
    s.noise_sigma = 0.0;
    s.missing_rate = 0.0;
    const auto ds = generate_synthetic(s);
    for (std::size_t i = 1; i < 5; ++i)
      for (std::size_t t = 0; t < 300; ++t) CHECK(ds.series.value(i, t) == doctest::Approx(ds.series.value(0, t)).epsilon(1e-12));
  }

  SUBCASE("within-cluster correlation exceeds cross-cluster correlation") {
    auto s = small_spec();
    s.n_clusters = 2;
    s.inter_density = 0.0;
    s.length = 2000;
    const auto ds = generate_synthetic(s);
    double within = 1.0, across = -1.0;
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t b = a + 1; b < 8; ++b) {
        const double r = pearson(ds.series, a, b);
        if (ds.labels[a] == ds.labels[b]) within = std::min(within, r);
        else across = std::max(across, r);
      }
    CHECK(within > across);
  }

  SUBCASE("missing fraction follows the configured rate") {
    SyntheticSpec s;
    s.length = 1000;
    s.missing_rate = 0.05;
    const auto ds = generate_synthetic(s);
    const double frac = static_cast<double>(ds.series.missing_count()) / (64.0 * 1000.0);
    CHECK(frac == doctest::Approx(0.05).epsilon(0.2));
  }

  SUBCASE("isolated nodes are reported") {
    support::WarningCapture cap;
    auto s = small_spec();
    s.intra_density = 0.0;
    s.inter_density = 0.0;
    generate_synthetic(s);
    REQUIRE(cap.messages.size() == 1);
    CHECK(cap.messages[0].find("isolated") != std::string::npos);
  }

  SUBCASE("invalid specs") {
    auto s = small_spec();
    s.n_clusters = 0;
    CHECK_THROWS_AS(generate_synthetic(s), ParameterError);
    s = small_spec();
    s.missing_rate = 1.5;
    CHECK_THROWS_AS(generate_synthetic(s), ParameterError);
  }
}

TEST_CASE("synthetic spec files") {
  const auto spec = parse_synthetic_spec(
      write_file("spec.txt", "# comment\nn_clusters = 4\nnodes_per_cluster = 3  # trailing\nnoise_sigma = 0.5\nseed = 11\n"));
  CHECK(spec.n_clusters == 4);
  CHECK(spec.nodes_per_cluster == 3);
  CHECK(spec.noise_sigma == 0.5);
  CHECK(spec.seed == 11);
  CHECK(spec.length == SyntheticSpec{}.length);
  CHECK(synthetic_spec_from_map(spec.to_map()).to_map() == spec.to_map());
  CHECK_THROWS_WITH(parse_synthetic_spec(write_file("bad_key.txt", "colour = red\n")), doctest::Contains("colour"));
  CHECK_THROWS_AS(parse_synthetic_spec(write_file("bad_value.txt", "length = many\n")), ParseError);
}

TEST_CASE("assignment_quality") {
  std::vector<std::size_t> labels(64);
  for (std::size_t i = 0; i < 64; ++i) labels[i] = i / 8;

  SUBCASE("one-hot assignment matching the labels") {
    std::vector<double> m(64 * 8, 0.0);
    for (std::size_t i = 0; i < 64; ++i) m[i * 8 + labels[i]] = 1.0;
    CHECK(assignment_quality(Tensor({64, 8}, m), labels) == 1.0);
  }

  SUBCASE("uniform rows collapse onto the first cluster") {
    std::vector<std::size_t> uneven = {0, 0, 0, 1, 1, 2};
    CHECK(assignment_quality(Tensor::full({6, 3}, 1.0 / 3.0), uneven) == doctest::Approx(3.0 / 6.0));
    CHECK(assignment_quality(Tensor::full({64, 8}, 0.125), labels) == doctest::Approx(8.0 / 64.0));
  }

  SUBCASE("invariant under column permutations") {
    const auto m = oracle::random_stochastic(64, 8, 3);
    const std::vector<std::size_t> perm = {3, 7, 0, 5, 1, 6, 2, 4};
    std::vector<double> mp(64 * 8);
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 8; ++j) mp[i * 8 + perm[j]] = m.data()[i * 8 + j];
    CHECK(assignment_quality(Tensor({64, 8}, mp), labels) == assignment_quality(m, labels));
  }

  SUBCASE("random hard assignments sit in the sanity band") {
    std::mt19937_64 gen(5);
    std::uniform_int_distribution<std::size_t> pick(0, 7);
    double total = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<std::size_t> assigned(64);
      for (auto& a : assigned) a = pick(gen);
      // Independent majority count for the same assignment.
      std::size_t majority = 0;
      for (std::size_t c = 0; c < 8; ++c) {
        std::size_t best = 0;
        for (std::size_t l = 0; l < 8; ++l) {
          std::size_t count = 0;
          for (std::size_t i = 0; i < 64; ++i) count += assigned[i] == c && labels[i] == l;
          best = std::max(best, count);
        }
        majority += best;
      }
      const double p = assignment_quality(assigned, labels);
      CHECK(p == doctest::Approx(majority / 64.0).epsilon(1e-15));
      total += p;
    }
    const double mean = total / 1000.0;
    CHECK(mean >= 0.2);
    CHECK(mean <= 0.35);
  }

  SUBCASE("labels must cover every node") {
    CHECK_THROWS_AS(assignment_quality(std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{0}), DimensionError);
  }
}

TEST_CASE("label files roundtrip") {
  const std::vector<std::size_t> labels = {2, 0, 1, 1, 0};
  const auto path = scratch() / "labels.csv";
  save_labels(path, labels);
  CHECK(load_labels(path) == labels);
  CHECK_THROWS_AS(load_labels(write_file("labels_bad.csv", "node,cluster\n0,x\n")), ParseError);
}

TEST_CASE("pearson") {
  RawSeries s(3, 4);
  const double a[] = {1, 2, 3, 4}, b[] = {2, 4, 6, 8}, c[] = {4, 3, 2, 1};
  for (std::size_t t = 0; t < 4; ++t) {
    s.set(0, t, a[t]);
    s.set(1, t, b[t]);
    s.set(2, t, c[t]);
  }
  CHECK(pearson(s, 0, 1) == doctest::Approx(1.0));
  CHECK(pearson(s, 0, 2) == doctest::Approx(-1.0));
  s.set(1, 3, 1000.0);
  s.set_missing(1, 3);  // the stored value is never read
  CHECK(pearson(s, 0, 1) == doctest::Approx(1.0));
}
