#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ahstn/errors.hpp"
#include "ahstn/gradcheck.hpp"
#include "ahstn/graph.hpp"
#include "ahstn/ops.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ahstn;
using namespace ahstn::graph;
using diff::Shape;
using diff::Tensor;
using support::WarningCapture;

namespace {

Matrix random_adjacency(std::size_t n, std::uint64_t seed, double density = 0.5) {
  const auto u = oracle::random_values(n * n, seed, 0.0, 1.0);
  const auto w = oracle::random_values(n * n, seed + 1, 0.2, 2.0);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (u[i * n + j] < density) a(i, j) = a(j, i) = w[i * n + j];
  return a;
}

const std::filesystem::path& scratch() {
  static const auto dir = support::scratch_dir("graph");
  return dir;
}

std::filesystem::path temp_file(const std::string& name) { return scratch() / name; }

}  // namespace

TEST_CASE("normalize examples") {
  Matrix two(2, 2);
  two(0, 1) = two(1, 0) = 1.0;
  const auto n2 = normalize(two);
  for (double v : n2.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(normalize(Matrix(4, 4)) == Matrix::identity(4));

  Matrix star(3, 3);
  star(0, 1) = star(1, 0) = star(0, 2) = star(2, 0) = 1.0;
  const auto ns = normalize(star);
  CHECK(ns(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(ns(0, 1) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-15));
  CHECK(ns(0, 2) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-15));
}

TEST_CASE("GraphSpec invariants") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_adjacency(7, 10 + seed);
    const auto g = GraphSpec::from_adjacency(a);
    const auto ref = oracle::normalized_adjacency(a.values, 7);
    CHECK(oracle::max_abs_diff(g.normalized().values, ref) <= 1e-12);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(g.normalized()(i, j) == g.normalized()(j, i));
        CHECK(g.normalized()(i, j) >= 0.0);
        CHECK(g.normalized()(i, j) <= 1.0);
      }
    // Recomputing from the stored adjacency is bit-identical.
    CHECK(normalize(g.adjacency()) == g.normalized());
  }

  Matrix asym(2, 2);
  asym(0, 1) = 1.0;
  CHECK_THROWS_AS(GraphSpec::from_adjacency(asym), ParameterError);
  Matrix diag(2, 2);
  diag(0, 0) = 1.0;
  CHECK_THROWS_AS(GraphSpec::from_adjacency(diag), ParameterError);
  Matrix neg(2, 2);
  neg(0, 1) = neg(1, 0) = -1.0;
  CHECK_THROWS_AS(GraphSpec::from_adjacency(neg), ParameterError);
  CHECK_THROWS_AS(GraphSpec::from_adjacency(Matrix(2, 3)), DimensionError);
}

TEST_CASE("gaussian adjacency") {
  Matrix d(3, 3);
  d(0, 1) = d(1, 0) = 0.0;
  d(0, 2) = d(2, 0) = 2.0;
  d(1, 2) = d(2, 1) = 100.0;
  const auto g = build_gaussian_adjacency(d, 2.0, 0.5);
  CHECK(g.adjacency()(0, 1) == 1.0);
  CHECK(g.adjacency()(1, 2) == 0.0);
  CHECK(g.adjacency()(0, 0) == 0.0);

  const auto g0 = build_gaussian_adjacency(d, 2.0, 0.0);
  CHECK(g0.adjacency()(0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(g0.adjacency()(0, 2) == doctest::Approx(0.367879).epsilon(1e-6));

  const auto g1 = build_gaussian_adjacency(d, 2.0, 0.1);
  CHECK(g1.adjacency()(1, 2) == 0.0);

  CHECK_THROWS_AS(build_gaussian_adjacency(d, 0.0), ParameterError);
  CHECK_THROWS_AS(build_gaussian_adjacency(d, -1.0), ParameterError);

  SUBCASE("default sigma is the std of off-diagonal distances") {
    std::vector<double> off = {0.0, 2.0, 100.0, 0.0, 2.0, 100.0};
    const double mean = std::accumulate(off.begin(), off.end(), 0.0) / 6.0;
    double var = 0.0;
    for (double v : off) var += (v - mean) * (v - mean);
    CHECK(default_sigma(d) == doctest::Approx(std::sqrt(var / 6.0)).epsilon(1e-14));
  }

  SUBCASE("disconnected graph warns, does not fail") {
    WarningCapture cap;
    Matrix far(3, 3, 1000.0);
    for (std::size_t i = 0; i < 3; ++i) far(i, i) = 0.0;
    const auto g2 = build_gaussian_adjacency(far, 1.0, 0.1);
    CHECK(g2.component_count() == 3);
    CHECK(cap.messages.size() == 1);
  }
}

TEST_CASE("gcn_forward") {
  SUBCASE("identity graph and weight, no activation") {
    const auto g = GraphSpec::from_adjacency(Matrix(3, 3));
    const auto x = oracle::random_tensor({3, 4, 2}, 1, false);
    const Tensor w({2, 2}, {1, 0, 0, 1});
    const auto y = gcn_forward(x, g, w, Activation::kNone);
    CHECK(oracle::max_abs_diff(y.data(), x.data()) == 0.0);
  }

  SUBCASE("symmetric 2-node graph with constant features") {
    Matrix a(2, 2);
    a(0, 1) = a(1, 0) = 1.0;
    const auto g = GraphSpec::from_adjacency(a);
    const auto y = gcn_forward(Tensor::full({2, 3, 2}, 0.7), g, oracle::random_tensor({2, 5}, 2, false),
                               Activation::kRelu);
    for (std::size_t k = 0; k < 15; ++k) CHECK(y.data()[k] == y.data()[15 + k]);
  }

  SUBCASE("random instance matches triple loop") {
    const auto a = random_adjacency(4, 3);
    const auto g = GraphSpec::from_adjacency(a);
    const auto x = oracle::random_tensor({4, 3, 2}, 4, false);
    const auto w = oracle::random_tensor({2, 5}, 5, false);
    const auto ahat = oracle::normalized_adjacency(a.values, 4);
    for (auto act : {Activation::kNone, Activation::kRelu, Activation::kSigmoid}) {
      const auto y = gcn_forward(x, g, w, act);
      REQUIRE(y.shape() == Shape{4, 3, 5});
      double worst = 0.0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t o = 0; o < 5; ++o) {
            double acc = 0.0;
            for (std::size_t j = 0; j < 4; ++j)
              for (std::size_t c = 0; c < 2; ++c)
                acc += ahat[i * 4 + j] * x.data()[(j * 3 + t) * 2 + c] * w.data()[c * 5 + o];
            if (act == Activation::kRelu) acc = std::max(acc, 0.0);
            if (act == Activation::kSigmoid) acc = oracle::sigmoid(acc);
            worst = std::max(worst, std::abs(acc - y.data()[(i * 3 + t) * 5 + o]));
          }
      CHECK(worst < 1e-14);
    }
  }

  SUBCASE("linear in x without activation") {
    const auto g = GraphSpec::from_adjacency(random_adjacency(5, 6));
    const auto w = oracle::random_tensor({3, 2}, 7, false);
    const auto x = oracle::random_tensor({5, 4, 3}, 8, false);
    const auto z = oracle::random_tensor({5, 4, 3}, 9, false);
    const double a = 1.7, b = -0.3;
    const auto lhs = gcn_forward(diff::add(diff::scale(x, a), diff::scale(z, b)), g, w, Activation::kNone);
    const auto rhs = diff::add(diff::scale(gcn_forward(x, g, w, Activation::kNone), a),
                               diff::scale(gcn_forward(z, g, w, Activation::kNone), b));
    CHECK(oracle::max_abs_diff(lhs.data(), rhs.data()) <= 1e-10);
  }

  SUBCASE("permutation equivariance") {
    const std::size_t n = 6;
    const auto a = random_adjacency(n, 11);
    const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    Matrix ap(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ap(i, j) = a(perm[i], perm[j]);
    const auto x = oracle::random_tensor({n, 2, 3}, 12, false);
    std::vector<double> xp(x.numel());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 6; ++k) xp[i * 6 + k] = x.data()[perm[i] * 6 + k];
    const auto w = oracle::random_tensor({3, 2}, 13, false);
    const auto y = gcn_forward(x, GraphSpec::from_adjacency(a), w, Activation::kRelu);
    const auto yp = gcn_forward(Tensor({n, 2, 3}, xp), GraphSpec::from_adjacency(ap), w, Activation::kRelu);
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < 4; ++k) worst = std::max(worst, std::abs(yp.data()[i * 4 + k] - y.data()[perm[i] * 4 + k]));
    // Summation order may differ after permuting, so allow roundoff.
    CHECK(worst <= 1e-14);
  }

  SUBCASE("node-count mismatch") {
    const auto g = GraphSpec::from_adjacency(Matrix(3, 3));
    CHECK_THROWS_AS(gcn_forward(Tensor::zeros({4, 2, 1}), g, Tensor::zeros({1, 1}), Activation::kNone), DimensionError);
    CHECK_THROWS_AS(gcn_forward(Tensor::zeros({3, 2, 2}), g, Tensor::zeros({1, 1}), Activation::kNone), DimensionError);
  }
}

TEST_CASE("normalize_adjacency is differentiable and matches normalize") {
  const auto a = random_adjacency(5, 21, 0.7);
  Tensor at({5, 5}, a.values, true);
  CHECK(oracle::max_abs_diff(normalize_adjacency(at).data(), normalize(a).values) <= 1e-15);
  const auto weights = oracle::random_tensor({5, 5}, 22, false);
  std::array<Tensor, 1> in = {at};
  const auto rep = diff::grad_check([&] { return diff::sum(diff::hadamard(normalize_adjacency(in[0]), weights)); }, in);
  CHECK(rep.max_rel_error <= 1e-5);
}

TEST_CASE("edge list and distance matrix files") {
  const auto a = random_adjacency(6, 31);
  const auto path = temp_file("edges.csv");
  write_edge_list(path, a);
  const auto back = read_edge_list(path, 6);
  CHECK(back == a);

  {
    std::ofstream out(temp_file("bad_header.csv"));
    out << "a,b,c\n0,1,1\n";
  }
  CHECK_THROWS_AS(read_edge_list(temp_file("bad_header.csv"), 3), ParseError);
  {
    std::ofstream out(temp_file("out_of_range.csv"));
    out << "src,dst,weight\n0,7,1\n";
  }
  CHECK_THROWS_AS(read_edge_list(temp_file("out_of_range.csv"), 3), ParseError);
  {
    std::ofstream out(temp_file("nonnumeric.csv"));
    out << "src,dst,weight\n0,1,abc\n";
  }
  CHECK_THROWS_WITH(read_edge_list(temp_file("nonnumeric.csv"), 3), doctest::Contains(":2"));

  {
    std::ofstream out(temp_file("dist.csv"));
    out << "0,1,2\n1,0,3\n2,3,0\n";
  }
  const auto d = read_distance_matrix(temp_file("dist.csv"));
  CHECK(d.rows == 3);
  CHECK(d(1, 2) == 3.0);
  {
    std::ofstream out(temp_file("ragged.csv"));
    out << "0,1\n1,0,3\n";
  }
  CHECK_THROWS_AS(read_distance_matrix(temp_file("ragged.csv")), ParseError);
}
