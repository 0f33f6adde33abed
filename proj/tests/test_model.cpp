#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ahstn/errors.hpp"
#include "ahstn/gradcheck.hpp"
#include "ahstn/model.hpp"
#include "ahstn/ops.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ahstn;
using namespace ahstn::model;
using diff::Shape;
using diff::Tensor;

namespace {

Matrix random_graph(std::size_t n, std::uint64_t seed) {
  Matrix a(n, n);
  const auto u = oracle::random_values(n * n, seed, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    a(i, (i + 1) % n) = a((i + 1) % n, i) = 1.0;  // ring keeps it connected
    for (std::size_t j = i + 2; j < n; ++j)
      if (u[i * n + j] < 0.3) a(i, j) = a(j, i) = 0.5 + u[j * n + i];
  }
  return a;
}

ModelConfig tiny_config(Variant v = Variant::kFull) {
  ModelConfig c;
  c.temporal_channels = 4;
  c.graph_channels = 3;
  c.p_cluster = 1.0 / 3.0;
  c.variant = v;
  c.seed = 5;
  return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

void set_uniform_frozen(AHSTNModel& m) {
  auto* a = m.assignment();
  REQUIRE(a != nullptr);
  a->set_matrix(Matrix(a->n_nodes(), a->n_clusters(), 1.0 / static_cast<double>(a->n_clusters())));
  a->freeze();
}

}  // namespace

TEST_CASE("ModelConfig") {
  ModelConfig c;
  CHECK(c.final_steps() == 6);
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_map(c.to_map()) == c);

  c.kernel = 3;
  CHECK(c.final_steps() == 0);
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("too short"), ParameterError);
  c.input_steps = 13;
  CHECK(c.final_steps() == 1);
  CHECK_NOTHROW(c.validate());

  ModelConfig bad;
  bad.p_cluster = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = {};
  bad.alpha = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  CHECK_THROWS_AS(parse_variant("shallow"), ParameterError);
  CHECK(parse_variant("NO_SKIP") == Variant::kNoSkip);
  CHECK(parse_variant("no-hierarchy") == Variant::kNoHierarchy);
}

TEST_CASE("structure of the variants") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(10, 1));
  ModelConfig c;
  c.seed = 2;
  AHSTNModel full(c, g);
  CHECK(full.head_input_channels() == 192);
  CHECK(full.st_block_count() == 4);
  CHECK(full.n_clusters() == 1);

  c.variant = Variant::kNoSkip;
  AHSTNModel no_skip(c, g);
  CHECK(no_skip.head_input_channels() == 64);

  c.variant = Variant::kNoHierarchy;
  AHSTNModel no_h(c, g);
  CHECK(no_h.st_block_count() == 3);
  CHECK(no_h.assignment() == nullptr);
  CHECK(no_h.parameter_count() < full.parameter_count());
  for (const auto& e : no_h.census()) {
    CHECK(e.name.find("st_block4") == std::string::npos);
    CHECK(e.name.find("cluster_gcn") == std::string::npos);
  }
}

TEST_CASE("parameter census") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(9, 3));
  AHSTNModel a(tiny_config(), g), b(tiny_config(), g);
  const auto ca = a.census(), cb = b.census();
  REQUIRE(ca.size() == cb.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].name == cb[i].name);
    CHECK(ca[i].shape == cb[i].shape);
    std::size_t count = 1;
    for (auto d : ca[i].shape) count *= d;
    CHECK(ca[i].count == count);
    total += ca[i].count;
    CHECK(values(a.parameters()[i].tensor) == values(b.parameters()[i].tensor));
  }
  CHECK(total == a.parameter_count());
  CHECK(ca.front().name.rfind("st_block1.", 0) == 0);
  CHECK(ca.back().name == "head.linear2.bias");
}

TEST_CASE("forward shapes over random valid configs") {
  const auto g8 = graph::GraphSpec::from_adjacency(random_graph(8, 4));
  AHSTNModel m(tiny_config(), g8);
  CHECK(m.forward(oracle::random_tensor({2, 8, 12, 1}, 1, false), true).shape() == Shape{2, 8, 12});

  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c;
    c.kernel = 1 + gen() % 3;
    c.input_steps = 6 * (c.kernel - 1) + 1 + gen() % 4;
    c.horizon = 1 + gen() % 6;
    c.temporal_channels = 2 + gen() % 3;
    c.graph_channels = 1 + gen() % 3;
    c.p_cluster = 0.2 + 0.2 * static_cast<double>(gen() % 5);
    c.variant = static_cast<Variant>(gen() % 3);
    c.seed = gen();
    const std::size_t n = 3 + gen() % 5, b = 1 + gen() % 3;
    AHSTNModel model(c, graph::GraphSpec::from_adjacency(random_graph(n, trial)));
    const auto x = oracle::random_tensor({b, n, c.input_steps, 1}, trial, false);
    CHECK(model.forward(x, true).shape() == Shape{b, n, c.horizon});
    CHECK(model.forward(x, false).shape() == Shape{b, n, c.horizon});
  }
  CHECK_THROWS_AS(m.forward(Tensor::zeros({2, 8, 11, 1}), false), DimensionError);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({2, 7, 12, 1}), false), DimensionError);
}

TEST_CASE("node permutation equivariance with a uniform frozen assignment") {
  const std::size_t n = 7;
  const auto a = random_graph(n, 6);
  const std::vector<std::size_t> perm = {3, 0, 6, 1, 5, 2, 4};
  Matrix ap(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) ap(i, j) = a(perm[i], perm[j]);
  auto c = tiny_config();
  c.p_cluster = 0.3;
  AHSTNModel m1(c, graph::GraphSpec::from_adjacency(a));
  AHSTNModel m2(c, graph::GraphSpec::from_adjacency(ap));
  set_uniform_frozen(m1);
  set_uniform_frozen(m2);
  const auto x = oracle::random_tensor({2, n, 12, 1}, 8, false);
  std::vector<double> xp(x.numel());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < 12; ++t) xp[(b * n + i) * 12 + t] = x.data()[(b * n + perm[i]) * 12 + t];
  const auto y = m1.forward(x, false);
  const auto yp = m2.forward(Tensor({2, n, 12, 1}, xp), false);
  double worst = 0.0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < 12; ++h)
        worst = std::max(worst, std::abs(yp.data()[(b * n + i) * 12 + h] - y.data()[(b * n + perm[i]) * 12 + h]));
  CHECK(worst <= 1e-10);
}

TEST_CASE("the hierarchy merge is purely additive") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(6, 9));
  AHSTNModel full(tiny_config(), g);
  AHSTNModel no_h(tiny_config(Variant::kNoHierarchy), g);
  const auto x = oracle::random_tensor({3, 6, 12, 1}, 10, false);
  ForwardOptions zeroed;
  zeroed.zero_hierarchy = true;
  CHECK(oracle::max_abs_diff(full.forward(x, zeroed).data(), no_h.forward(x, false).data()) <= 1e-12);
  zeroed.training = true;
  zeroed.update_state = false;
  ForwardOptions plain;
  plain.training = true;
  plain.update_state = false;
  CHECK(oracle::max_abs_diff(full.forward(x, zeroed).data(), no_h.forward(x, plain).data()) <= 1e-12);
  CHECK(oracle::max_abs_diff(full.forward(x, plain).data(), no_h.forward(x, plain).data()) > 1e-6);
}

TEST_CASE("training state updates") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(6, 11));
  AHSTNModel m(tiny_config(), g);
  const auto x = oracle::random_tensor({2, 6, 12, 1}, 12, false);
  const auto before = m.state();

  ForwardOptions dry;
  dry.training = true;
  dry.update_state = false;
  m.forward(x, dry);
  CHECK(m.state().assignment->values == before.assignment->values);
  CHECK(m.state().batchnorm[0].running_mean == before.batchnorm[0].running_mean);

  m.forward(x, true);
  CHECK(m.state().assignment->values != before.assignment->values);
  CHECK(m.state().batchnorm[0].running_mean != before.batchnorm[0].running_mean);

  m.assignment()->freeze();
  const auto frozen = m.state().assignment->values;
  for (int i = 0; i < 5; ++i) m.forward(x, false);
  CHECK(m.state().assignment->values == frozen);
  CHECK_THROWS_AS(m.forward(x, true), StateError);
}

TEST_CASE("every parameter group receives gradient") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(6, 13));
  AHSTNModel m(tiny_config(), g);
  const auto x = oracle::random_tensor({4, 6, 12, 1}, 14, false);
  const auto target = oracle::random_tensor({4, 6, 12}, 15, false);
  diff::Tape tape;
  Tensor loss;
  {
    diff::TapeScope scope(tape);
    loss = diff::mean(diff::hadamard(diff::sub(m.forward(x, true), target), diff::sub(m.forward(x, true), target)));
  }
  tape.backward(loss);
  for (const auto& p : m.parameters()) {
    double norm = 0.0;
    if (p.tensor.has_grad())
      for (double v : p.tensor.grad()) norm += std::abs(v);
    INFO(p.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("end-to-end gradient against finite differences") {
  const auto g = graph::GraphSpec::from_adjacency(random_graph(6, 16));
  AHSTNModel m(tiny_config(), g);
  REQUIRE(m.n_clusters() == 2);
  const auto x = oracle::random_tensor({2, 6, 12, 1}, 17, false);
  const auto target = oracle::random_tensor({2, 6, 12}, 18, false);
  std::vector<Tensor> inputs;
  for (const auto& p : m.parameters()) inputs.push_back(p.tensor);
  ForwardOptions opts;
  opts.training = true;
  opts.update_state = false;
  diff::GradCheckOptions check;
  check.tol = 1e-4;
  const auto rep = diff::grad_check(
      [&] {
        const auto d = diff::sub(m.forward(x, opts), target);
        return diff::mean(diff::hadamard(d, d));
      },
      inputs, check);
  INFO(rep.worst);
  CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoints") {
  const auto dir = support::scratch_dir("model");
  const auto g = graph::GraphSpec::from_adjacency(random_graph(6, 19));
  AHSTNModel m(tiny_config(), g);
  const auto x = oracle::random_tensor({3, 6, 12, 1}, 20, false);
  m.forward(x, true);
  m.forward(oracle::random_tensor({3, 6, 12, 1}, 21, false), true);
  m.assignment()->freeze();
  const auto expected = values(m.forward(x, false));
  save_checkpoint(dir / "model.bin", m, {{"note", "a = b"}});

  const auto ck = read_checkpoint(dir / "model.bin");
  CHECK(ck.config == m.config());
  CHECK(ck.metadata.at("note") == "a = b");
  CHECK(ck.adjacency == g.adjacency());
  REQUIRE(ck.parameter_names.size() == m.parameters().size());
  for (std::size_t i = 0; i < ck.parameter_names.size(); ++i) CHECK(ck.parameter_names[i] == m.parameters()[i].name);
  auto restored = restore_model(ck);
  CHECK(restored.assignment()->frozen());
  CHECK(values(restored.forward(x, false)) == expected);

  SUBCASE("save then load again is byte-identical") {
    save_checkpoint(dir / "again.bin", restored, ck.metadata);
    std::ifstream a(dir / "model.bin", std::ios::binary), b(dir / "again.bin", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }

  SUBCASE("damaged files are rejected") {
    std::ifstream in(dir / "model.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::ofstream(dir / "magic.bin", std::ios::binary) << bad_magic;
    CHECK_THROWS_AS(read_checkpoint(dir / "magic.bin"), ParseError);
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(read_checkpoint(dir / "short.bin"), ParseError);
  }

  SUBCASE("load_state rejects a mismatched model") {
    AHSTNModel other(tiny_config(Variant::kNoHierarchy), g);
    CHECK_THROWS(other.load_state(m.state()));
  }
}
