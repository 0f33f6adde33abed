#include "ahstn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ahstn/errors.hpp"
#include "ahstn/ops.hpp"
#include "csv.hpp"

namespace ahstn::model {

using diff::Tensor;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoSkip:
      return "no-skip";
    case Variant::kNoHierarchy:
      return "no-hierarchy";
  }
  return "full";
}

Variant parse_variant(std::string_view text) {
  if (text == "full" || text == "FULL") return Variant::kFull;
  if (text == "no-skip" || text == "NO_SKIP") return Variant::kNoSkip;
  if (text == "no-hierarchy" || text == "NO_HIERARCHY") return Variant::kNoHierarchy;
  throw ParameterError("unknown variant '" + std::string(text) + "' (expected full, no-skip or no-hierarchy)");
}

std::size_t ModelConfig::final_steps() const {
  const auto shrink = 6 * (kernel - 1);
  return input_steps > shrink ? input_steps - shrink : 0;
}

void ModelConfig::validate() const {
  if (input_steps < 1 || horizon < 1) throw ParameterError("input_steps and horizon must be positive");
  if (kernel < 1) throw ParameterError("kernel must be positive");
  if (temporal_channels < 1 || graph_channels < 1) throw ParameterError("channel sizes must be positive");
  if (final_steps() < 1) {
    throw ParameterError("input_steps " + std::to_string(input_steps) + " too short for three stacked blocks with kernel " +
                         std::to_string(kernel) + " (need at least " + std::to_string(6 * (kernel - 1) + 1) + ")");
  }
  if (!(p_cluster > 0.0 && p_cluster <= 1.0)) throw ParameterError("p_cluster must lie in (0, 1]");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in [0, 1)");
  if (!(eps_pinv > 0.0)) throw ParameterError("eps_pinv must be positive");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"input_steps", std::to_string(input_steps)},
      {"horizon", std::to_string(horizon)},
      {"kernel", std::to_string(kernel)},
      {"temporal_channels", std::to_string(temporal_channels)},
      {"graph_channels", std::to_string(graph_channels)},
      {"p_cluster", csv::format_double(p_cluster)},
      {"tau", csv::format_double(tau)},
      {"alpha", csv::format_double(alpha)},
      {"eps_pinv", csv::format_double(eps_pinv)},
      {"variant", to_string(variant)},
      {"seed", std::to_string(seed)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  auto get = [&](const char* key) -> const std::string& {
    auto it = values.find(key);
    if (it == values.end()) throw ParseError(std::string("model config is missing '") + key + "'");
    return it->second;
  };
  auto as_size = [&](const char* key) { return static_cast<std::size_t>(csv::parse_int(get(key), key, 0)); };
  auto as_double = [&](const char* key) { return csv::parse_double(get(key), key, 0); };
  c.input_steps = as_size("input_steps");
  c.horizon = as_size("horizon");
  c.kernel = as_size("kernel");
  c.temporal_channels = as_size("temporal_channels");
  c.graph_channels = as_size("graph_channels");
  c.p_cluster = as_double("p_cluster");
  c.tau = as_double("tau");
  c.alpha = as_double("alpha");
  c.eps_pinv = as_double("eps_pinv");
  c.variant = parse_variant(get("variant"));
  c.seed = std::stoull(get("seed"));
  return c;
}

AHSTNModel::AHSTNModel(ModelConfig config, graph::GraphSpec graph)
    : config_(std::move(config)), graph_(std::move(graph)) {
  config_.validate();
  const auto n = graph_.n_nodes();
  if (n == 0) throw ParameterError("model needs a nonempty graph");
  const auto k = config_.kernel, ct = config_.temporal_channels, cg = config_.graph_channels;
  const auto seed = config_.seed;
  adjacency_ = Tensor({n, n}, graph_.adjacency().values);

  block1_ = nn::STBlock(k, 1, ct, cg, seed, "st_block1");
  block2_ = nn::STBlock(k, ct, ct, cg, seed, "st_block2");
  block3_ = nn::STBlock(k, ct, ct, cg, seed, "st_block3");
  block1_.collect(parameters_);
  block2_.collect(parameters_);
  if (has_hierarchy()) {
    const auto n_clusters = hierarchy::cluster_count(n, config_.p_cluster);
    cluster_weight_ = nn::glorot_uniform({config_.input_steps, n_clusters}, config_.input_steps, n_clusters, seed,
                                         "cluster_gcn.weight");
    parameters_.push_back({"cluster_gcn.weight", cluster_weight_});
    block4_.emplace(k, ct, ct, cg, seed, "st_block4");
    block4_->collect(parameters_);
    assignment_.emplace(n, n_clusters, config_.alpha, config_.tau, seed);
  }
  block3_.collect(parameters_);

  head_temporal_ = nn::GTCNLayer(config_.final_steps(), head_input_channels(), ct, seed, "head.gtcn");
  head_temporal_.collect(parameters_);
  head_w1_ = nn::glorot_uniform({ct, ct}, ct, ct, seed, "head.linear1.weight");
  head_b1_ = Tensor::zeros({ct}, true);
  head_w2_ = nn::glorot_uniform({ct, config_.horizon}, ct, config_.horizon, seed, "head.linear2.weight");
  head_b2_ = Tensor::zeros({config_.horizon}, true);
  parameters_.push_back({"head.linear1.weight", head_w1_});
  parameters_.push_back({"head.linear1.bias", head_b1_});
  parameters_.push_back({"head.linear2.weight", head_w2_});
  parameters_.push_back({"head.linear2.bias", head_b2_});
}

std::size_t AHSTNModel::head_input_channels() const {
  return config_.variant == Variant::kNoSkip ? config_.temporal_channels : 3 * config_.temporal_channels;
}

std::size_t AHSTNModel::n_clusters() const { return assignment_ ? assignment_->n_clusters() : 0; }

Tensor AHSTNModel::forward(const Tensor& x, bool training) {
  ForwardOptions options;
  options.training = training;
  return forward(x, options);
}

Tensor AHSTNModel::forward(const Tensor& x, const ForwardOptions& options) {
  const auto n = graph_.n_nodes();
  if (x.rank() != 4 || x.dim(1) != n || x.dim(2) != config_.input_steps || x.dim(3) != 1) {
    throw DimensionError("model input must be [B, " + std::to_string(n) + ", " +
                         std::to_string(config_.input_steps) + ", 1], got " + diff::to_string(x.shape()));
  }
  const bool training = options.training;
  const bool update = options.update_state;
  const auto b = x.dim(0);
  const Tensor& norm_adj = graph_.normalized_tensor();

  Tensor f1 = block1_.forward(x, norm_adj, training, update);
  Tensor f2 = block2_.forward(f1, norm_adj, training, update);
  Tensor merged = f2;
  if (has_hierarchy()) {
    Tensor m;
    if (training) {
      Tensor proposal = hierarchy::propose_assignment(x, norm_adj, cluster_weight_, config_.tau);
      m = assignment_->momentum_update(proposal, update);
    } else {
      m = assignment_->matrix();
    }
    auto pooled = hierarchy::downsample(f1, m, adjacency_);
    Tensor cluster_out = block4_->forward(pooled.features, pooled.graph.normalized, training, update);
    Tensor upsampled = hierarchy::upsample(cluster_out, m, config_.eps_pinv);
    if (!options.zero_hierarchy) merged = diff::add(f2, upsampled);
  }
  Tensor f3 = block3_.forward(merged, norm_adj, training, update);

  const auto t3 = f3.dim(2);
  Tensor final_features = f3;
  if (config_.variant != Variant::kNoSkip) {
    const std::vector<Tensor> parts = {diff::slice_time(f1, t3), diff::slice_time(f2, t3), f3};
    final_features = diff::concat_channels(parts);
  }
  const auto ct = config_.temporal_channels;
  Tensor h = head_temporal_.forward(final_features);  // [B, N, 1, C_t]
  h = diff::reshape(h, {b * n, ct});
  h = diff::relu(diff::add_bias(diff::matmul(h, head_w1_), head_b1_));
  h = diff::add_bias(diff::matmul(h, head_w2_), head_b2_);
  return diff::reshape(h, {b, n, config_.horizon});
}

std::vector<CensusEntry> AHSTNModel::census() const {
  std::vector<CensusEntry> out;
  for (const auto& p : parameters_) out.push_back({p.name, p.tensor.shape(), p.tensor.numel()});
  return out;
}

std::size_t AHSTNModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters_) total += p.tensor.numel();
  return total;
}

std::vector<diff::BatchNormState*> AHSTNModel::batchnorm_states() {
  std::vector<diff::BatchNormState*> out = {&block1_.bn_state(), &block2_.bn_state()};
  if (block4_) out.push_back(&block4_->bn_state());
  out.push_back(&block3_.bn_state());
  return out;
}

ModelState AHSTNModel::state() const {
  ModelState s;
  for (const auto& p : parameters_) s.parameters.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  if (assignment_) {
    const auto& m = assignment_->matrix();
    Matrix copy(m.dim(0), m.dim(1));
    copy.values.assign(m.data().begin(), m.data().end());
    s.assignment = std::move(copy);
  }
  auto* self = const_cast<AHSTNModel*>(this);
  for (auto* bn : self->batchnorm_states()) s.batchnorm.push_back(*bn);
  return s;
}

void AHSTNModel::load_state(const ModelState& state) {
  if (state.parameters.size() != parameters_.size()) {
    throw DimensionError("model state has " + std::to_string(state.parameters.size()) + " parameter tensors, expected " +
                         std::to_string(parameters_.size()));
  }
  for (std::size_t i = 0; i < parameters_.size(); ++i) {
    auto dst = parameters_[i].tensor.mutable_data();
    if (state.parameters[i].size() != dst.size()) {
      throw DimensionError("parameter " + parameters_[i].name + " has the wrong element count");
    }
    std::copy(state.parameters[i].begin(), state.parameters[i].end(), dst.begin());
  }
  if (assignment_) {
    if (!state.assignment) throw DimensionError("model state lacks the assignment matrix");
    assignment_->set_matrix(*state.assignment);
  }
  auto bns = batchnorm_states();
  if (state.batchnorm.size() != bns.size()) throw DimensionError("model state has the wrong number of batch norms");
  for (std::size_t i = 0; i < bns.size(); ++i) {
    if (state.batchnorm[i].running_mean.size() != bns[i]->running_mean.size()) {
      throw DimensionError("batch norm channel count mismatch");
    }
    *bns[i] = state.batchnorm[i];
  }
}

void AHSTNModel::zero_grad() {
  for (auto& p : parameters_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Checkpoint I/O. All integers and doubles are written little-endian.

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) throw ParseError(path_ + ": truncated checkpoint");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t n) {
    guard(n * 8);
    std::vector<double> out(n);
    for (auto& v : out) v = f64();
    return out;
  }
  std::string str() {
    const auto n = u64();
    guard(n);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  void guard(std::uint64_t n) {
    if (n > (1ULL << 34)) throw ParseError(path_ + ": corrupt checkpoint (implausible size)");
  }
  std::istream& in_;
  std::string path_;
};

std::string map_to_text(const std::map<std::string, std::string>& values) {
  std::ostringstream os;
  for (const auto& [k, v] : values) os << k << " = " << v << '\n';
  return os.str();
}

std::map<std::string, std::string> text_to_map(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AHSTNModel& model,
                     const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  Writer w(out);
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(map_to_text(model.config().to_map()));
  w.str(map_to_text(metadata));

  const auto& a = model.graph().adjacency();
  w.u64(a.rows);
  w.f64s(a.values);

  const auto& params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) w.u64(d);
    w.f64s(p.tensor.data());
  }

  const auto state = model.state();
  w.u8(state.assignment ? 1 : 0);
  if (state.assignment) {
    w.u64(state.assignment->rows);
    w.u64(state.assignment->cols);
    w.f64s(state.assignment->values);
  }
  w.u32(static_cast<std::uint32_t>(state.batchnorm.size()));
  for (const auto& bn : state.batchnorm) {
    w.u64(bn.running_mean.size());
    w.f64s(bn.running_mean);
    w.f64s(bn.running_var);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw ParseError(path.string() + ": not an AHSTN checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.config = ModelConfig::from_map(text_to_map(r.str()));
  cp.metadata = text_to_map(r.str());

  const auto n = r.u64();
  cp.adjacency = Matrix(n, n);
  cp.adjacency.values = r.f64s(n * n);

  const auto n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    cp.parameter_names.push_back(r.str());
    const auto rank = r.u32();
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) count *= r.u64();
    cp.state.parameters.push_back(r.f64s(count));
  }
  if (r.u8()) {
    const auto rows = r.u64(), cols = r.u64();
    Matrix m(rows, cols);
    m.values = r.f64s(rows * cols);
    cp.state.assignment = std::move(m);
  }
  const auto n_bn = r.u32();
  for (std::uint32_t i = 0; i < n_bn; ++i) {
    const auto c = r.u64();
    diff::BatchNormState bn(c);
    bn.running_mean = r.f64s(c);
    bn.running_var = r.f64s(c);
    cp.state.batchnorm.push_back(std::move(bn));
  }
  return cp;
}

AHSTNModel restore_model(const Checkpoint& checkpoint) {
  AHSTNModel model(checkpoint.config, graph::GraphSpec::from_adjacency(checkpoint.adjacency));
  const auto& params = model.parameters();
  if (checkpoint.parameter_names.size() != params.size()) {
    throw ParseError("checkpoint parameter census does not match its configuration");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (checkpoint.parameter_names[i] != params[i].name) {
      throw ParseError("checkpoint parameter '" + checkpoint.parameter_names[i] + "' where '" + params[i].name +
                       "' was expected");
    }
  }
  model.load_state(checkpoint.state);
  if (auto* a = model.assignment()) a->freeze();
  return model;
}

}  // namespace ahstn::model
