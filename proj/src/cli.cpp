#include "ahstn/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ahstn/data.hpp"
#include "ahstn/errors.hpp"
#include "ahstn/graph.hpp"
#include "ahstn/hierarchy.hpp"
#include "csv.hpp"

namespace ahstn::cli {

namespace fs = std::filesystem;
using training::HorizonReport;
using training::Metrics;

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  model.seed = value;
  train.seed = value;
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  out["data.series"] = series.string();
  if (!edges.empty()) out["data.edges"] = edges.string();
  if (!distances.empty()) {
    out["data.distances"] = distances.string();
    out["data.threshold"] = csv::format_double(threshold);
  }
  if (!labels.empty()) out["data.labels"] = labels.string();
  out["data.train_ratio"] = csv::format_double(split.train);
  out["data.val_ratio"] = csv::format_double(split.val);
  out["data.test_ratio"] = csv::format_double(split.test);
  for (const auto& [k, v] : model.to_map()) out["model." + k] = v;
  out["train.epochs"] = std::to_string(train.epochs);
  out["train.batch_size"] = std::to_string(train.batch_size);
  out["train.learning_rate"] = csv::format_double(train.learning_rate);
  out["train.lr_decay"] = csv::format_double(train.lr_decay);
  out["train.finetune_epochs"] = std::to_string(train.finetune_epochs);
  out["run.seed"] = std::to_string(seed);
  out["run.out"] = this->out.string();
  return out;
}

namespace {

std::string where(const KeyValueEntry& e) { return "line " + std::to_string(e.line); }

double to_double(const KeyValueEntry& e) { return csv::parse_double(e.value, "config", e.line); }

std::size_t to_size(const KeyValueEntry& e) {
  const auto v = csv::parse_int(e.value, "config", e.line);
  if (v < 0) throw ParseError("config " + where(e) + ": '" + e.key + "' must be nonnegative");
  return static_cast<std::size_t>(v);
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

RunConfig run_config_from_entries(const std::vector<KeyValueEntry>& entries, const fs::path& base_dir) {
  RunConfig rc;
  std::set<std::string> seen;
  for (const auto& e : entries) {
    const auto full = e.section + "." + e.key;
    if (!seen.insert(full).second) throw ParseError("config " + where(e) + ": duplicate key '" + full + "'");
    if (e.section == "data") {
      if (e.key == "series") rc.series = resolve(base_dir, e.value);
      else if (e.key == "edges") rc.edges = resolve(base_dir, e.value);
      else if (e.key == "distances") rc.distances = resolve(base_dir, e.value);
      else if (e.key == "threshold") rc.threshold = to_double(e);
      else if (e.key == "labels") rc.labels = resolve(base_dir, e.value);
      else if (e.key == "train_ratio") rc.split.train = to_double(e);
      else if (e.key == "val_ratio") rc.split.val = to_double(e);
      else if (e.key == "test_ratio") rc.split.test = to_double(e);
      else throw ParseError("config " + where(e) + ": unknown key '" + full + "'");
    } else if (e.section == "model") {
      auto& m = rc.model;
      if (e.key == "input_steps") m.input_steps = to_size(e);
      else if (e.key == "horizon") m.horizon = to_size(e);
      else if (e.key == "kernel") m.kernel = to_size(e);
      else if (e.key == "temporal_channels") m.temporal_channels = to_size(e);
      else if (e.key == "graph_channels") m.graph_channels = to_size(e);
      else if (e.key == "p_cluster") m.p_cluster = to_double(e);
      else if (e.key == "tau") m.tau = to_double(e);
      else if (e.key == "alpha") m.alpha = to_double(e);
      else if (e.key == "eps_pinv") m.eps_pinv = to_double(e);
      else if (e.key == "variant") m.variant = model::parse_variant(e.value);
      else throw ParseError("config " + where(e) + ": unknown key '" + full + "'");
    } else if (e.section == "train") {
      auto& t = rc.train;
      if (e.key == "epochs") t.epochs = to_size(e);
      else if (e.key == "batch_size") t.batch_size = to_size(e);
      else if (e.key == "learning_rate") t.learning_rate = to_double(e);
      else if (e.key == "lr_decay") t.lr_decay = to_double(e);
      else if (e.key == "finetune_epochs") t.finetune_epochs = to_size(e);
      else throw ParseError("config " + where(e) + ": unknown key '" + full + "'");
    } else if (e.section == "run") {
      if (e.key == "seed") {
        rc.seed = static_cast<std::uint64_t>(csv::parse_int(e.value, "config", e.line));
      } else if (e.key == "out") {
        rc.out = resolve(base_dir, e.value);
      } else {
        throw ParseError("config " + where(e) + ": unknown key '" + full + "'");
      }
    } else {
      throw ParseError("config " + where(e) + ": unknown section '" + e.section + "' for key '" + e.key + "'");
    }
  }
  rc.apply_seed(rc.seed);
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_entries(parse_key_value_file(path), path.parent_path());
}

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  bool force = false;
  std::string variant;
  bool with_baselines = false;
  std::string checkpoint;
  std::string series;
  std::string labels;
  std::vector<double> ratios;
};

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) {
      throw UsageError("refusing to write into non-empty directory " + dir.string() + " (pass --force)");
    }
  }
  fs::create_directories(dir);
}

void write_manifest(const fs::path& path, const std::string& command, const std::map<std::string, std::string>& values) {
  auto out = csv::open_output(path);
  out << "command = " << command << '\n';
  for (const auto& [k, v] : values) out << k << " = " << v << '\n';
}

std::string cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

struct ReportRow {
  std::string model;
  std::string split;
  HorizonReport report;
};

// model,split,horizon,mae,rmse,mape with horizon = step number or "avg".
void write_report(const fs::path& path, const std::vector<ReportRow>& rows) {
  auto out = csv::open_output(path);
  out << "model,split,horizon,mae,rmse,mape\n";
  auto line = [&](const ReportRow& r, const std::string& h, const Metrics& m) {
    out << r.model << ',' << r.split << ',' << h << ',' << cell(m.mae) << ',' << cell(m.rmse) << ',' << cell(m.mape)
        << '\n';
  };
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.report.steps.size(); ++i) line(r, std::to_string(r.report.steps[i]), r.report.per_step[i]);
    line(r, "avg", r.report.average);
  }
}

void write_history(const fs::path& path, const std::vector<training::EpochRecord>& history) {
  auto out = csv::open_output(path);
  out << "epoch,phase,lr,train_loss,val_mae,val_rmse,val_mape\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << h.phase << ',' << csv::format_double(h.lr) << ',' << csv::format_double(h.train_loss)
        << ',' << cell(h.val.average.mae) << ',' << cell(h.val.average.rmse) << ',' << cell(h.val.average.mape)
        << '\n';
  }
}

// node,cluster,m_0..m_{N'-1}; header only for models without a hierarchy.
void write_clusters(const fs::path& path, const model::AHSTNModel& m) {
  auto out = csv::open_output(path);
  const auto* a = m.assignment();
  if (!a) {
    out << "node,cluster,max_prob\n";
    return;
  }
  const auto& mat = a->matrix();
  const auto hard = hierarchy::hard_assignment(mat);
  out << "node,cluster,max_prob";
  for (std::size_t c = 0; c < a->n_clusters(); ++c) out << ",m_" << c;
  out << '\n';
  const auto values = mat.data();
  for (std::size_t i = 0; i < a->n_nodes(); ++i) {
    out << i << ',' << hard[i] << ',' << csv::format_double(values[i * a->n_clusters() + hard[i]]);
    for (std::size_t c = 0; c < a->n_clusters(); ++c) out << ',' << csv::format_double(values[i * a->n_clusters() + c]);
    out << '\n';
  }
}

graph::GraphSpec load_graph(const RunConfig& rc, std::size_t n_nodes) {
  if (!rc.edges.empty() && !rc.distances.empty()) throw UsageError("set only one of data.edges and data.distances");
  if (!rc.edges.empty()) return graph::GraphSpec::from_adjacency(graph::read_edge_list(rc.edges, n_nodes));
  if (!rc.distances.empty()) {
    const auto dist = graph::read_distance_matrix(rc.distances);
    if (dist.rows != n_nodes) {
      throw DimensionError("node-count mismatch: distance matrix has " + std::to_string(dist.rows) +
                           " nodes, series has " + std::to_string(n_nodes));
    }
    return graph::build_gaussian_adjacency(dist, graph::default_sigma(dist), rc.threshold);
  }
  throw UsageError("config needs data.edges or data.distances");
}

std::size_t bins_per_day(const data::RawSeries& series) {
  const auto bins = std::llround(1440.0 / series.bin_minutes);
  return static_cast<std::size_t>(std::max<long long>(1, bins));
}

// Rebuilds splits with a stored normalizer so that evaluation matches training.
training::DatasetSplits rebuild_splits(const data::RawSeries& series, std::size_t t, std::size_t h,
                                       const training::SplitRatios& ratios, const training::Normalizer& norm) {
  training::DatasetSplits s;
  s.normalizer = norm;
  s.segment_lengths = training::split_sizes(series.length, ratios);
  const auto a = s.segment_lengths[0], b = a + s.segment_lengths[1];
  s.train = training::make_segment_windows(series, 0, a, t, h, norm);
  s.val = training::make_segment_windows(series, a, b, t, h, norm);
  s.test = training::make_segment_windows(series, b, series.length, t, h, norm);
  return s;
}

std::vector<ReportRow> baseline_rows(const data::RawSeries& series, const training::DatasetSplits& splits) {
  std::vector<ReportRow> rows;
  const training::HistoricalAverage ha(series, splits.segment_lengths[0], bins_per_day(series));
  for (const auto* name : {"val", "test"}) {
    const auto& ds = std::string(name) == "val" ? splits.val : splits.test;
    if (ds.size() == 0) continue;
    rows.push_back({"HA", name, training::horizon_report(ha.predict(ds), ds.targets, ds.masks, ds.horizon)});
    rows.push_back(
        {"last-value", name, training::horizon_report(training::last_value_predict(ds), ds.targets, ds.masks, ds.horizon)});
  }
  return rows;
}

RunConfig resolve_run_config(const Flags& f) {
  RunConfig rc;
  if (!f.config.empty()) rc = load_run_config(f.config);
  if (f.seed_opt && f.seed_opt->count()) rc.apply_seed(f.seed);
  if (!f.variant.empty()) rc.model.variant = model::parse_variant(f.variant);
  if (!f.out.empty()) rc.out = f.out;
  return rc;
}

struct TrainOutcome {
  training::TrainResult result;
  std::size_t n_clusters = 0;
};

TrainOutcome train_run(const RunConfig& rc, bool force, bool with_baselines) {
  if (rc.series.empty()) throw UsageError("config needs data.series");
  rc.split.validate();
  rc.model.validate();
  const auto series = data::load_series(rc.series);
  auto graph = load_graph(rc, series.n_nodes);
  auto splits = training::make_windows(series, rc.model.input_steps, rc.model.horizon, rc.split);
  if (splits.train.size() == 0) throw ParameterError("training split has no complete windows");
  model::AHSTNModel model(rc.model, std::move(graph));
  prepare_out_dir(rc.out, force);

  auto result = training::train(model, splits, rc.train, [](const training::EpochRecord& r) {
    std::cerr << r.phase << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss;
    if (r.val.average.mae) std::cerr << " val_mae " << *r.val.average.mae;
    std::cerr << '\n';
  });

  std::map<std::string, std::string> meta = {
      {"normalizer_mean", csv::format_double(splits.normalizer.mean)},
      {"normalizer_std", csv::format_double(splits.normalizer.std)},
      {"train_ratio", csv::format_double(rc.split.train)},
      {"val_ratio", csv::format_double(rc.split.val)},
      {"test_ratio", csv::format_double(rc.split.test)},
      {"series_length", std::to_string(series.length)},
      {"best_epoch", std::to_string(result.best_epoch)},
      {"best_val_mae", csv::format_double(result.best_val_mae)},
      {"final_val_mae", cell(result.final_val.average.mae)},
      {"test_mae", cell(result.test.average.mae)},
  };
  model::save_checkpoint(rc.out / "checkpoint.bin", model, meta);
  write_history(rc.out / "history.csv", result.history);

  std::vector<ReportRow> rows;
  if (splits.val.size() > 0) rows.push_back({"AHSTN", "val", result.final_val});
  if (splits.test.size() > 0) rows.push_back({"AHSTN", "test", result.test});
  if (with_baselines) {
    auto extra = baseline_rows(series, splits);
    rows.insert(rows.end(), extra.begin(), extra.end());
  }
  write_report(rc.out / "report.csv", rows);
  write_clusters(rc.out / "clusters.csv", model);

  auto manifest = rc.to_map();
  manifest["result.best_epoch"] = std::to_string(result.best_epoch);
  manifest["result.final_val_mae"] = cell(result.final_val.average.mae);
  manifest["result.test_mae"] = cell(result.test.average.mae);
  manifest["result.parameter_count"] = std::to_string(model.parameter_count());
  manifest["result.n_clusters"] = std::to_string(model.has_hierarchy() ? model.n_clusters() : 0);
  manifest["run.with_baselines"] = with_baselines ? "true" : "false";
  if (!rc.labels.empty() && model.assignment()) {
    const auto labels = data::load_labels(rc.labels);
    manifest["result.purity"] = csv::format_double(data::assignment_quality(model.assignment()->matrix(), labels));
  }
  write_manifest(rc.out / "manifest.txt", "train", manifest);
  return {std::move(result), model.has_hierarchy() ? model.n_clusters() : 0};
}

int cmd_synth(const Flags& f) {
  data::SyntheticSpec spec = f.config.empty() ? data::SyntheticSpec{} : data::parse_synthetic_spec(f.config);
  if (f.seed_opt && f.seed_opt->count()) spec.seed = f.seed;
  spec.validate();
  const fs::path out = f.out.empty() ? fs::path("synthetic") : fs::path(f.out);
  prepare_out_dir(out, f.force);
  const auto ds = data::generate_synthetic(spec);
  data::save_series(out / "series.csv", ds.series);
  graph::write_edge_list(out / "edges.csv", ds.adjacency);
  data::save_labels(out / "labels.csv", ds.labels);
  {
    auto cfg = csv::open_output(out / "train.cfg");
    cfg << "[data]\nseries = series.csv\nedges = edges.csv\nlabels = labels.csv\n";
  }
  auto manifest = spec.to_map();
  manifest["outputs"] = "series.csv edges.csv labels.csv train.cfg";
  write_manifest(out / "manifest.txt", "synth", manifest);
  std::cout << "wrote " << spec.n_nodes() << "-node dataset (" << spec.n_clusters << " clusters, " << spec.length
            << " steps) to " << out.string() << '\n';
  return kExitOk;
}

int cmd_train(const Flags& f) {
  if (f.config.empty()) throw UsageError("train needs --config");
  const auto rc = resolve_run_config(f);
  const auto outcome = train_run(rc, f.force, f.with_baselines);
  std::cout << "test MAE " << cell(outcome.result.test.average.mae) << ", best epoch " << outcome.result.best_epoch
            << ", outputs in " << rc.out.string() << '\n';
  return kExitOk;
}

struct LoadedCheckpoint {
  model::Checkpoint checkpoint;
  training::Normalizer normalizer;
  training::SplitRatios split;
};

LoadedCheckpoint load_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  LoadedCheckpoint lc{model::read_checkpoint(path), {}, {}};
  auto get = [&](const char* key) {
    auto it = lc.checkpoint.metadata.find(key);
    if (it == lc.checkpoint.metadata.end()) throw ParseError(path + ": checkpoint metadata lacks '" + key + "'");
    return csv::parse_double(it->second, path, 0);
  };
  lc.normalizer.mean = get("normalizer_mean");
  lc.normalizer.std = get("normalizer_std");
  lc.split = {get("train_ratio"), get("val_ratio"), get("test_ratio")};
  return lc;
}

fs::path series_path(const Flags& f) {
  if (!f.series.empty()) return f.series;
  if (!f.config.empty()) {
    const auto rc = load_run_config(f.config);
    if (!rc.series.empty()) return rc.series;
  }
  throw UsageError("--series (or --config with data.series) is required");
}

int cmd_evaluate(const Flags& f) {
  const auto lc = load_checkpoint(f.checkpoint);
  const auto series = data::load_series(series_path(f));
  const auto n = lc.checkpoint.adjacency.rows;
  if (series.n_nodes != n) {
    throw DimensionError("node-count mismatch: checkpoint has " + std::to_string(n) + " nodes, series has " +
                         std::to_string(series.n_nodes));
  }
  const auto& cfg = lc.checkpoint.config;
  const auto splits = rebuild_splits(series, cfg.input_steps, cfg.horizon, lc.split, lc.normalizer);
  if (splits.test.size() == 0) throw UsageError("test split has no complete windows");
  const fs::path out = f.out.empty() ? fs::path("evaluation") : fs::path(f.out);
  prepare_out_dir(out, f.force);
  auto m = model::restore_model(lc.checkpoint);

  std::vector<ReportRow> rows;
  if (splits.val.size() > 0) rows.push_back({"AHSTN", "val", training::evaluate(m, splits.val)});
  rows.push_back({"AHSTN", "test", training::evaluate(m, splits.test)});
  if (f.with_baselines) {
    auto extra = baseline_rows(series, splits);
    rows.insert(rows.end(), extra.begin(), extra.end());
  }
  write_report(out / "report.csv", rows);
  auto manifest = cfg.to_map();
  manifest["checkpoint"] = f.checkpoint;
  manifest["series"] = series_path(f).string();
  manifest["with_baselines"] = f.with_baselines ? "true" : "false";
  manifest["result.test_mae"] = cell(rows.back().split == "test" ? rows.back().report.average.mae : std::nullopt);
  for (const auto& r : rows) {
    if (r.model == "AHSTN") manifest["result." + r.split + "_mae"] = cell(r.report.average.mae);
  }
  write_manifest(out / "manifest.txt", "evaluate", manifest);
  for (const auto& r : rows) std::cout << r.model << ' ' << r.split << " MAE " << cell(r.report.average.mae) << '\n';
  return kExitOk;
}

int cmd_predict(const Flags& f) {
  const auto lc = load_checkpoint(f.checkpoint);
  if (f.series.empty()) throw UsageError("predict needs --series with exactly T rows");
  const auto window = data::load_series(f.series);
  const auto& cfg = lc.checkpoint.config;
  const auto n = lc.checkpoint.adjacency.rows;
  if (window.n_nodes != n) {
    throw DimensionError("node-count mismatch: checkpoint has " + std::to_string(n) + " nodes, window has " +
                         std::to_string(window.n_nodes));
  }
  if (window.length != cfg.input_steps) {
    throw UsageError("window has " + std::to_string(window.length) + " rows, the model needs exactly " +
                     std::to_string(cfg.input_steps));
  }
  const fs::path out = f.out.empty() ? fs::path("forecast") : fs::path(f.out);
  prepare_out_dir(out, f.force);

  auto m = model::restore_model(lc.checkpoint);
  std::vector<double> x(n * cfg.input_steps, 0.0);
  std::vector<bool> no_data(n, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < cfg.input_steps; ++t)
      if (window.is_observed(i, t)) {
        x[i * cfg.input_steps + t] = lc.normalizer.normalize(window.value(i, t));
        no_data[i] = false;
      }
  diff::Tensor pred;
  {
    diff::NoGradScope no_grad;
    pred = m.forward(diff::Tensor({1, n, cfg.input_steps, 1}, std::move(x)), false);
  }
  const auto p = pred.data();
  const bool any_warning = std::find(no_data.begin(), no_data.end(), true) != no_data.end();
  auto os = csv::open_output(out / "forecast.csv");
  os << "node";
  for (std::size_t h = 1; h <= cfg.horizon; ++h) os << ",h" << h;
  if (any_warning) os << ",warning";
  os << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    os << i;
    for (std::size_t h = 0; h < cfg.horizon; ++h) os << ',' << csv::format_double(lc.normalizer.denormalize(p[i * cfg.horizon + h]));
    if (any_warning) os << ',' << (no_data[i] ? "no_observed_input" : "");
    os << '\n';
  }
  if (any_warning) warn("some nodes had no observed input; their forecasts are flagged");
  auto manifest = cfg.to_map();
  manifest["checkpoint"] = f.checkpoint;
  manifest["window"] = f.series;
  write_manifest(out / "manifest.txt", "predict", manifest);
  return kExitOk;
}

int cmd_inspect(const Flags& f) {
  const auto lc = load_checkpoint(f.checkpoint);
  const fs::path out = f.out.empty() ? fs::path("clusters") : fs::path(f.out);
  prepare_out_dir(out, f.force);
  const auto m = model::restore_model(lc.checkpoint);
  if (!m.assignment()) throw UsageError("checkpoint variant " + model::to_string(m.config().variant) + " has no clusters");
  write_clusters(out / "clusters.csv", m);
  auto manifest = m.config().to_map();
  manifest["checkpoint"] = f.checkpoint;
  const auto hard = hierarchy::hard_assignment(m.assignment()->matrix());
  std::set<std::size_t> used(hard.begin(), hard.end());
  manifest["result.n_clusters"] = std::to_string(m.n_clusters());
  manifest["result.used_clusters"] = std::to_string(used.size());
  std::cout << m.n_clusters() << " clusters, " << used.size() << " used by argmax";
  if (!f.labels.empty()) {
    const double purity = data::assignment_quality(hard, data::load_labels(f.labels));
    manifest["labels"] = f.labels;
    manifest["result.purity"] = csv::format_double(purity);
    std::cout << ", purity " << purity;
  }
  std::cout << '\n';
  write_manifest(out / "manifest.txt", "inspect-clusters", manifest);
  return kExitOk;
}

int cmd_sweep(const Flags& f) {
  if (f.config.empty()) throw UsageError("sweep-pcluster needs --config");
  if (f.ratios.size() < 2) throw UsageError("sweep-pcluster needs at least two --ratios");
  const auto base = resolve_run_config(f);
  if (base.model.variant == model::Variant::kNoHierarchy) throw UsageError("sweep-pcluster needs a hierarchy variant");
  prepare_out_dir(base.out, f.force);
  auto summary = csv::open_output(base.out / "summary.csv");
  summary << "p_cluster,n_clusters,status,test_mae,test_rmse,test_mape,message\n";
  std::map<std::string, std::string> manifest = base.to_map();
  std::string list;
  for (const double ratio : f.ratios) {
    RunConfig rc = base;
    rc.model.p_cluster = ratio;
    rc.out = base.out / ("p_" + csv::format_double(ratio));
    list += (list.empty() ? "" : " ") + csv::format_double(ratio);
    summary << csv::format_double(ratio) << ',';
    try {
      const auto outcome = train_run(rc, true, f.with_baselines);
      const auto& avg = outcome.result.test.average;
      summary << outcome.n_clusters << ",ok," << cell(avg.mae) << ',' << cell(avg.rmse) << ',' << cell(avg.mape) << ",\n";
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      summary << ",failed,,,," << msg << '\n';
      std::cerr << "ratio " << ratio << " failed: " << e.what() << '\n';
    }
    summary.flush();
  }
  manifest["ratios"] = list;
  write_manifest(base.out / "manifest.txt", "sweep-pcluster", manifest);
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"AHSTN hierarchical spatio-temporal traffic forecaster"};
  app.require_subcommand(1);
  Flags f;

  auto shared = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Config file (key = value with [sections])");
    auto* s = sub->add_option("--seed", f.seed, "Seed override");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_flag("--force", f.force, "Overwrite a non-empty output directory");
    sub->add_option("--variant", f.variant, "full | no-skip | no-hierarchy");
    sub->add_flag("--with-baselines", f.with_baselines, "Also report HA and last-value baselines");
    return s;
  };
  std::map<CLI::App*, CLI::Option*> seeds;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic hierarchical traffic dataset");
  seeds[synth] = shared(synth);
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, history, report, clusters");
  seeds[train] = shared(train);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a series");
  seeds[evaluate] = shared(evaluate);
  evaluate->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--series", f.series, "Series CSV");
  auto* predict = app.add_subcommand("predict", "Forecast H steps from a T-row window");
  seeds[predict] = shared(predict);
  predict->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  predict->add_option("--series", f.series, "Window CSV with exactly T rows")->required();
  auto* inspect = app.add_subcommand("inspect-clusters", "Export the frozen assignment of a checkpoint");
  seeds[inspect] = shared(inspect);
  inspect->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  inspect->add_option("--labels", f.labels, "Ground-truth labels CSV for purity");
  auto* sweep = app.add_subcommand("sweep-pcluster", "Train one model per clustering ratio");
  seeds[sweep] = shared(sweep);
  sweep->add_option("--ratios", f.ratios, "Clustering ratios, comma separated")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (auto* sub : app.get_subcommands()) f.seed_opt = seeds.at(sub);
    if (*synth) return cmd_synth(f);
    if (*train) return cmd_train(f);
    if (*evaluate) return cmd_evaluate(f);
    if (*predict) return cmd_predict(f);
    if (*inspect) return cmd_inspect(f);
    if (*sweep) return cmd_sweep(f);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  copy.insert(copy.begin(), "ahstn");
  std::vector<char*> argv;
  for (auto& s : copy) argv.push_back(s.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(copy.size()), argv.data());
}

}  // namespace ahstn::cli
