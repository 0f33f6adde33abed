#include "ahstn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ahstn/ops.hpp"

namespace ahstn::training {

using diff::Tensor;

Normalizer Normalizer::fit(std::span<const double> values, std::span<const std::uint8_t> observed) {
  if (values.size() != observed.size()) throw DimensionError("normalizer: values and mask differ in length");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (observed[i]) {
      total += values[i];
      ++count;
    }
  }
  if (count == 0) throw ParameterError("normalizer: training split has no observed values");
  Normalizer n;
  n.mean = total / static_cast<double>(count);
  double sq = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (observed[i]) sq += (values[i] - n.mean) * (values[i] - n.mean);
  }
  n.std = std::sqrt(sq / static_cast<double>(count));
  if (!(n.std > 0.0)) throw ParameterError("normalizer: training split is constant (zero standard deviation)");
  return n;
}

void SplitRatios::validate() const {
  if (!(train > 0.0) || !(val >= 0.0) || !(test >= 0.0)) throw ParameterError("split ratios must be nonnegative, train > 0");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ParameterError("split ratios must sum to 1");
}

std::array<std::size_t, 3> split_sizes(std::size_t count, const SplitRatios& ratios) {
  ratios.validate();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * ratios.train));
  const auto n_val = std::min(count - std::min(count, n_train),
                              static_cast<std::size_t>(std::llround(static_cast<double>(count) * ratios.val)));
  const auto used = std::min(count, n_train) + n_val;
  return {std::min(count, n_train), n_val, count - used};
}

Tensor WindowedDataset::input_batch(std::span<const std::size_t> indices) const {
  const auto per = n_nodes * input_steps;
  std::vector<double> values(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                values.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return Tensor({indices.size(), n_nodes, input_steps, 1}, std::move(values));
}

std::vector<double> WindowedDataset::target_batch(std::span<const std::size_t> indices) const {
  const auto per = n_nodes * horizon;
  std::vector<double> values(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                values.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return values;
}

std::vector<double> WindowedDataset::normalized_target_batch(std::span<const std::size_t> indices) const {
  auto values = target_batch(indices);
  for (double& v : values) v = normalizer.normalize(v);
  return values;
}

std::vector<std::uint8_t> WindowedDataset::mask_batch(std::span<const std::size_t> indices) const {
  const auto per = n_nodes * horizon;
  std::vector<std::uint8_t> values(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(masks.begin() + static_cast<std::ptrdiff_t>(indices[b] * per), per,
                values.begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return values;
}

WindowedDataset WindowedDataset::concat(const WindowedDataset& a, const WindowedDataset& b) {
  if (a.n_nodes != b.n_nodes || a.input_steps != b.input_steps || a.horizon != b.horizon) {
    throw DimensionError("cannot concatenate window sets of different shapes");
  }
  WindowedDataset out = a;
  out.starts.insert(out.starts.end(), b.starts.begin(), b.starts.end());
  out.inputs.insert(out.inputs.end(), b.inputs.begin(), b.inputs.end());
  out.targets.insert(out.targets.end(), b.targets.begin(), b.targets.end());
  out.masks.insert(out.masks.end(), b.masks.begin(), b.masks.end());
  out.last_observed.insert(out.last_observed.end(), b.last_observed.begin(), b.last_observed.end());
  return out;
}

WindowedDataset make_segment_windows(const data::RawSeries& series, std::size_t begin, std::size_t end,
                                     std::size_t input_steps, std::size_t horizon, const Normalizer& normalizer) {
  if (end > series.length || begin > end) throw DimensionError("window segment outside the series");
  WindowedDataset ds;
  ds.n_nodes = series.n_nodes;
  ds.input_steps = input_steps;
  ds.horizon = horizon;
  ds.normalizer = normalizer;
  const auto span = input_steps + horizon;
  if (end - begin < span) return ds;
  const auto count = end - begin - span + 1;
  const auto n = series.n_nodes;
  ds.starts.resize(count);
  ds.inputs.resize(count * n * input_steps);
  ds.targets.resize(count * n * horizon, 0.0);
  ds.masks.resize(count * n * horizon, 0);
  ds.last_observed.resize(count * n);
  for (std::size_t w = 0; w < count; ++w) {
    const auto s = begin + w;
    ds.starts[w] = s;
    for (std::size_t i = 0; i < n; ++i) {
      double last = normalizer.mean;
      for (std::size_t t = 0; t < input_steps; ++t) {
        const bool obs = series.is_observed(i, s + t);
        ds.inputs[(w * n + i) * input_steps + t] = obs ? normalizer.normalize(series.value(i, s + t)) : 0.0;
        if (obs) last = series.value(i, s + t);
      }
      ds.last_observed[w * n + i] = last;
      for (std::size_t h = 0; h < horizon; ++h) {
        const auto t = s + input_steps + h;
        if (series.is_observed(i, t)) {
          ds.targets[(w * n + i) * horizon + h] = series.value(i, t);
          ds.masks[(w * n + i) * horizon + h] = 1;
        }
      }
    }
  }
  return ds;
}

DatasetSplits make_windows(const data::RawSeries& series, std::size_t input_steps, std::size_t horizon,
                           const SplitRatios& ratios) {
  if (input_steps < 1 || horizon < 1) throw ParameterError("input_steps and horizon must be positive");
  if (series.length < input_steps + horizon) {
    throw ParameterError("series length " + std::to_string(series.length) + " is shorter than T + H = " +
                         std::to_string(input_steps + horizon));
  }
  DatasetSplits out;
  out.segment_lengths = split_sizes(series.length, ratios);
  const auto train_end = out.segment_lengths[0];
  const auto val_end = train_end + out.segment_lengths[1];

  // Statistics come from the training segment only.
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  for (std::size_t i = 0; i < series.n_nodes; ++i) {
    for (std::size_t t = 0; t < train_end; ++t) {
      values.push_back(series.value(i, t));
      observed.push_back(series.is_observed(i, t) ? 1 : 0);
    }
  }
  out.normalizer = Normalizer::fit(values, observed);
  out.train = make_segment_windows(series, 0, train_end, input_steps, horizon, out.normalizer);
  out.val = make_segment_windows(series, train_end, val_end, input_steps, horizon, out.normalizer);
  out.test = make_segment_windows(series, val_end, series.length, input_steps, horizon, out.normalizer);
  return out;
}

Tensor masked_mae_loss(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  if (pred.numel() != target.size() || pred.numel() != mask.size()) {
    throw DimensionError("masked_mae_loss: prediction " + diff::to_string(pred.shape()) + " vs " +
                         std::to_string(target.size()) + " targets");
  }
  const auto p = pred.data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!mask[i]) continue;
    total += std::abs(p[i] - target[i]);
    ++count;
  }
  if (count == 0) throw ParameterError("masked_mae_loss: every entry is masked");
  Tensor out({1}, {total / static_cast<double>(count)});
  if (diff::should_record({&pred})) {
    out.set_requires_grad(true);
    std::vector<double> tgt(target.begin(), target.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    diff::active_tape()->record(out, [pred, out, tgt = std::move(tgt), msk = std::move(msk), count]() mutable {
      const double g = out.grad()[0] / static_cast<double>(count);
      const auto p = pred.data();
      auto d = pred.grad_buffer();
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!msk[i]) continue;
        const double diff = p[i] - tgt[i];
        if (diff > 0.0) d[i] += g;
        else if (diff < 0.0) d[i] -= g;
      }
    });
  }
  return out;
}

Metrics metrics(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size() || pred.size() != mask.size()) throw DimensionError("metrics: length mismatch");
  double abs_total = 0.0, sq_total = 0.0, pct_total = 0.0;
  std::size_t count = 0, pct_count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double e = pred[i] - target[i];
    abs_total += std::abs(e);
    sq_total += e * e;
    ++count;
    if (std::abs(target[i]) >= 1e-3) {
      pct_total += std::abs(e) / std::abs(target[i]);
      ++pct_count;
    }
  }
  Metrics m;
  if (count > 0) {
    m.mae = abs_total / static_cast<double>(count);
    m.rmse = std::sqrt(sq_total / static_cast<double>(count));
  }
  if (pct_count > 0) m.mape = 100.0 * pct_total / static_cast<double>(pct_count);
  return m;
}

HorizonReport horizon_report(std::span<const double> pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask, std::size_t horizon,
                             const std::vector<std::size_t>& steps) {
  if (horizon == 0 || pred.size() % horizon != 0) throw DimensionError("horizon_report: size is not a multiple of H");
  HorizonReport report;
  const auto rows = pred.size() / horizon;
  for (auto step : steps) {
    if (step < 1 || step > horizon) continue;
    std::vector<double> p(rows), t(rows);
    std::vector<std::uint8_t> m(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      p[r] = pred[r * horizon + step - 1];
      t[r] = target[r * horizon + step - 1];
      m[r] = mask[r * horizon + step - 1];
    }
    report.steps.push_back(step);
    report.per_step.push_back(metrics(p, t, m));
  }
  report.average = metrics(pred, target, mask);
  return report;
}

std::vector<double> predict_dataset(model::AHSTNModel& model, const WindowedDataset& dataset, std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  diff::NoGradScope no_grad;
  const auto per = dataset.n_nodes * dataset.horizon;
  std::vector<double> out(dataset.size() * per);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor pred = model.forward(dataset.input_batch(idx), false);
    const auto p = pred.data();
    for (std::size_t i = 0; i < p.size(); ++i) out[start * per + i] = dataset.normalizer.denormalize(p[i]);
  }
  return out;
}

HorizonReport evaluate(model::AHSTNModel& model, const WindowedDataset& dataset, std::size_t batch_size) {
  const auto pred = predict_dataset(model, dataset, batch_size);
  return horizon_report(pred, dataset.targets, dataset.masks, dataset.horizon);
}

HistoricalAverage::HistoricalAverage(const data::RawSeries& series, std::size_t train_end, std::size_t bins_per_day)
    : n_nodes_(series.n_nodes), bins_per_day_(bins_per_day), slot_mean_(series.n_nodes * bins_per_day, 0.0) {
  if (bins_per_day == 0) throw ParameterError("bins_per_day must be positive");
  std::vector<std::size_t> counts(slot_mean_.size(), 0);
  for (std::size_t i = 0; i < n_nodes_; ++i) {
    double node_total = 0.0;
    std::size_t node_count = 0;
    for (std::size_t t = 0; t < std::min(train_end, series.length); ++t) {
      if (!series.is_observed(i, t)) continue;
      slot_mean_[i * bins_per_day + t % bins_per_day] += series.value(i, t);
      ++counts[i * bins_per_day + t % bins_per_day];
      node_total += series.value(i, t);
      ++node_count;
    }
    const double node_mean = node_count ? node_total / static_cast<double>(node_count) : 0.0;
    for (std::size_t s = 0; s < bins_per_day; ++s) {
      auto& v = slot_mean_[i * bins_per_day + s];
      v = counts[i * bins_per_day + s] ? v / static_cast<double>(counts[i * bins_per_day + s]) : node_mean;
    }
  }
}

std::vector<double> HistoricalAverage::predict(const WindowedDataset& dataset) const {
  if (dataset.n_nodes != n_nodes_) throw DimensionError("historical average: node count mismatch");
  const auto n = dataset.n_nodes, h = dataset.horizon;
  std::vector<double> out(dataset.size() * n * h);
  for (std::size_t w = 0; w < dataset.size(); ++w)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < h; ++k) {
        const auto t = dataset.starts[w] + dataset.input_steps + k;
        out[(w * n + i) * h + k] = slot_mean_[i * bins_per_day_ + t % bins_per_day_];
      }
  return out;
}

std::vector<double> last_value_predict(const WindowedDataset& dataset) {
  const auto n = dataset.n_nodes, h = dataset.horizon;
  std::vector<double> out(dataset.size() * n * h);
  for (std::size_t w = 0; w < dataset.size(); ++w)
    for (std::size_t i = 0; i < n; ++i)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((w * n + i) * h), h, dataset.last_observed[w * n + i]);
  return out;
}

Adam::Adam(std::vector<nn::NamedParameter> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

std::size_t Adam::tracked_parameter_count() const {
  std::size_t total = 0;
  for (const auto& m : m_) total += m.size();
  return total;
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  return config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch));
}

double train_epoch(model::AHSTNModel& model, Adam& optimizer, const WindowedDataset& dataset, std::size_t batch_size,
                   Rng& rng) {
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  double weighted_loss = 0.0;
  std::size_t observed = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::span<const std::size_t> idx(order.data() + start, std::min(batch_size, order.size() - start));
    const auto mask = dataset.mask_batch(idx);
    const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    if (count == 0) continue;
    const auto target = dataset.normalized_target_batch(idx);
    model.zero_grad();
    diff::Tape tape;
    diff::TapeScope scope(tape);
    const Tensor pred = model.forward(dataset.input_batch(idx), true);
    const Tensor loss = masked_mae_loss(pred, target, mask);
    if (!std::isfinite(loss.item())) throw DivergenceError("training loss became non-finite");
    tape.backward(loss);
    optimizer.step();
    weighted_loss += loss.item() * static_cast<double>(count);
    observed += count;
  }
  return observed ? weighted_loss / static_cast<double>(observed) : 0.0;
}

TrainResult train(model::AHSTNModel& model, const DatasetSplits& splits, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  if (splits.train.size() == 0) throw ParameterError("training split has no complete windows");
  if (config.batch_size == 0) throw ParameterError("batch size must be positive");
  if (auto* a = model.assignment()) a->unfreeze();

  Rng rng(hash_name("train.shuffle", config.seed));
  TrainResult result;
  model::ModelState best = model.state();
  model::ModelState last_good = best;
  double best_score = std::numeric_limits<double>::infinity();

  auto run_epoch = [&](Adam& opt, const WindowedDataset& ds, std::size_t epoch, const char* phase) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = phase;
    rec.lr = learning_rate_at(config, epoch);
    opt.set_lr(rec.lr);
    try {
      rec.train_loss = train_epoch(model, opt, ds, config.batch_size, rng);
    } catch (const NumericalError& e) {
      model.load_state(last_good);
      if (auto* a = model.assignment()) a->freeze();
      throw DivergenceError(std::string(e.what()) + " during " + phase + " epoch " + std::to_string(epoch) +
                            "; model rolled back to the last good state");
    }
    last_good = model.state();
    if (splits.val.size() > 0) rec.val = evaluate(model, splits.val, config.batch_size);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    return rec;
  };

  Adam optimizer(model.parameters(), AdamConfig{config.learning_rate});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto rec = run_epoch(optimizer, splits.train, epoch, "train");
    const double score = rec.val.average.mae.value_or(rec.train_loss);
    if (score < best_score) {
      best_score = score;
      best = model.state();
      result.best_epoch = epoch;
    }
  }
  result.best_val_mae = best_score;
  model.load_state(best);
  last_good = best;

  if (config.finetune_epochs > 0) {
    const auto combined = WindowedDataset::concat(splits.train, splits.val);
    Adam finetune(model.parameters(), AdamConfig{config.learning_rate});
    for (std::size_t k = 0; k < config.finetune_epochs; ++k) run_epoch(finetune, combined, config.epochs + k, "finetune");
  }

  if (auto* a = model.assignment()) a->freeze();
  if (splits.val.size() > 0) result.final_val = evaluate(model, splits.val, config.batch_size);
  if (splits.test.size() > 0) result.test = evaluate(model, splits.test, config.batch_size);
  return result;
}

}  // namespace ahstn::training
