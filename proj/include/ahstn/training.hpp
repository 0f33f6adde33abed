#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ahstn/data.hpp"
#include "ahstn/errors.hpp"
#include "ahstn/model.hpp"
#include "ahstn/random.hpp"
#include "ahstn/tensor.hpp"

namespace ahstn::training {

// Z-score statistics fit on observed training entries.
struct Normalizer {
  double mean = 0.0;
  double std = 1.0;

  static Normalizer fit(std::span<const double> values, std::span<const std::uint8_t> observed);
  double normalize(double v) const { return (v - mean) / std; }
  double denormalize(double v) const { return v * std + mean; }
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  void validate() const;
};

// Splits `count` items into rounded train/val sizes and the remainder.
std::array<std::size_t, 3> split_sizes(std::size_t count, const SplitRatios& ratios);

// Sliding windows over one contiguous time segment.
struct WindowedDataset {
  std::size_t n_nodes = 0;
  std::size_t input_steps = 0;  // T
  std::size_t horizon = 0;      // H
  std::vector<std::size_t> starts;        // absolute time of each window's first input step
  std::vector<double> inputs;             // [count, N, T], normalized, missing -> 0
  std::vector<double> targets;            // [count, N, H], original units, missing -> 0
  std::vector<std::uint8_t> masks;        // [count, N, H], 1 = observed
  std::vector<double> last_observed;      // [count, N], most recent observed input (original units)
  Normalizer normalizer;

  std::size_t size() const { return starts.size(); }

  diff::Tensor input_batch(std::span<const std::size_t> indices) const;   // [B, N, T, 1]
  std::vector<double> target_batch(std::span<const std::size_t> indices) const;  // [B, N, H]
  std::vector<double> normalized_target_batch(std::span<const std::size_t> indices) const;
  std::vector<std::uint8_t> mask_batch(std::span<const std::size_t> indices) const;

  // Concatenation (used for the fine-tune phase on train + val).
  static WindowedDataset concat(const WindowedDataset& a, const WindowedDataset& b);
};

WindowedDataset make_segment_windows(const data::RawSeries& series, std::size_t begin, std::size_t end,
                                     std::size_t input_steps, std::size_t horizon, const Normalizer& normalizer);

struct DatasetSplits {
  WindowedDataset train, val, test;
  Normalizer normalizer;
  std::array<std::size_t, 3> segment_lengths{};  // time bins per split
};

// Chronological split of the timeline, then windowing inside each segment.
DatasetSplits make_windows(const data::RawSeries& series, std::size_t input_steps, std::size_t horizon,
                           const SplitRatios& ratios);

// Mean |pred - target| over observed entries. pred is [B, N, H].
diff::Tensor masked_mae_loss(const diff::Tensor& pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask);

struct Metrics {
  std::optional<double> mae, rmse, mape;  // MAPE in percent
};

// MAPE additionally skips entries with |target| < 1e-3.
Metrics metrics(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> mask);

struct HorizonReport {
  std::vector<std::size_t> steps;  // 1-based horizon steps
  std::vector<Metrics> per_step;
  Metrics average;                 // over all H steps
};

inline const std::vector<std::size_t> kReportSteps = {3, 6, 12};

// pred/target/mask: [B, N, H], original units.
HorizonReport horizon_report(std::span<const double> pred, std::span<const double> target,
                             std::span<const std::uint8_t> mask, std::size_t horizon,
                             const std::vector<std::size_t>& steps = kReportSteps);

// Denormalized forecasts for every window, in inference mode.
std::vector<double> predict_dataset(model::AHSTNModel& model, const WindowedDataset& dataset,
                                    std::size_t batch_size = 64);
HorizonReport evaluate(model::AHSTNModel& model, const WindowedDataset& dataset, std::size_t batch_size = 64);

// Per-node, per-time-of-day training mean.
class HistoricalAverage {
 public:
  HistoricalAverage(const data::RawSeries& series, std::size_t train_end, std::size_t bins_per_day);
  std::vector<double> predict(const WindowedDataset& dataset) const;

 private:
  std::size_t n_nodes_, bins_per_day_;
  std::vector<double> slot_mean_;  // [N, bins_per_day]
};

// Repeats the last observed input value for all H steps.
std::vector<double> last_value_predict(const WindowedDataset& dataset);

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<nn::NamedParameter> params, AdamConfig config = {});

  // One bias-corrected step using each parameter's accumulated gradient.
  // Throws NumericalError naming the parameter on a non-finite gradient.
  void step();
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::uint64_t step_count() const { return steps_; }
  std::size_t tracked_parameter_count() const;

 private:
  std::vector<nn::NamedParameter> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 0.002;
  double lr_decay = 0.99;
  std::size_t finetune_epochs = 3;
  std::uint64_t seed = 0;
};

// lr_0 * decay^epoch
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  std::string phase;  // "train" or "finetune"
  double lr = 0.0;
  double train_loss = 0.0;
  HorizonReport val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  HorizonReport final_val;
  HorizonReport test;
};

// Raised when the loss becomes non-finite; the model has already been rolled
// back to the last good state.
class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mean training loss of one epoch over shuffled mini-batches.
double train_epoch(model::AHSTNModel& model, Adam& optimizer, const WindowedDataset& dataset,
                   std::size_t batch_size, Rng& rng);

TrainResult train(model::AHSTNModel& model, const DatasetSplits& splits, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace ahstn::training
