#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "daunet/checkpoint.hpp"
#include "daunet/loss.hpp"
#include "daunet/metrics.hpp"
#include "daunet/model.hpp"
#include "daunet/phantom.hpp"

namespace daunet {

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 8;
  int epochs = 30;
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelConfig model;
  PhantomConfig data;
  bool augment = true;
  int n_train = 200;
  int n_val = 50;
  int n_test = 50;
  Hd95Mode hd95_mode = Hd95Mode::kDirectedMax;

  // 64x64 two-class phantoms, base width 16, 30 epochs of batch 8 at lr 1e-3.
  static TrainConfig desk();
  // 256x256, base width 64, 150 epochs of batch 12.
  static TrainConfig paper();

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double train_loss = 0.0;  // mean over the epoch's batches
  double val_dsc = 0.0;
};

struct TrainResult {
  Checkpoint best;  // highest validation DSC, earliest epoch on ties
  std::vector<EpochLog> log;
  std::vector<double> step_losses;
  double best_val_dsc = 0.0;
  int best_epoch = 0;
};

// Header `epoch,step,train_loss,val_dsc`.
std::string log_to_csv(const std::vector<EpochLog>& log);

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on the phantom training split and keeps the best validation
// checkpoint. Throws TrainingError on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Same loop on an explicit sample pool, validated on `val`.
TrainResult train_on(const TrainConfig& cfg, const std::vector<Sample>& train_pool,
                     const std::vector<Sample>& val, const EpochCallback& on_epoch = {});

struct EvalOptions {
  std::size_t batch_size = 16;
  bool distances = true;  // false: DSC only, distance columns skipped
  Hd95Mode hd95_mode = Hd95Mode::kDirectedMax;
};

// Eval-mode forward, logit > 0 masks, one row per (sample, class).
MetricsReport evaluate(Model& model, std::span<const Sample> samples,
                       std::span<const std::size_t> sample_ids, const EvalOptions& opts = {});

// Row-per-(sample, class) report for precomputed logits (N, C, H, W).
MetricsReport score_logits(const Tensor& logits, const Tensor& targets,
                           std::span<const std::size_t> sample_ids, const EvalOptions& opts = {});

// Eval-mode logits for a list of samples, computed in batches.
Tensor predict(Model& model, std::span<const Sample> samples, std::size_t batch_size = 16);

struct DataSplits {
  Splits indices;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

DataSplits build_data(const TrainConfig& cfg);

}  // namespace daunet
