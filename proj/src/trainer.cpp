#include "daunet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "daunet/adam.hpp"
#include "daunet/error.hpp"
#include "daunet/rng.hpp"

namespace daunet {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  // 1e-4 barely moves the small network within 30 epochs.
  c.lr = 1e-3;
  c.data.image_size = 64;
  c.data.num_fg_classes = 2;
  c.data.speckle = true;
  c.model.image_size = 64;
  c.model.num_classes = 2;
  c.model.base_channels = 16;
  c.model.use_deform_bottleneck = true;
  c.model.use_simam = true;
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c = desk();
  c.lr = 1e-4;
  c.batch_size = 12;
  c.epochs = 150;
  c.data.image_size = 256;
  c.model.image_size = 256;
  c.model.base_channels = 64;
  return c;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("split sizes must be >= 1");
  loss.validate();
  model.validate();
  data.validate();
  if (model.num_classes != data.num_fg_classes) {
    throw ConfigError("model.num_classes must equal data.num_fg_classes");
  }
  if (model.image_size != data.image_size) {
    throw ConfigError("model.image_size must equal data.image_size");
  }
  if (model.in_channels != 1) throw ConfigError("phantoms have one input channel");
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,step,train_loss,val_dsc\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%.17g,%.17g\n", e.epoch, e.step, e.train_loss,
                  e.val_dsc);
    out += buf;
  }
  return out;
}

DataSplits build_data(const TrainConfig& cfg) {
  cfg.validate();
  DataSplits d;
  d.indices = make_splits(static_cast<std::size_t>(cfg.n_train), static_cast<std::size_t>(cfg.n_val),
                          static_cast<std::size_t>(cfg.n_test));
  d.train = gen_phantoms(cfg.data, d.indices.train);
  d.val = gen_phantoms(cfg.data, d.indices.val);
  d.test = gen_phantoms(cfg.data, d.indices.test);
  return d;
}

Tensor predict(Model& model, std::span<const Sample> samples, std::size_t batch_size) {
  if (samples.empty()) throw ShapeError("predict: no samples");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  std::vector<double> all;
  Shape out_shape;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    Batch batch = make_batch(samples.subspan(b, e - b));
    Tensor logits = model.forward(batch.images);
    if (out_shape.empty()) out_shape = logits.shape();
    all.insert(all.end(), logits.data().begin(), logits.data().end());
  }
  model.set_training(was_training);
  out_shape[0] = samples.size();
  return Tensor::from_data(out_shape, std::move(all));
}

MetricsReport score_logits(const Tensor& logits, const Tensor& targets,
                           std::span<const std::size_t> sample_ids, const EvalOptions& opts) {
  if (logits.shape() != targets.shape() || logits.rank() != 4) {
    throw ShapeError("score_logits: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  }
  if (sample_ids.size() != logits.dim(0)) throw ShapeError("score_logits: one id per sample");
  MetricsReport report;
  const std::size_t classes = logits.dim(1);
  for (std::size_t n = 0; n < logits.dim(0); ++n) {
    for (std::size_t c = 0; c < classes; ++c) {
      const BinaryMask p = binarize(logits, n, c);
      const BinaryMask g = mask_from_target(targets, n, c);
      if (opts.distances) {
        report.rows.push_back(score_pair(p, g, sample_ids[n], c, opts.hd95_mode));
      } else {
        MetricsRow row;
        row.sample_id = sample_ids[n];
        row.cls = c;
        row.dsc = dsc(p, g);
        row.hd95 = row.asd = std::nan("");
        row.skipped = true;
        report.rows.push_back(row);
      }
    }
  }
  report.finalize(classes);
  return report;
}

MetricsReport evaluate(Model& model, std::span<const Sample> samples,
                       std::span<const std::size_t> sample_ids, const EvalOptions& opts) {
  Tensor logits = predict(model, samples, opts.batch_size);
  Batch targets = make_batch(samples);
  return score_logits(logits, targets.masks, sample_ids, opts);
}

TrainResult train_on(const TrainConfig& cfg, const std::vector<Sample>& train_pool,
                     const std::vector<Sample>& val, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_pool.empty() || val.empty()) throw ConfigError("train_on: empty training or validation set");
  Model model(cfg.model, cfg.seed);
  AdamState adam = AdamState::for_params(model.parameters());
  std::vector<std::size_t> val_ids(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) val_ids[i] = i;
  const EvalOptions val_opts{.batch_size = 16, .distances = false, .hd95_mode = cfg.hd95_mode};

  TrainResult result;
  result.best_val_dsc = -1.0;
  const std::size_t n = train_pool.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model.set_training(true);
    const auto order = epoch_order(cfg.seed, static_cast<std::size_t>(epoch), n);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += bs) {
      std::vector<Sample> picked;
      for (std::size_t i = b; i < std::min(n, b + bs); ++i) {
        const std::size_t pos = order[i];
        if (cfg.augment) {
          const std::uint64_t aug_seed =
              mix_seed(cfg.seed, "augment", static_cast<std::uint64_t>(epoch) * n + pos);
          picked.push_back(augment(train_pool[pos], aug_seed));
        } else {
          picked.push_back(train_pool[pos]);
        }
      }
      Batch batch = make_batch(std::span<const Sample>(picked));
      model.zero_grad();
      Tensor logits = model.forward(batch.images);
      Tensor loss = hybrid_loss(logits, batch.masks, cfg.loss);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batches) + ": " + std::to_string(value),
                            epoch, static_cast<int>(batches), value);
      }
      backward(loss);
      adam_step(model.parameters(), adam, cfg.lr);
      result.step_losses.push_back(value);
      loss_sum += value;
      ++batches;
      ++step;
    }
    const MetricsReport rep = evaluate(model, val, val_ids, val_opts);
    EpochLog entry{epoch, step, loss_sum / static_cast<double>(batches), rep.mean_dsc};
    result.log.push_back(entry);
    if (entry.val_dsc > result.best_val_dsc) {
      result.best_val_dsc = entry.val_dsc;
      result.best_epoch = epoch;
      result.best = make_checkpoint(model, &adam, epoch,
                                    {{"val_dsc", entry.val_dsc}, {"train_loss", entry.train_loss}});
    }
    if (on_epoch) on_epoch(entry);
  }
  if (cfg.epochs == 0) {
    result.best_val_dsc = 0.0;
    result.best = make_checkpoint(model, &adam, 0);
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  DataSplits data = build_data(cfg);
  return train_on(cfg, data.train, data.val, on_epoch);
}

}  // namespace daunet
