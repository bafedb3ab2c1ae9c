#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "daunet/adam.hpp"
#include "daunet/checkpoint.hpp"
#include "daunet/error.hpp"
#include "daunet/experiments.hpp"
#include "daunet/trainer.hpp"

using namespace daunet;

namespace {

TrainConfig tiny(bool deform = true) {
  TrainConfig c;
  c.lr = 1e-3;
  c.batch_size = 4;
  c.epochs = 2;
  c.seed = 3;
  c.data.image_size = 16;
  c.data.num_fg_classes = 1;
  c.model.image_size = 16;
  c.model.num_classes = 1;
  c.model.base_channels = 4;
  c.model.depth = 2;
  c.model.use_deform_bottleneck = deform;
  c.model.use_simam = deform;
  c.n_train = 8;
  c.n_val = 4;
  c.n_test = 4;
  return c;
}

NamedTensor leaf(const std::string& name, std::vector<double> v) {
  const Shape s{v.size()};
  return {name, Tensor::from_data(s, std::move(v), true)};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Adam, FirstStepMovesByLrTimesSign) {
  std::vector<NamedTensor> ps = {leaf("w", {1.0, -2.0, 0.5})};
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  std::copy(g.begin(), g.end(), ps[0].tensor.grad_accumulator().begin());
  AdamState st = AdamState::for_params(ps);
  adam_step(ps, st, 0.01);
  EXPECT_EQ(st.t, 1u);
  const std::vector<double> start = {1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double expect = start[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(ps[0].tensor.data()[i], expect, 1e-15);
  }
}

TEST(Adam, TwoStepRecurrence) {
  std::vector<NamedTensor> ps = {leaf("a", {0.7, -0.1}), leaf("b", {2.0})};
  AdamState st = AdamState::for_params(ps);
  const double grads[2][3] = {{0.5, -1.5, 2.0}, {-0.25, 0.75, 3.0}};
  long double p[3] = {0.7L, -0.1L, 2.0L}, m[3] = {}, v[3] = {};
  const long double b1 = 0.9L, b2 = 0.999L, lr = 0.05L;
  for (int t = 1; t <= 2; ++t) {
    for (auto& nt : ps) nt.tensor.zero_grad();
    ps[0].tensor.grad_accumulator()[0] = grads[t - 1][0];
    ps[0].tensor.grad_accumulator()[1] = grads[t - 1][1];
    ps[1].tensor.grad_accumulator()[0] = grads[t - 1][2];
    adam_step(ps, st, 0.05);
    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grads[t - 1][i];
      v[i] = b2 * v[i] + (1 - b2) * grads[t - 1][i] * grads[t - 1][i];
      const long double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + 1e-8L);
    }
  }
  EXPECT_NEAR(ps[0].tensor.data()[0], static_cast<double>(p[0]), 1e-12);
  EXPECT_NEAR(ps[0].tensor.data()[1], static_cast<double>(p[1]), 1e-12);
  EXPECT_NEAR(ps[1].tensor.data()[0], static_cast<double>(p[2]), 1e-12);
}

TEST(Adam, MissingGradientIsZeroAndShapesChecked) {
  std::vector<NamedTensor> ps = {leaf("w", {1.0, 2.0})};
  AdamState st = AdamState::for_params(ps);
  adam_step(ps, st, 0.1);
  EXPECT_EQ(ps[0].tensor.data()[0], 1.0);
  EXPECT_EQ(ps[0].tensor.data()[1], 2.0);
  std::vector<NamedTensor> other = {leaf("w", {1.0, 2.0, 3.0})};
  EXPECT_THROW(adam_step(other, st, 0.1), ShapeError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = tiny();
  c.lr = 0.0;
  c.epochs = 1;
  const TrainResult r = train(c);
  Model init(c.model, c.seed);
  const auto& params = init.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ASSERT_EQ(r.best.tensors[i].name, params[i].name);
    const auto a = r.best.tensors[i].tensor.data(), b = params[i].tensor.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << params[i].name;
  }
}

TEST(Train, OverfitsOneBatch) {
  TrainConfig c = tiny();
  c.lr = 1e-2;
  c.augment = false;
  c.epochs = 200;
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const auto pool = gen_phantoms(c.data, idx);
  const TrainResult r = train_on(c, pool, pool);
  ASSERT_EQ(r.step_losses.size(), 200u);
  const double best = *std::min_element(r.step_losses.begin(), r.step_losses.end());
  EXPECT_LT(best, 0.05);
  // Windowed means fall over training.
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) s += r.step_losses[i];
    return s / 20;
  };
  EXPECT_LT(window(180), 0.5 * window(0));
  EXPECT_GT(r.best_val_dsc, 0.9);
}

TEST(Train, DeterministicLogsAndCheckpoints) {
  const TrainConfig c = tiny();
  const TrainResult a = train(c), b = train(c);
  EXPECT_EQ(log_to_csv(a.log), log_to_csv(b.log));
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
  TrainConfig other = c;
  other.seed = 4;
  EXPECT_NE(log_to_csv(train(other).log), log_to_csv(a.log));
}

TEST(Train, AugmentToggleDoesNotChangeInit) {
  TrainConfig c = tiny();
  c.epochs = 0;
  const TrainResult a = train(c);
  c.augment = false;
  const TrainResult b = train(c);
  EXPECT_EQ(serialize_checkpoint(a.best), serialize_checkpoint(b.best));
}

TEST(Train, LogCsvFormat) {
  const std::string csv = log_to_csv({{1, 2, 0.5, 0.25}});
  EXPECT_EQ(csv, "epoch,step,train_loss,val_dsc\n1,2,0.5,0.25\n");
}

TEST(Train, NonFiniteLossRaisesTrainingError) {
  TrainConfig c = tiny();
  c.lr = 1e300;
  c.epochs = 3;
  try {
    train(c);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.epoch(), 1);
    EXPECT_FALSE(std::isfinite(e.loss()));
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig c = tiny();
  c.lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.model.num_classes = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.model.image_size = 32;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig::desk().validate());
  EXPECT_NO_THROW(TrainConfig::paper().validate());
}

TEST(Evaluate, OracleLogitsScorePerfectly) {
  PhantomConfig pc;
  pc.image_size = 16;
  pc.num_fg_classes = 2;
  const std::vector<std::size_t> idx = {5, 6, 7};
  const auto samples = gen_phantoms(pc, idx);
  const Batch b = make_batch(std::span<const Sample>(samples));
  // Logits +10 inside the mask, -10 outside.
  std::vector<double> z(b.masks.data().begin(), b.masks.data().end());
  for (double& v : z) v = v > 0.5 ? 10.0 : -10.0;
  const MetricsReport rep = score_logits(Tensor::from_data(b.masks.shape(), z), b.masks, idx);
  ASSERT_EQ(rep.rows.size(), 6u);
  EXPECT_EQ(rep.rows[0].sample_id, 5u);
  EXPECT_EQ(rep.mean_dsc, 1.0);
  EXPECT_EQ(rep.mean_hd95, 0.0);
  EXPECT_EQ(rep.mean_asd, 0.0);

  const MetricsReport bg = score_logits(Tensor::full(b.masks.shape(), -10.0), b.masks, idx);
  EXPECT_EQ(bg.mean_dsc, 0.0);
  EXPECT_EQ(bg.skipped, 6u);
  EXPECT_TRUE(std::isnan(bg.mean_hd95));
}

TEST(Evaluate, ModelReportHasRowPerSampleAndClass) {
  TrainConfig c = tiny();
  c.data.num_fg_classes = 2;
  c.model.num_classes = 2;
  const DataSplits d = build_data(c);
  EXPECT_EQ(d.train.size(), 8u);
  EXPECT_EQ(d.test.size(), 4u);
  Model m(c.model, 0);
  const MetricsReport rep = evaluate(m, d.test, d.indices.test);
  EXPECT_EQ(rep.rows.size(), 8u);
  EXPECT_EQ(rep.rows.back().sample_id, d.indices.test.back());
  const Tensor logits = predict(m, d.test, 3);
  EXPECT_EQ(logits.shape(), (Shape{4, 2, 16, 16}));
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const TrainResult r = train(tiny());
  ASSERT_TRUE(r.best.adam.has_value());
  const std::string p1 = temp_path("daunet_ck1.bin"), p2 = temp_path("daunet_ck2.bin");
  save_checkpoint(r.best, p1);
  const Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(a)), {}), bb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(ba, bb);
  EXPECT_EQ(ba.substr(0, 4), "DAUN");
  EXPECT_EQ(loaded.epoch, r.best.epoch);
  EXPECT_EQ(loaded.model, r.best.model);
  EXPECT_EQ(loaded.adam->t, r.best.adam->t);

  // Restored model predicts exactly like the in-memory checkpoint.
  Model m1 = restore_model(r.best), m2 = restore_model(loaded);
  const DataSplits d = build_data(tiny());
  const Tensor y1 = predict(m1, d.val), y2 = predict(m2, d.val);
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST(Checkpoint, CorruptionIsRejected) {
  TrainConfig c = tiny();
  c.epochs = 0;
  const std::string bytes = serialize_checkpoint(train(c).best);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 10)), FormatError);
  EXPECT_THROW(parse_checkpoint(bytes + "x"), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(parse_checkpoint(bad_version), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("daunet_does_not_exist.bin")), IoError);
}

TEST(Checkpoint, MismatchedModelIsRejected) {
  TrainConfig c = tiny();
  c.epochs = 0;
  const Checkpoint ck = train(c).best;
  ModelConfig wider = c.model;
  wider.base_channels = 8;
  Model m(wider, 0);
  try {
    load_into(m, ck);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("enc1.conv1.weight"), std::string::npos) << e.what();
  }
  ModelConfig plain = c.model;
  plain.use_deform_bottleneck = false;
  plain.use_simam = false;
  Model u(plain, 0);
  EXPECT_THROW(load_into(u, ck), FormatError);
}

TEST(Experiments, AblationAndRobustnessStructure) {
  TrainConfig c = tiny();
  c.epochs = 1;
  const AblationResult ab = run_ablation(c, {0});
  ASSERT_EQ(ab.rows.size(), 4u);
  EXPECT_EQ(ab.runs.size(), 4u);
  EXPECT_FALSE(ab.rows[0].bottleneck);
  EXPECT_TRUE(ab.rows[1].simam);
  EXPECT_EQ(ab.rows[0].params, ab.rows[1].params);
  EXPECT_EQ(ab.rows[2].params, ab.rows[3].params);
  EXPECT_LT(ab.rows[2].params, ab.rows[0].params);
  const std::string csv = ablation_to_csv(ab);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bottleneck,simam,dsc,hd95,asd,param");
  for (const auto& run : ab.runs) EXPECT_FALSE(run.result.best.adam.has_value());

  const DataSplits d = build_data(c);
  Model da = restore_model(ab.runs[3].result.best), un = restore_model(ab.runs[0].result.best);
  const auto dir = std::filesystem::temp_directory_path() / "daunet_rob";
  std::filesystem::create_directories(dir);
  const RobustnessResult rob = run_robustness(da, un, d.test, d.indices.test, dir.string());
  ASSERT_EQ(rob.rows.size(), 10u);
  EXPECT_EQ(rob.rows[0].condition, "clean");
  EXPECT_EQ(rob.rows[0].drop, 0.0);
  EXPECT_DOUBLE_EQ(rob.rows[0].mean_dsc, evaluate(da, d.test, d.indices.test).mean_dsc);
  double drops = 0.0;
  for (std::size_t i = 1; i < 5; ++i) drops += rob.rows[i].drop;
  EXPECT_DOUBLE_EQ(rob.mean_drop_daunet, drops / 4);
  EXPECT_EQ(rob.files.size(), 10u);
  for (const auto& f : rob.files) EXPECT_TRUE(std::filesystem::exists(f)) << f;
  const std::string rcsv = robustness_to_csv(rob);
  EXPECT_EQ(rcsv.substr(0, rcsv.find('\n')), "model,condition,mean_dsc,drop");
}
