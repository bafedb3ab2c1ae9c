#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "daunet/cli.hpp"
#include "daunet/error.hpp"

using namespace daunet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "daunet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("daunet_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small enough to train in well under a second.
fs::path tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << R"({
  "train": {"lr": 0.001, "batch_size": 4, "epochs": 2, "seed": 1, "n_train": 8, "n_val": 4, "n_test": 4},
  "model": {"base_channels": 4, "depth": 2},
  "data": {"image_size": 16},
  "experiment.seeds": [0]
})";
  return p;
}

}  // namespace

TEST(Config, ProfileThenJsonThenEnvThenSet) {
  const cli::RunConfig d = cli::resolve_config("", {});
  EXPECT_EQ(d.train.model.base_channels, 16);
  EXPECT_DOUBLE_EQ(d.train.lr, 1e-3);

  const cli::RunConfig p = cli::resolve_config(R"({"profile": "paper"})", {});
  EXPECT_EQ(p.train.model.base_channels, 64);
  EXPECT_EQ(p.train.data.image_size, 256);
  EXPECT_EQ(p.train.model.image_size, 256);

  const std::string json = R"({"train": {"seed": 5, "lr": 0.01}, "model.use_simam": false})";
  const cli::RunConfig j = cli::resolve_config(json, {});
  EXPECT_EQ(j.train.seed, 5u);
  EXPECT_FALSE(j.train.model.use_simam);
  EXPECT_EQ(cli::resolve_config(json, {}, "9").train.seed, 9u);
  EXPECT_EQ(cli::resolve_config(json, {"train.seed=11"}, "9").train.seed, 11u);

  const cli::RunConfig s = cli::resolve_config("", {"loss.bce_pos_weight=4.5", "data.image_size=32",
                                                    "loss.class_weights=1,2", "experiment.seeds=3,4"});
  EXPECT_EQ(s.train.loss.bce_pos_weight, 4.5);
  EXPECT_EQ(s.train.model.image_size, 32);
  EXPECT_EQ(s.train.loss.class_weights, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_FALSE(cli::resolve_config("", {"loss.bce_pos_weight=auto"}).train.loss.bce_pos_weight);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(cli::resolve_config(R"({"train": {"nope": 1}})", {}), ConfigError);
  EXPECT_THROW(cli::resolve_config("", {"model.use_simam=maybe"}), ConfigError);
  EXPECT_THROW(cli::resolve_config("", {"train.lr"}), ConfigError);
  EXPECT_THROW(cli::resolve_config("{broken", {}), ConfigError);
  EXPECT_THROW(cli::resolve_config("", {"data.image_size=30"}), ConfigError);
  EXPECT_THROW(cli::resolve_config("", {}, "abc"), ConfigError);
  EXPECT_THROW(cli::resolve_config(R"({"profile": "huge"})", {}), ConfigError);
}

TEST(Config, EchoRoundTrips) {
  const cli::RunConfig a = cli::resolve_config("", {"train.epochs=3", "model.bottleneck_variant=narrow"});
  const cli::RunConfig b = cli::resolve_config(cli::config_to_json(a), {});
  EXPECT_EQ(cli::config_to_json(a), cli::config_to_json(b));
  EXPECT_EQ(b.train.model.bottleneck_variant, BottleneckVariant::kNarrow);
}

TEST(Cli, HelpListsEveryKey) {
  const Outcome r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& k : cli::config_keys()) EXPECT_NE(r.out.find(k.path), std::string::npos) << k.path;
  EXPECT_NE(r.out.find("DAUNET_SEED"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(invoke({}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
  const Outcome missing = invoke({"train"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("--config"), std::string::npos);
  const fs::path d = scratch("usage");
  EXPECT_EQ(invoke({"train", "--config", tiny_config(d).string(), "--set", "bogus.key=1"}).code, 1);
  EXPECT_EQ(invoke({"eval", "--checkpoint", (d / "missing.ckpt").string()}).code, 1);
  EXPECT_EQ(invoke({"eval", "--checkpoint", (d / "missing.ckpt").string(), "--config", tiny_config(d).string(),
                    "--out-dir", d.string()}).code,
            2);
}

TEST(Cli, GitBlobHash) {
  EXPECT_EQ(cli::git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(cli::git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Cli, GradCheckPasses) {
  const Outcome r = invoke({"grad-check", "--seeds", "0"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("deform_conv2d"), std::string::npos);
}

TEST(Cli, TrainWritesOutputsAndReproduces) {
  const fs::path d = scratch("train");
  const std::string cfg = tiny_config(d).string();
  const Outcome a = invoke({"train", "--config", cfg, "--out-dir", (d / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  for (const char* f : {"config.json", "log.csv", "best.ckpt", "test_metrics.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / "a" / f)) << f;
  const Outcome b = invoke({"train", "--config", cfg, "--out-dir", (d / "b").string()});
  ASSERT_EQ(b.code, 0);
  for (const char* f : {"config.json", "log.csv", "best.ckpt", "test_metrics.csv"})
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;

  const auto manifest = nlohmann::json::parse(slurp(d / "a" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["checkpoint_sha1"]["best.ckpt"], cli::git_blob_sha1(slurp(d / "a" / "best.ckpt")));
  EXPECT_GT(manifest["param_counts"]["model"].get<std::size_t>(), 0u);

  const Outcome e = invoke({"eval", "--checkpoint", (d / "a" / "best.ckpt").string(), "--config", cfg,
                            "--out-dir", (d / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const std::string metrics = slurp(d / "eval" / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "sample_id,class,dsc,hd95,asd,skipped");
  EXPECT_EQ(metrics, slurp(d / "a" / "test_metrics.csv"));
  EXPECT_TRUE(fs::exists(d / "eval" / "predictions"));

  const Outcome o = invoke({"export-offsets", "--checkpoint", (d / "a" / "best.ckpt").string(), "--config", cfg,
                            "--quadrant", "TL", "--out-dir", (d / "off").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(d / "off" / "offsets.csv"));
  EXPECT_EQ(invoke({"export-offsets", "--checkpoint", (d / "a" / "best.ckpt").string(), "--config", cfg,
                    "--quadrant", "XX", "--out-dir", (d / "off2").string()}).code, 1);
}

TEST(Cli, GenerateAndInfo) {
  const fs::path d = scratch("gen");
  const std::string cfg = tiny_config(d).string();
  ASSERT_EQ(invoke({"generate", "--config", cfg, "--count", "2", "--out-dir", (d / "g").string()}).code, 0);
  EXPECT_TRUE(fs::exists(d / "g" / "samples" / "phantom_00000_image.pgm"));
  EXPECT_TRUE(fs::exists(d / "g" / "samples" / "phantom_00001_mask2.pgm"));
  const Outcome info = invoke({"info", "--manifest", "--out-dir", (d / "i").string()});
  ASSERT_EQ(info.code, 0) << info.err;
  EXPECT_NE(info.out.find("1943778"), std::string::npos) << info.out;
  const auto m = nlohmann::json::parse(slurp(d / "i" / "manifest.json"));
  EXPECT_EQ(m["param_counts"]["unet"], 1943778);
  EXPECT_EQ(m["param_counts"]["daunet"], 1295997);
}

TEST(Cli, AblateAndRobustnessWriteTables) {
  const fs::path d = scratch("exp");
  const std::string cfg = tiny_config(d).string();
  const Outcome a = invoke({"ablate", "--config", cfg, "--set", "train.epochs=1", "--out-dir", (d / "ab").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const std::string csv = slurp(d / "ab" / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(d / "ab" / "runs" / "bottleneck1_simam1_seed0" / "best.ckpt"));

  const std::string runs = (d / "ab" / "runs").string();
  const Outcome r = invoke({"robustness", "--config", cfg, "--daunet", runs + "/bottleneck1_simam1_seed0/best.ckpt",
                            "--unet", runs + "/bottleneck0_simam0_seed0/best.ckpt", "--out-dir",
                            (d / "rb").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string rob = slurp(d / "rb" / "robustness.csv");
  EXPECT_EQ(rob.substr(0, rob.find('\n')), "model,condition,mean_dsc,drop");
  EXPECT_EQ(std::count(rob.begin(), rob.end(), '\n'), 11);
}
