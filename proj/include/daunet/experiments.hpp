#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "daunet/trainer.hpp"

namespace daunet {

struct AblationRun {
  bool bottleneck = false;
  bool simam = false;
  std::uint64_t seed = 0;
  TrainResult result;
  MetricsReport test;
};

struct AblationRow {
  bool bottleneck = false;
  bool simam = false;
  double dsc = 0.0;  // test means averaged over seeds
  double hd95 = 0.0;
  double asd = 0.0;
  std::size_t params = 0;
  std::vector<double> seed_dsc;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // (0,0), (0,1), (1,0), (1,1)
  std::vector<AblationRun> runs;
};

using ProgressFn = std::function<void(const std::string&)>;

// Trains the four flag combinations of `base` on each seed, sharing the
// phantom data, and scores each best checkpoint on the test split.
AblationResult run_ablation(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                            const ProgressFn& progress = {});

// Header `bottleneck,simam,dsc,hd95,asd,param`.
std::string ablation_to_csv(const AblationResult& r);

struct RobustnessRow {
  std::string model;      // "daunet" or "unet"
  std::string condition;  // "clean", "TL", "TR", "BL", "BR"
  double mean_dsc = 0.0;
  double drop = 0.0;  // clean - condition
};

struct RobustnessResult {
  std::vector<RobustnessRow> rows;  // 2 models x 5 conditions
  std::vector<std::string> files;   // exported offset fields
  double mean_drop_daunet = 0.0;    // over the four quadrant conditions
  double mean_drop_unet = 0.0;
};

// Evaluates both models on clean and quadrant-masked test images. When
// offset_dir is non-empty the DAUNet bottleneck offsets of the first test
// sample are exported per condition as offsets_<cond>.csv / .pgm.
RobustnessResult run_robustness(Model& daunet, Model& unet, const std::vector<Sample>& test,
                                const std::vector<std::size_t>& test_ids,
                                const std::string& offset_dir = "");

// Header `model,condition,mean_dsc,drop`.
std::string robustness_to_csv(const RobustnessResult& r);

}  // namespace daunet
