#include "daunet/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "daunet/deform_conv.hpp"
#include "daunet/error.hpp"

namespace daunet {
namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<Sample> masked_copy(const std::vector<Sample>& samples, Quadrant q) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({quadrant_mask(s.image, q), s.mask});
  return out;
}

}  // namespace

AblationResult run_ablation(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                            const ProgressFn& progress) {
  if (seeds.empty()) throw ConfigError("run_ablation: at least one seed required");
  const DataSplits data = build_data(base);
  AblationResult out;
  for (bool bottleneck : {false, true}) {
    for (bool simam : {false, true}) {
      AblationRow row;
      row.bottleneck = bottleneck;
      row.simam = simam;
      std::vector<double> hd, as;
      for (std::uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        cfg.model.use_deform_bottleneck = bottleneck;
        cfg.model.use_simam = simam;
        if (progress) {
          progress("ablation bottleneck=" + std::to_string(bottleneck) +
                   " simam=" + std::to_string(simam) + " seed=" + std::to_string(seed));
        }
        AblationRun run;
        run.bottleneck = bottleneck;
        run.simam = simam;
        run.seed = seed;
        run.result = train_on(cfg, data.train, data.val);
        Model model = restore_model(run.result.best);
        row.params = model.param_count();
        run.test = evaluate(model, data.test, data.indices.test,
                            {.batch_size = 16, .distances = true, .hd95_mode = cfg.hd95_mode});
        row.seed_dsc.push_back(run.test.mean_dsc);
        hd.push_back(run.test.mean_hd95);
        as.push_back(run.test.mean_asd);
        run.result.best.adam.reset();
        out.runs.push_back(std::move(run));
      }
      row.dsc = mean_of(row.seed_dsc);
      row.hd95 = mean_of(hd);
      row.asd = mean_of(as);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

std::string ablation_to_csv(const AblationResult& r) {
  std::string out = "bottleneck,simam,dsc,hd95,asd,param\n";
  char buf[160];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g,%zu\n", row.bottleneck ? 1 : 0,
                  row.simam ? 1 : 0, row.dsc, row.hd95, row.asd, row.params);
    out += buf;
  }
  return out;
}

RobustnessResult run_robustness(Model& daunet, Model& unet, const std::vector<Sample>& test,
                                const std::vector<std::size_t>& test_ids,
                                const std::string& offset_dir) {
  if (!daunet.config().use_deform_bottleneck) {
    throw ConfigError("run_robustness: first model must have the deformable bottleneck");
  }
  if (test.empty() || test.size() != test_ids.size()) {
    throw ShapeError("run_robustness: one id per test sample required");
  }
  const EvalOptions opts{.batch_size = 16, .distances = false};
  RobustnessResult out;
  if (!offset_dir.empty()) std::filesystem::create_directories(offset_dir);

  struct Named {
    const char* name;
    Model* model;
  };
  for (Named m : {Named{"daunet", &daunet}, Named{"unet", &unet}}) {
    const double clean = evaluate(*m.model, test, test_ids, opts).mean_dsc;
    out.rows.push_back({m.name, "clean", clean, 0.0});
    double drop_sum = 0.0;
    for (Quadrant q : kAllQuadrants) {
      const auto masked = masked_copy(test, q);
      const double dsc_q = evaluate(*m.model, masked, test_ids, opts).mean_dsc;
      out.rows.push_back({m.name, to_string(q), dsc_q, clean - dsc_q});
      drop_sum += clean - dsc_q;
    }
    (m.model == &daunet ? out.mean_drop_daunet : out.mean_drop_unet) = drop_sum / 4.0;
  }

  if (!offset_dir.empty()) {
    daunet.set_training(false);
    NoGradGuard no_grad;
    auto export_one = [&](const Sample& s, const std::string& cond) {
      Batch b = make_batch(std::span<const Sample>(&s, 1));
      ForwardTrace trace;
      daunet.forward(b.images, &trace);
      const std::string stem = (std::filesystem::path(offset_dir) / ("offsets_" + cond)).string();
      export_offsets(trace.bottleneck_offsets, 0, stem + ".csv", stem + ".pgm");
      out.files.push_back(stem + ".csv");
      out.files.push_back(stem + ".pgm");
    };
    export_one(test.front(), "clean");
    for (Quadrant q : kAllQuadrants) {
      export_one({quadrant_mask(test.front().image, q), test.front().mask}, to_string(q));
    }
  }
  return out;
}

std::string robustness_to_csv(const RobustnessResult& r) {
  std::string out = "model,condition,mean_dsc,drop\n";
  char buf[160];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.10g,%.10g\n", row.model.c_str(), row.condition.c_str(),
                  row.mean_dsc, row.drop);
    out += buf;
  }
  return out;
}

}  // namespace daunet
