#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "daunet/checkpoint.hpp"
#include "daunet/cli.hpp"
#include "daunet/deform_conv.hpp"
#include "daunet/error.hpp"
#include "daunet/experiments.hpp"
#include "daunet/gradcheck.hpp"
#include "daunet/io.hpp"
#include "daunet/kernels.hpp"

namespace daunet::cli {
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
};

std::string default_out_dir() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return (fs::path("runs") / buf).string();
}

RunConfig load_config(const Common& c) {
  std::string text;
  if (!c.config_path.empty()) {
    try {
      text = read_file(c.config_path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  return resolve_config(text, c.sets, std::getenv("DAUNET_SEED"));
}

// Owns the output directory and the manifest of one command.
class Outputs {
 public:
  Outputs(const std::string& command, const Common& common, const RunConfig& cfg)
      : dir_(common.out_dir.empty() ? default_out_dir() : common.out_dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create out-dir " + dir_.string());
    manifest_.command = command;
    manifest_.config_json = config_to_json(cfg);
    manifest_.seed = cfg.train.seed;
    manifest_.started = utc_timestamp();
  }

  fs::path path(const std::string& rel) const { return dir_ / rel; }
  const fs::path& dir() const { return dir_; }

  void record(const std::string& rel) { manifest_.outputs.push_back(rel); }

  void write(const std::string& rel, const std::string& contents) {
    fs::create_directories(path(rel).parent_path());
    write_file(path(rel).string(), contents);
    record(rel);
  }

  void checkpoint(const std::string& rel, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    write(rel, bytes);
    manifest_.checkpoint_hashes[rel] = git_blob_sha1(bytes);
  }

  RunManifest& manifest() { return manifest_; }

  void finish() {
    manifest_.finished = utc_timestamp();
    write_file(path("manifest.json").string(), manifest_.to_json());
  }

 private:
  fs::path dir_;
  RunManifest manifest_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// 0 = background, 255 (c + 1) / C for class c; where several classes fire
// the largest logit wins.
std::vector<std::uint8_t> label_image(const Tensor& t, std::size_t n, bool logits) {
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  auto d = t.data();
  std::vector<std::uint8_t> px(h * w, 0);
  for (std::size_t i = 0; i < h * w; ++i) {
    double best = logits ? 0.0 : 0.5;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = d[(n * c + k) * h * w + i];
      if (v > best) {
        best = v;
        px[i] = static_cast<std::uint8_t>(255 * (k + 1) / c);
      }
    }
  }
  return px;
}

void print_report(std::ostream& out, const MetricsReport& r) {
  for (std::size_t c = 0; c < r.class_dsc.size(); ++c) {
    out << "class " << c + 1 << ": dsc " << fmt(r.class_dsc[c]) << "  hd95 " << fmt(r.class_hd95[c], 3)
        << "  asd " << fmt(r.class_asd[c], 3) << "\n";
  }
  out << "mean:    dsc " << fmt(r.mean_dsc) << "  hd95 " << fmt(r.mean_hd95, 3) << "  asd "
      << fmt(r.mean_asd, 3) << "  (skipped pairs: " << r.skipped << ")\n";
}

void check_compatible(const ModelConfig& m, const TrainConfig& t) {
  if (m.image_size != t.data.image_size || m.num_classes != t.data.num_fg_classes) {
    throw ConfigError("checkpoint model (image " + std::to_string(m.image_size) + ", classes " +
                      std::to_string(m.num_classes) + ") does not match the data config");
  }
}

const std::vector<Sample>& pick_split(const DataSplits& d, const std::string& split,
                                      std::vector<std::size_t>& ids) {
  if (split == "train") {
    ids = d.indices.train;
    return d.train;
  }
  if (split == "val") {
    ids = d.indices.val;
    return d.val;
  }
  if (split == "test") {
    ids = d.indices.test;
    return d.test;
  }
  throw ConfigError("--split must be train, val or test");
}

int cmd_generate(const Common& common, std::size_t start, long count, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  Outputs o("generate", common, cfg);
  const std::size_t n = count >= 0 ? static_cast<std::size_t>(count)
                                   : static_cast<std::size_t>(cfg.train.n_train + cfg.train.n_val +
                                                              cfg.train.n_test);
  fs::create_directories(o.path("samples"));
  for (std::size_t i = start; i < start + n; ++i) {
    const Sample s = gen_phantom(cfg.train.data, i);
    char stem[32];
    std::snprintf(stem, sizeof stem, "phantom_%05zu", i);
    for (const auto& f : export_sample(s, o.path("samples").string() + "/" + stem)) {
      o.record(fs::relative(f, o.dir()).string());
    }
  }
  o.manifest().results["samples"] = static_cast<double>(n);
  o.finish();
  out << "wrote " << n << " phantoms to " << o.dir().string() << "\n";
  return 0;
}

int cmd_train(const Common& common, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  Outputs o("train", common, cfg);
  o.write("config.json", config_to_json(cfg) + "\n");
  const DataSplits data = build_data(cfg.train);
  out << "training " << (cfg.train.model.use_deform_bottleneck || cfg.train.model.use_simam ? "DAUNet" : "UNet")
      << " (" << Model(cfg.train.model, cfg.train.seed).param_count() << " parameters) on "
      << data.train.size() << " phantoms, " << cfg.train.epochs << " epochs, kernels "
      << kernels::isa_name(kernels::active_isa()) << "\n";
  const TrainResult r = train_on(cfg.train, data.train, data.val, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << "  loss " << fmt(e.train_loss, 5) << "  val dsc " << fmt(e.val_dsc)
        << std::endl;
  });
  o.write("log.csv", log_to_csv(r.log));
  o.checkpoint("best.ckpt", r.best);
  Model best = restore_model(r.best);
  const MetricsReport test = evaluate(best, data.test, data.indices.test,
                                      {.batch_size = 16, .distances = true, .hd95_mode = cfg.train.hd95_mode});
  o.write("test_metrics.csv", test.to_csv());
  o.manifest().param_counts["model"] = best.param_count();
  o.manifest().results["best_epoch"] = r.best_epoch;
  o.manifest().results["best_val_dsc"] = r.best_val_dsc;
  o.manifest().results["test_dsc"] = test.mean_dsc;
  o.manifest().results["test_hd95"] = test.mean_hd95;
  o.manifest().results["test_asd"] = test.mean_asd;
  o.finish();
  out << "best epoch " << r.best_epoch << " (val dsc " << fmt(r.best_val_dsc) << "); test:\n";
  print_report(out, test);
  return 0;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::string& split,
             bool predictions, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  check_compatible(ckpt.model, cfg.train);
  Outputs o("eval", common, cfg);
  Model model = restore_model(ckpt);
  const DataSplits data = build_data(cfg.train);
  std::vector<std::size_t> ids;
  const auto& samples = pick_split(data, split, ids);
  const Tensor logits = predict(model, samples);
  const Batch targets = make_batch(samples);
  const MetricsReport rep = score_logits(logits, targets.masks, ids,
                                         {.batch_size = 16, .distances = true, .hd95_mode = cfg.train.hd95_mode});
  o.write("metrics.csv", rep.to_csv());
  if (predictions) {
    fs::create_directories(o.path("predictions"));
    const std::size_t h = logits.dim(2), w = logits.dim(3);
    for (std::size_t n = 0; n < samples.size(); ++n) {
      char name[64];
      std::snprintf(name, sizeof name, "predictions/pred_%05zu.pgm", ids[n]);
      write_pgm(o.path(name).string(), w, h, label_image(logits, n, true));
      o.record(name);
      std::snprintf(name, sizeof name, "predictions/truth_%05zu.pgm", ids[n]);
      write_pgm(o.path(name).string(), w, h, label_image(targets.masks, n, false));
      o.record(name);
    }
  }
  o.manifest().param_counts["model"] = model.param_count();
  o.manifest().results["dsc"] = rep.mean_dsc;
  o.manifest().results["hd95"] = rep.mean_hd95;
  o.manifest().results["asd"] = rep.mean_asd;
  o.finish();
  print_report(out, rep);
  return 0;
}

std::string run_stem(bool b, bool s, std::uint64_t seed) {
  return "runs/bottleneck" + std::to_string(b) + "_simam" + std::to_string(s) + "_seed" + std::to_string(seed);
}

int cmd_ablate(const Common& common, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  Outputs o("ablate", common, cfg);
  const AblationResult r = run_ablation(cfg.train, cfg.seeds, [&](const std::string& msg) {
    out << msg << std::endl;
  });
  o.write("ablation.csv", ablation_to_csv(r));
  for (const auto& run : r.runs) {
    const std::string stem = run_stem(run.bottleneck, run.simam, run.seed);
    o.write(stem + "/log.csv", log_to_csv(run.result.log));
    o.write(stem + "/test_metrics.csv", run.test.to_csv());
    o.checkpoint(stem + "/best.ckpt", run.result.best);
  }
  for (const auto& row : r.rows) {
    const std::string key = "bottleneck" + std::to_string(row.bottleneck) + "_simam" + std::to_string(row.simam);
    o.manifest().param_counts[key] = row.params;
    o.manifest().results[key + "_dsc"] = row.dsc;
  }
  o.finish();
  out << ablation_to_csv(r);
  return 0;
}

int cmd_robustness(const Common& common, const std::string& daunet_ckpt, const std::string& unet_ckpt,
                   std::ostream& out) {
  const RunConfig cfg = load_config(common);
  if (daunet_ckpt.empty() != unet_ckpt.empty()) {
    throw ConfigError("--daunet and --unet must be given together");
  }
  Outputs o("robustness", common, cfg);
  const DataSplits data = build_data(cfg.train);

  struct Pair {
    std::uint64_t seed;
    Model daunet;
    Model unet;
  };
  std::vector<Pair> pairs;
  if (!daunet_ckpt.empty()) {
    const Checkpoint d = load_checkpoint(daunet_ckpt), u = load_checkpoint(unet_ckpt);
    check_compatible(d.model, cfg.train);
    check_compatible(u.model, cfg.train);
    pairs.push_back({cfg.train.seed, restore_model(d), restore_model(u)});
  } else {
    for (std::uint64_t seed : cfg.seeds) {
      TrainConfig t = cfg.train;
      t.seed = seed;
      t.model.use_deform_bottleneck = true;
      t.model.use_simam = true;
      out << "training DAUNet, seed " << seed << std::endl;
      const TrainResult d = train_on(t, data.train, data.val);
      t.model.use_deform_bottleneck = false;
      t.model.use_simam = false;
      out << "training UNet, seed " << seed << std::endl;
      const TrainResult u = train_on(t, data.train, data.val);
      o.checkpoint("daunet_seed" + std::to_string(seed) + ".ckpt", d.best);
      o.checkpoint("unet_seed" + std::to_string(seed) + ".ckpt", u.best);
      pairs.push_back({seed, restore_model(d.best), restore_model(u.best)});
    }
  }

  RobustnessResult mean;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string offset_dir = i == 0 ? o.path("offsets").string() : std::string();
    RobustnessResult r = run_robustness(pairs[i].daunet, pairs[i].unet, data.test, data.indices.test, offset_dir);
    o.write("robustness_seed" + std::to_string(pairs[i].seed) + ".csv", robustness_to_csv(r));
    for (const auto& f : r.files) o.record(fs::relative(f, o.dir()).string());
    if (i == 0) {
      mean = r;
      mean.files.clear();
    } else {
      for (std::size_t k = 0; k < r.rows.size(); ++k) {
        mean.rows[k].mean_dsc += r.rows[k].mean_dsc;
        mean.rows[k].drop += r.rows[k].drop;
      }
      mean.mean_drop_daunet += r.mean_drop_daunet;
      mean.mean_drop_unet += r.mean_drop_unet;
    }
  }
  const double n = static_cast<double>(pairs.size());
  for (auto& row : mean.rows) {
    row.mean_dsc /= n;
    row.drop /= n;
  }
  mean.mean_drop_daunet /= n;
  mean.mean_drop_unet /= n;
  o.write("robustness.csv", robustness_to_csv(mean));
  o.manifest().param_counts["daunet"] = pairs.front().daunet.param_count();
  o.manifest().param_counts["unet"] = pairs.front().unet.param_count();
  o.manifest().results["mean_drop_daunet"] = mean.mean_drop_daunet;
  o.manifest().results["mean_drop_unet"] = mean.mean_drop_unet;
  o.finish();
  out << robustness_to_csv(mean) << "mean drop: DAUNet " << fmt(mean.mean_drop_daunet) << ", UNet "
      << fmt(mean.mean_drop_unet) << "\n";
  return 0;
}

int cmd_grad_check(const std::vector<std::uint64_t>& seeds, double tol, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const auto cases = run_gradcheck_suite(seeds, tol);
  std::size_t failed = 0;
  out << std::left << std::setw(30) << "operation" << std::setw(8) << "seed" << std::setw(14) << "max rel err"
      << std::setw(8) << "coords" << "result\n";
  for (const auto& c : cases) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(2) << c.report.max_rel_error;
    out << std::left << std::setw(30) << c.name << std::setw(8) << c.seed << std::setw(14) << err.str()
        << std::setw(8) << c.report.coords_checked << (c.report.passed ? "pass" : "FAIL") << "\n";
    failed += !c.report.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << cases.size() - failed << "/" << cases.size() << " checks passed at tolerance " << tol << " in "
      << fmt(secs, 1) << " s\n";
  return failed == 0 ? 0 : 2;
}

int cmd_export_offsets(const Common& common, const std::string& ckpt_path, long index,
                       const std::string& quadrant, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  check_compatible(ckpt.model, cfg.train);
  if (!ckpt.model.use_deform_bottleneck) throw ConfigError("checkpoint has no deformable bottleneck");
  Outputs o("export-offsets", common, cfg);
  Model model = restore_model(ckpt);
  const std::size_t idx = index >= 0 ? static_cast<std::size_t>(index)
                                     : static_cast<std::size_t>(cfg.train.n_train + cfg.train.n_val);
  Sample s = gen_phantom(cfg.train.data, idx);
  if (!quadrant.empty()) s.image = quadrant_mask(s.image, parse_quadrant(quadrant));
  model.set_training(false);
  NoGradGuard no_grad;
  ForwardTrace trace;
  model.forward(make_batch(std::span<const Sample>(&s, 1)).images, &trace);
  export_offsets(trace.bottleneck_offsets, 0, o.path("offsets.csv").string(), o.path("offsets.pgm").string());
  o.record("offsets.csv");
  o.record("offsets.pgm");
  for (const auto& f : export_sample(s, o.path("input").string())) o.record(fs::relative(f, o.dir()).string());
  o.manifest().param_counts["model"] = model.param_count();
  o.finish();
  out << "offset field " << shape_str(trace.bottleneck_offsets.shape()) << " of phantom " << idx
      << " written to " << o.dir().string() << "\n";
  return 0;
}

int cmd_info(const Common& common, bool write_manifest, std::ostream& out) {
  const RunConfig cfg = load_config(common);
  Model model(cfg.train.model, cfg.train.seed);
  out << "kernels: " << kernels::isa_name(kernels::active_isa()) << "\n\n" << model.summary_table() << "\n";
  ModelConfig unet_cfg = cfg.train.model, daunet_cfg = cfg.train.model;
  unet_cfg.use_deform_bottleneck = unet_cfg.use_simam = false;
  daunet_cfg.use_deform_bottleneck = daunet_cfg.use_simam = true;
  const std::size_t unet = build_unet(unet_cfg, 0).param_count();
  const std::size_t daunet = build_daunet(daunet_cfg, 0).param_count();
  out << "UNet parameters:   " << unet << "\nDAUNet parameters: " << daunet << "\n";
  if (write_manifest) {
    Outputs o("info", common, cfg);
    o.manifest().param_counts["model"] = model.param_count();
    o.manifest().param_counts["unet"] = unet;
    o.manifest().param_counts["daunet"] = daunet;
    o.finish();
  }
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool config_required) {
  auto* opt = sub->add_option("--config", c.config_path, "JSON config file");
  if (config_required) opt->required();
  sub->add_option("--set", c.sets, "override a config key, key=value (repeatable)")->take_all();
  sub->add_option("--out-dir", c.out_dir, "output directory (default runs/<timestamp>)");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DAUNet segmentation toolkit", "daunet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.footer(config_key_help() + "\nEnvironment: DAUNET_SEED overrides train.seed (before --set).\n"
             "Exit codes: 0 success, 1 usage error, 2 runtime error.");

  Common common;
  std::size_t gen_start = 0;
  long gen_count = -1;
  std::string ckpt, split = "test", daunet_ckpt, unet_ckpt, quadrant;
  bool no_predictions = false, write_manifest = false;
  std::vector<std::uint64_t> gc_seeds{0, 1, 2};
  double gc_tol = 1e-6;
  long index = -1;

  auto* gen = app.add_subcommand("generate", "write phantom images and masks as PGM");
  add_common(gen, common, false);
  gen->add_option("--start", gen_start, "first phantom index");
  gen->add_option("--count", gen_count, "number of phantoms (default: all splits)");

  auto* tr = app.add_subcommand("train", "train a model; writes log.csv, best.ckpt, test_metrics.csv");
  add_common(tr, common, true);

  auto* ev = app.add_subcommand("eval", "score a checkpoint; writes metrics.csv and prediction PGMs");
  add_common(ev, common, true);
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--split", split, "train, val or test");
  ev->add_flag("--no-predictions", no_predictions, "skip the prediction PGMs");

  auto* ab = app.add_subcommand("ablate", "train the four bottleneck / SimAM combinations");
  add_common(ab, common, true);

  auto* rb = app.add_subcommand("robustness", "quadrant-masking study of DAUNet vs UNet");
  add_common(rb, common, true);
  rb->add_option("--daunet", daunet_ckpt, "trained DAUNet checkpoint (otherwise both are trained)");
  rb->add_option("--unet", unet_ckpt, "trained UNet checkpoint");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable operator");
  gc->add_option("--seeds", gc_seeds, "seeds")->delimiter(',');
  gc->add_option("--tol", gc_tol, "relative error tolerance");

  auto* eo = app.add_subcommand("export-offsets", "dump bottleneck offsets of one phantom");
  add_common(eo, common, true);
  eo->add_option("--checkpoint", ckpt, "DAUNet checkpoint")->required();
  eo->add_option("--index", index, "phantom index (default: first test phantom)");
  eo->add_option("--quadrant", quadrant, "mask TL, TR, BL or BR first");

  auto* in = app.add_subcommand("info", "print the architecture and parameter counts");
  add_common(in, common, false);
  in->add_flag("--manifest", write_manifest, "also write manifest.json to --out-dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(common, gen_start, gen_count, out);
    if (tr->parsed()) return cmd_train(common, out);
    if (ev->parsed()) return cmd_eval(common, ckpt, split, !no_predictions, out);
    if (ab->parsed()) return cmd_ablate(common, out);
    if (rb->parsed()) return cmd_robustness(common, daunet_ckpt, unet_ckpt, out);
    if (gc->parsed()) return cmd_grad_check(gc_seeds, gc_tol, out);
    if (eo->parsed()) return cmd_export_offsets(common, ckpt, index, quadrant, out);
    if (in->parsed()) return cmd_info(common, write_manifest, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace daunet::cli
