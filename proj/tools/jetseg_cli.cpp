#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "jetseg/errors.hpp"
#include "jetseg/runtime.hpp"

namespace fs = std::filesystem;
using namespace jetseg;

namespace {

struct ModelArgs {
  std::string profile;
  std::string config;
  std::vector<std::int64_t> input_size;

  void attach(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "workstation, agx or nano");
    cmd->add_option("--config", config, "model config file (key = value)");
    cmd->add_option("--input-size", input_size, "input height and width")->expected(2);
  }

  bool from_file() const { return !config.empty(); }

  ModelConfig resolve() const {
    ModelConfig c = from_file() ? ModelConfig::load(config)
                                : ModelConfig::for_profile(parse_profile(
                                      profile.empty() ? "workstation" : profile));
    if (from_file() && !profile.empty() && parse_profile(profile) != c.profile) {
      throw ConfigError("profile", "--profile disagrees with " + config);
    }
    if (!input_size.empty()) {
      c.input_h = input_size[0];
      c.input_w = input_size[1];
    }
    return c;
  }
};

struct DataArgs {
  std::string data = "synthetic";
  std::size_t samples = 128;
  std::int64_t classes = 3;
  bool classes11 = false;
  std::string splits;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "CamVid-style directory or 'synthetic'");
    cmd->add_option("--samples", samples, "synthetic sample count");
    cmd->add_option("--classes", classes, "synthetic class count");
    cmd->add_flag("--classes11", classes11, "group CamVid labels into 11 classes");
    cmd->add_option("--splits", splits, "directory with train.txt / val.txt / test.txt");
  }

  std::unique_ptr<SegmentationDataset> open(std::int64_t h, std::int64_t w,
                                            std::uint64_t seed) const {
    if (data == "synthetic") return synthetic_blobs(samples, classes, h, w, seed);
    return std::make_unique<CamVidDataset>(data, h, w, classes11);
  }

  SplitManifest manifest(const SegmentationDataset& ds, std::uint64_t seed) const {
    if (!splits.empty()) return SplitManifest::load(splits);
    if (data != "synthetic" && fs::exists(fs::path(data) / "splits" / "train.txt")) {
      return SplitManifest::load(fs::path(data) / "splits");
    }
    return build_splits(ds.ids(), seed);
  }
};

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %3d  train_loss %.5f  val_loss %.5f  val_mIoU %.4f  %.1fs\n", e.epoch,
              e.train_loss, e.val_loss, e.val_miou, e.wall_ms / 1000.0);
  std::fflush(stdout);
}

int run_train(const ModelArgs& m, const DataArgs& d, TrainOptions opts, const std::string& loss) {
  opts.loss = parse_loss(loss);
  auto config = m.resolve();
  auto data = d.open(config.input_h, config.input_w, opts.seed);
  if (!m.from_file()) config.num_classes = data->num_classes();
  const auto splits = d.manifest(*data, opts.seed);
  std::printf("%s: %zu train / %zu val / %zu test, %lld classes\n",
              to_string(config.profile).c_str(), splits.train.size(), splits.val.size(),
              splits.test.size(), static_cast<long long>(config.num_classes));
  const auto run = train(config, *data, splits, opts, print_epoch);
  if (run.test) run.test->print(std::cout, data->class_names());
  if (!opts.out_dir.empty()) std::printf("records written to %s\n", opts.out_dir.c_str());
  return 0;
}

int run_eval(const ModelArgs& m, const DataArgs& d, const std::string& checkpoint,
             const std::string& split, std::uint64_t seed, const std::string& out) {
  const auto meta = load_checkpoint(checkpoint);
  std::optional<ModelConfig> expected;
  if (m.from_file() || !m.profile.empty()) {
    expected = m.resolve();
    if (!m.from_file()) expected->num_classes = meta.config.num_classes;
  }
  auto data = d.open(meta.config.input_h, meta.config.input_w, seed);
  const auto splits = d.manifest(*data, seed);
  const auto& ids = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
  const auto report = evaluate(checkpoint, *data, ids, expected);
  std::printf("%s split, %zu samples\n", split.c_str(), ids.size());
  report.print(std::cout, data->class_names());
  if (!out.empty()) {
    fs::create_directories(out);
    auto j = report.to_json();
    j["type"] = "eval";
    j["split"] = split;
    j["checkpoint"] = checkpoint;
    write_jsonl(fs::path(out) / "records.jsonl", {j});
  }
  return 0;
}

int run_bench(const ModelArgs& m, int warmup, int iters, std::int64_t batch, std::uint64_t seed,
              const std::string& out) {
  const auto config = m.resolve();
  const auto r = benchmark(config, config.input_h, config.input_w, warmup, iters, batch, seed);
  std::printf("%s %lldx%lld batch %lld: median %.3f ms, mean %.3f ms, p95 %.3f ms, %.1f FPS\n",
              to_string(r.profile).c_str(), static_cast<long long>(r.input_h),
              static_cast<long long>(r.input_w), static_cast<long long>(r.batch),
              r.summary.median_ms, r.summary.mean_ms, r.summary.p95_ms, r.summary.fps);
  if (!out.empty()) {
    fs::create_directories(out);
    write_jsonl(fs::path(out) / "records.jsonl", {r.to_json()});
  }
  return 0;
}

int run_analyze(const ModelArgs& m, bool layers, bool json) {
  const auto config = m.resolve();
  const auto report = analyze(config, config.input_h, config.input_w);
  if (json) {
    std::cout << report.to_json(layers).dump(2) << "\n";
  } else {
    std::printf("%s at %lldx%lld\n", to_string(config.profile).c_str(),
                static_cast<long long>(config.input_h), static_cast<long long>(config.input_w));
    report.print(std::cout, layers);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"JetSeg semantic segmentation: train, evaluate, benchmark, analyze"};
  app.require_subcommand(1);

  ModelArgs model;
  DataArgs data;
  TrainOptions opts;
  std::string loss = "jetloss", out, resume, checkpoint, split = "test";
  int warmup = 20, iters = 200, stop_after = 0;
  std::int64_t bench_batch = 1;
  bool layers = false, json = false;

  auto* train_cmd = app.add_subcommand("train", "train from scratch or resume");
  model.attach(train_cmd);
  data.attach(train_cmd);
  train_cmd->add_option("--epochs", opts.epochs);
  train_cmd->add_option("--seed", opts.seed);
  train_cmd->add_option("--batch-size", opts.batch_size);
  train_cmd->add_option("--lr", opts.learning_rate);
  train_cmd->add_option("--loss", loss, "jetloss or cross_entropy");
  train_cmd->add_option("--beta", opts.beta);
  train_cmd->add_option("--out", out, "run directory");
  train_cmd->add_option("--resume", resume, "last.pt of an interrupted run");
  train_cmd->add_option("--stop-after", stop_after, "stop after this epoch");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  model.attach(eval_cmd);
  data.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--seed", opts.seed);
  eval_cmd->add_option("--out", out);

  auto* bench_cmd = app.add_subcommand("bench", "measure inference latency");
  model.attach(bench_cmd);
  bench_cmd->add_option("--warmup", warmup);
  bench_cmd->add_option("--iters", iters);
  bench_cmd->add_option("--batch", bench_batch);
  bench_cmd->add_option("--seed", opts.seed);
  bench_cmd->add_option("--out", out);

  auto* analyze_cmd = app.add_subcommand("analyze", "FLOPs and parameter report");
  model.attach(analyze_cmd);
  analyze_cmd->add_flag("--layers", layers, "one row per layer");
  analyze_cmd->add_flag("--json", json);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      opts.out_dir = out;
      if (!resume.empty()) opts.resume_from = resume;
      if (stop_after > 0) opts.stop_after = stop_after;
      return run_train(model, data, opts, loss);
    }
    if (*eval_cmd) return run_eval(model, data, checkpoint, split, opts.seed, out);
    if (*bench_cmd) return run_bench(model, warmup, iters, bench_batch, opts.seed, out);
    if (*analyze_cmd) return run_analyze(model, layers, json);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingDiverged& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
