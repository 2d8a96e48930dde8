#include "jetseg/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "jetseg/errors.hpp"

namespace jetseg {

namespace fs = std::filesystem;

std::string to_string(LossKind kind) {
  return kind == LossKind::jetloss ? "jetloss" : "cross_entropy";
}

LossKind parse_loss(std::string_view text) {
  if (text == "jetloss") return LossKind::jetloss;
  if (text == "cross_entropy" || text == "ce") return LossKind::cross_entropy;
  throw InvalidSpec("unknown loss '" + std::string(text) + "'");
}

nlohmann::json TrainOptions::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", "adam"},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"loss", to_string(loss)},
          {"beta", beta},
          {"epsilon", epsilon}};
}

nlohmann::json EpochRecord::to_json() const {
  return {{"type", "epoch"},         {"epoch", epoch},
          {"train_loss", train_loss}, {"val_loss", val_loss},
          {"val_miou", val_miou},     {"val_miou_all", val_miou_all},
          {"wall_ms", wall_ms}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_miou = j.at("val_miou").get<double>();
  r.val_miou_all = j.at("val_miou_all").get<double>();
  r.wall_ms = j.at("wall_ms").get<double>();
  return r;
}

namespace {

nlohmann::json stats_json(const ChannelStats& s) {
  return {{"mean", s.mean}, {"std", s.stddev}};
}

}  // namespace

std::vector<nlohmann::json> RunRecord::records() const {
  std::vector<nlohmann::json> out;
  out.push_back({{"type", "config"},
                 {"profile", to_string(config.profile)},
                 {"config", config.to_text()},
                 {"options", options.to_json()},
                 {"parameters", parameters}});
  out.push_back({{"type", "manifest"},
                 {"seed", manifest.seed},
                 {"train", manifest.train.size()},
                 {"val", manifest.val.size()},
                 {"test", manifest.test.size()},
                 {"stats", stats_json(manifest.stats)},
                 {"class_weights", weights.w}});
  auto cx = complexity.to_json(false);
  cx["type"] = "complexity";
  out.push_back(cx);
  for (const auto& e : epochs) out.push_back(e.to_json());
  if (test) {
    auto t = test->to_json();
    t["type"] = "test";
    out.push_back(t);
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << "\n";
}

void RunRecord::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_jsonl(dir / "records.jsonl", records());
  config.save(dir / "config.txt");
  manifest.save(dir / "splits");
  std::ofstream summary(dir / "summary.txt");
  summary << "profile " << to_string(config.profile) << ", " << parameters << " parameters, "
          << options.epochs << " epochs, seed " << options.seed << "\n";
  summary << "split train/val/test " << manifest.train.size() << "/" << manifest.val.size()
          << "/" << manifest.test.size() << "\n\n";
  summary << "epoch   train_loss   val_loss   val_mIoU   wall_s\n";
  for (const auto& e : epochs) {
    char line[128];
    std::snprintf(line, sizeof line, "%5d %12.5f %10.5f %10.4f %8.2f\n", e.epoch, e.train_loss,
                  e.val_loss, e.val_miou, e.wall_ms / 1000.0);
    summary << line;
  }
  if (test) {
    summary << "\ntest metrics\n";
    test->print(summary);
  }
  summary << "\ncomplexity at " << complexity.input.str() << "\n";
  complexity.print(summary);
}

TrainingDiverged::TrainingDiverged(int epoch, std::int64_t batch, const std::string& dump)
    : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch) + (dump.empty() ? "" : "; state dumped to " + dump)),
      epoch_(epoch),
      batch_(batch) {}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

torch::Tensor stats_tensor(const ChannelStats& s) {
  return torch::tensor({s.mean[0], s.mean[1], s.mean[2], s.stddev[0], s.stddev[1], s.stddev[2]},
                       torch::kDouble);
}

ChannelStats stats_from(const torch::Tensor& t) {
  ChannelStats s;
  for (int i = 0; i < 3; ++i) {
    s.mean[i] = t[i].item<double>();
    s.stddev[i] = t[i + 3].item<double>();
  }
  return s;
}

}  // namespace

void save_checkpoint(const fs::path& path, JetSeg& model, torch::optim::Optimizer* optimizer,
                     const Checkpoint& meta) {
  torch::serialize::OutputArchive archive;
  torch::serialize::OutputArchive weights;
  model->save(weights);
  archive.write("model", weights);
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    archive.write("optimizer", opt);
  }
  archive.write("config", c10::IValue(meta.config.to_text()));
  archive.write("epoch", c10::IValue(static_cast<std::int64_t>(meta.epoch)));
  archive.write("best_miou", c10::IValue(meta.best_miou));
  archive.write("stats", stats_tensor(meta.stats), /*is_buffer=*/true);
  archive.write("class_weights", meta.weights.tensor(torch::kDouble), /*is_buffer=*/true);
  archive.write("beta", c10::IValue(meta.weights.beta));
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : meta.history) history.push_back(e.to_json());
  archive.write("history", c10::IValue(history.dump()));
  archive.save_to(path.string());
}

Checkpoint load_checkpoint(const fs::path& path, JetSeg* model,
                           torch::optim::Optimizer* optimizer) {
  if (!fs::exists(path)) throw InvalidInput("checkpoint " + path.string() + " does not exist");
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  Checkpoint meta;
  c10::IValue v;
  archive.read("config", v);
  meta.config = ModelConfig::parse(v.toStringRef());
  archive.read("epoch", v);
  meta.epoch = static_cast<int>(v.toInt());
  archive.read("best_miou", v);
  meta.best_miou = v.toDouble();
  torch::Tensor t;
  archive.read("stats", t, /*is_buffer=*/true);
  meta.stats = stats_from(t);
  archive.read("class_weights", t, /*is_buffer=*/true);
  for (std::int64_t i = 0; i < t.numel(); ++i) meta.weights.w.push_back(t[i].item<double>());
  archive.read("beta", v);
  meta.weights.beta = v.toDouble();
  archive.read("history", v);
  for (const auto& e : nlohmann::json::parse(v.toStringRef())) {
    meta.history.push_back(EpochRecord::from_json(e));
  }
  if (model) {
    torch::serialize::InputArchive weights;
    archive.read("model", weights);
    (*model)->load(weights);
  }
  if (optimizer) {
    torch::serialize::InputArchive opt;
    archive.read("optimizer", opt);
    optimizer->load(opt);
  }
  return meta;
}

// ---------------------------------------------------------------------------
// Evaluation

MetricsReport evaluate_predictions(const SegmentationDataset& data,
                                   std::span<const std::size_t> indices,
                                   const ChannelStats& stats, const ClassWeights& weights,
                                   const Predictor& predictor, const EvalOptions& options) {
  const auto classes = data.num_classes();
  ConfusionStats confusion(classes);
  BoundaryStats boundary;
  MetricsReport report;
  std::int64_t batches = 0, correct = 0, valid = 0;
  const auto step = static_cast<std::size_t>(std::max<std::int64_t>(1, options.batch_size));
  for (std::size_t start = 0; start < indices.size(); start += step) {
    const auto chunk = indices.subspan(start, std::min(step, indices.size() - start));
    const auto batch = make_batch(data, chunk, stats);
    const auto probs = predictor(batch).to(torch::kDouble);
    const auto pred = probs.argmax(1);
    confusion.merge(hard_confusion(pred, batch.labels, classes));
    boundary.merge(boundary_stats(pred, batch.labels));
    JetLossOptions lo;
    lo.epsilon = options.epsilon;
    const auto terms = jetloss(probs, batch.labels, weights, lo);
    report.loss += terms.total.item<double>();
    report.recall += terms.recall.item<double>();
    report.precision += terms.precision.item<double>();
    report.boundary += terms.boundary.item<double>();
    const auto mask = batch.labels != kIgnoreIndex;
    correct += ((pred == batch.labels) & mask).sum().item<std::int64_t>();
    valid += mask.sum().item<std::int64_t>();
    ++batches;
  }
  if (batches > 0) {
    report.loss /= static_cast<double>(batches);
    report.recall /= static_cast<double>(batches);
    report.precision /= static_cast<double>(batches);
    report.boundary /= static_cast<double>(batches);
  }
  report.class_iou = per_class_iou(confusion);
  report.boundary_stats = boundary;
  report.pixel_accuracy = valid > 0 ? static_cast<double>(correct) / static_cast<double>(valid) : 0;
  try {
    report.miou_present = miou(confusion, AbsentClassPolicy::exclude);
    report.miou_all = miou(confusion, AbsentClassPolicy::count_as_zero);
  } catch (const UndefinedMetric&) {
    report.miou_present = report.miou_all = 0;
  }
  return report;
}

MetricsReport evaluate_model(JetSeg& model, const SegmentationDataset& data,
                             std::span<const std::size_t> indices, const ChannelStats& stats,
                             const ClassWeights& weights, const EvalOptions& options) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  auto report = evaluate_predictions(
      data, indices, stats, weights,
      [&model](const Batch& b) { return torch::softmax(model(b.images), 1); }, options);
  model->train(was_training);
  return report;
}

MetricsReport evaluate(const fs::path& checkpoint, const SegmentationDataset& data,
                       const std::vector<std::string>& ids,
                       const std::optional<ModelConfig>& expected, const EvalOptions& options) {
  const auto meta = load_checkpoint(checkpoint);
  if (expected) {
    const auto fields = meta.config.diff(*expected);
    if (!fields.empty()) {
      std::string joined;
      for (const auto& f : fields) joined += (joined.empty() ? "" : ", ") + f;
      throw ConfigError(joined, "config differs from the checkpoint snapshot");
    }
  }
  if (meta.config.num_classes != data.num_classes()) {
    throw ConfigError("num_classes", "checkpoint has " + std::to_string(meta.config.num_classes) +
                                         " classes, dataset has " +
                                         std::to_string(data.num_classes()));
  }
  JetSeg model(meta.config);
  load_checkpoint(checkpoint, &model);
  const auto indices = indices_of(data, ids);
  return evaluate_model(model, data, indices, meta.stats, meta.weights, options);
}

// ---------------------------------------------------------------------------
// Training

RunRecord train(const ModelConfig& config, const SegmentationDataset& data,
                const SplitManifest& splits, const TrainOptions& options,
                const EpochCallback& on_epoch) {
  config.validate();
  if (config.num_classes != data.num_classes()) {
    throw ConfigError("num_classes", "config has " + std::to_string(config.num_classes) +
                                         " classes, dataset has " +
                                         std::to_string(data.num_classes()));
  }
  if (options.batch_size < 1) throw InvalidSpec("batch size must be positive");
  if (options.epochs < 0) throw InvalidSpec("epochs must be non-negative");

  torch::manual_seed(options.seed);
  JetSeg model(config);
  torch::optim::Adam optimizer(model->parameters(),
                               torch::optim::AdamOptions(options.learning_rate));

  RunRecord record;
  record.config = config;
  record.options = options;
  record.manifest = splits;
  record.parameters = count_parameters(*model);
  record.complexity = model_complexity(*model, {1, 3, config.input_h, config.input_w});

  const auto train_idx = indices_of(data, splits.train);
  const auto val_idx = indices_of(data, splits.val);

  Checkpoint meta;
  meta.config = config;
  int first_epoch = 1;
  if (options.resume_from) {
    meta = load_checkpoint(*options.resume_from, &model, &optimizer);
    if (auto fields = meta.config.diff(config); !fields.empty()) {
      throw ConfigError(fields.front(), "resume checkpoint was written for another config");
    }
    first_epoch = meta.epoch + 1;
    record.epochs = meta.history;
  } else {
    meta.stats = compute_channel_stats(data, train_idx);
    std::vector<std::int64_t> counts(config.num_classes, 0);
    for (auto i : train_idx) {
      const auto c = pixel_counts(data.get(i).labels, config.num_classes);
      for (std::int64_t k = 0; k < config.num_classes; ++k) counts[k] += c[k];
    }
    meta.weights = class_weights(counts, options.beta);
  }
  record.manifest.stats = meta.stats;
  record.weights = meta.weights;

  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);
  const int last_epoch =
      options.stop_after ? std::min(options.epochs, *options.stop_after) : options.epochs;

  JetLossOptions loss_opts;
  loss_opts.epsilon = options.epsilon;
  EvalOptions eval_opts;
  eval_opts.epsilon = options.epsilon;
  const auto batch = static_cast<std::size_t>(options.batch_size);

  for (int epoch = first_epoch; epoch <= last_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto order = train_idx;
    std::mt19937_64 rng(options.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    model->train();
    double loss_sum = 0;
    std::int64_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> chunk(order.data() + start,
                                               std::min(batch, order.size() - start));
      const auto b = make_batch(data, chunk, meta.stats);
      const auto logits = model(b.images);
      torch::Tensor loss;
      if (options.loss == LossKind::jetloss) {
        loss = jetloss(torch::softmax(logits, 1), b.labels, meta.weights, loss_opts).total;
      } else {
        loss = cross_entropy_loss(logits, b.labels, &meta.weights);
      }
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::string dump;
        if (!options.out_dir.empty()) {
          dump = (options.out_dir / "diverged.pt").string();
          Checkpoint d = meta;
          d.epoch = epoch - 1;
          d.history = record.epochs;
          save_checkpoint(dump, model, &optimizer, d);
        }
        throw TrainingDiverged(epoch, batches, dump);
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      loss_sum += value;
      ++batches;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0;
    if (!val_idx.empty()) {
      const auto m = evaluate_model(model, data, val_idx, meta.stats, meta.weights, eval_opts);
      er.val_loss = m.loss;
      er.val_miou = m.miou_present;
      er.val_miou_all = m.miou_all;
    }
    er.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count();
    record.epochs.push_back(er);

    meta.epoch = epoch;
    meta.history = record.epochs;
    if (!options.out_dir.empty()) {
      if (er.val_miou > meta.best_miou) {
        meta.best_miou = er.val_miou;
        save_checkpoint(options.out_dir / "best.pt", model, &optimizer, meta);
      }
      save_checkpoint(options.out_dir / "last.pt", model, &optimizer, meta);
    } else if (er.val_miou > meta.best_miou) {
      meta.best_miou = er.val_miou;
    }
    if (on_epoch) on_epoch(er);
  }

  if (!splits.test.empty()) {
    const auto test_idx = indices_of(data, splits.test);
    record.test = evaluate_model(model, data, test_idx, meta.stats, meta.weights, eval_opts);
  }
  if (!options.out_dir.empty()) record.write(options.out_dir);
  return record;
}

// ---------------------------------------------------------------------------
// Benchmark and analysis

LatencySummary summarize_latencies(std::vector<double> lat) {
  LatencySummary s;
  if (lat.empty()) return s;
  std::sort(lat.begin(), lat.end());
  const auto n = lat.size();
  s.median_ms = n % 2 == 1 ? lat[n / 2] : 0.5 * (lat[n / 2 - 1] + lat[n / 2]);
  s.mean_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(n);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = lat[std::max<std::size_t>(rank, 1) - 1];
  s.fps = s.median_ms > 0 ? 1000.0 / s.median_ms : 0;
  return s;
}

nlohmann::json BenchResult::to_json() const {
  return {{"type", "bench"},
          {"profile", to_string(profile)},
          {"input_size", {input_h, input_w}},
          {"batch", batch},
          {"warmup", warmup},
          {"iters", iters},
          {"parameters", parameters},
          {"median_ms", summary.median_ms},
          {"mean_ms", summary.mean_ms},
          {"p95_ms", summary.p95_ms},
          {"fps", summary.fps},
          {"latencies_ms", latencies_ms}};
}

BenchResult benchmark(const ModelConfig& config, std::int64_t input_h, std::int64_t input_w,
                      int warmup, int iters, std::int64_t batch, std::uint64_t seed) {
  if (iters < kMinBenchIters) {
    throw InvalidInput("benchmark needs at least " + std::to_string(kMinBenchIters) +
                       " timed iterations");
  }
  if (warmup < 0 || batch < 1) throw InvalidInput("invalid warmup or batch size");
  torch::manual_seed(seed);
  JetSeg model(config);
  model->eval();
  torch::NoGradGuard no_grad;
  const auto x = torch::randn({batch, 3, input_h, input_w});

  BenchResult r;
  r.profile = config.profile;
  r.input_h = input_h;
  r.input_w = input_w;
  r.batch = batch;
  r.warmup = warmup;
  r.iters = iters;
  r.parameters = count_parameters(*model);
  for (int i = 0; i < warmup; ++i) (void)model(x);
  r.latencies_ms.reserve(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    // CPU execution is synchronous, so the timestamps bracket the whole forward.
    const auto t0 = std::chrono::steady_clock::now();
    auto y = model(x);
    (void)y.data_ptr();
    const auto t1 = std::chrono::steady_clock::now();
    r.latencies_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.summary = summarize_latencies(r.latencies_ms);
  return r;
}

ComplexityReport analyze(const ModelConfig& config, std::int64_t input_h, std::int64_t input_w) {
  JetSeg model(config);
  return model_complexity(*model, {1, 3, input_h, input_w});
}

}  // namespace jetseg
