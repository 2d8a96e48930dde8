#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jetseg/complexity.hpp"
#include "jetseg/data.hpp"
#include "jetseg/decoder.hpp"
#include "jetseg/losses.hpp"

namespace jetseg {

enum class LossKind { jetloss, cross_entropy };

std::string to_string(LossKind kind);
LossKind parse_loss(std::string_view text);

struct TrainOptions {
  int epochs = 15;
  std::int64_t batch_size = 8;
  double learning_rate = 1e-3;  // Adam, no schedule
  std::uint64_t seed = 0;
  LossKind loss = LossKind::jetloss;
  double beta = 0.999;
  double epsilon = 1e-6;
  /// Checkpoints (best.pt, last.pt) and records go here; empty disables file output.
  std::filesystem::path out_dir;
  /// Continue from a last.pt written by an earlier run with the same options.
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this epoch even if `epochs` is larger (used to interrupt runs).
  std::optional<int> stop_after;

  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_miou = 0;      // present classes
  double val_miou_all = 0;  // all classes
  double wall_ms = 0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct RunRecord {
  ModelConfig config;
  TrainOptions options;
  std::vector<EpochRecord> epochs;
  std::optional<MetricsReport> test;
  ComplexityReport complexity;
  std::int64_t parameters = 0;
  SplitManifest manifest;
  ClassWeights weights;

  /// Line-delimited JSON, one record per line; wall-clock fields appear only in
  /// "wall_ms" keys.
  std::vector<nlohmann::json> records() const;
  /// records.jsonl, summary.txt, config.txt and the split manifest.
  void write(const std::filesystem::path& dir) const;
};

/// Thrown when a batch produces a non-finite loss; a state dump is written when possible.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, std::int64_t batch, const std::string& dump);
  int epoch() const { return epoch_; }
  std::int64_t batch() const { return batch_; }

 private:
  int epoch_;
  std::int64_t batch_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from scratch (or resumes) with Adam and JetLoss (or the cross-entropy baseline);
/// class weights come from training-split pixel counts, standardisation from training-split
/// statistics. Deterministic for a given seed on a single thread.
RunRecord train(const ModelConfig& config, const SegmentationDataset& data,
                const SplitManifest& splits, const TrainOptions& options,
                const EpochCallback& on_epoch = {});

struct Checkpoint {
  ModelConfig config;
  int epoch = 0;
  ChannelStats stats;
  ClassWeights weights;
  std::vector<EpochRecord> history;
  double best_miou = -1;
};

void save_checkpoint(const std::filesystem::path& path, JetSeg& model,
                     torch::optim::Optimizer* optimizer, const Checkpoint& meta);
/// Loads metadata; also restores `model` / `optimizer` when given.
Checkpoint load_checkpoint(const std::filesystem::path& path, JetSeg* model = nullptr,
                           torch::optim::Optimizer* optimizer = nullptr);

/// Produces (N, C, H, W) class probabilities for a standardised batch.
using Predictor = std::function<torch::Tensor(const Batch&)>;

struct EvalOptions {
  std::int64_t batch_size = 4;
  double epsilon = 1e-6;
};

/// Metrics over `indices`: confusion merged across batches, loss terms averaged per batch.
MetricsReport evaluate_predictions(const SegmentationDataset& data,
                                   std::span<const std::size_t> indices,
                                   const ChannelStats& stats, const ClassWeights& weights,
                                   const Predictor& predictor, const EvalOptions& options = {});

MetricsReport evaluate_model(JetSeg& model, const SegmentationDataset& data,
                             std::span<const std::size_t> indices, const ChannelStats& stats,
                             const ClassWeights& weights, const EvalOptions& options = {});

/// Loads a checkpoint and evaluates the given ids. When `expected` is given, a differing
/// config snapshot raises ConfigError naming the fields.
MetricsReport evaluate(const std::filesystem::path& checkpoint, const SegmentationDataset& data,
                       const std::vector<std::string>& ids,
                       const std::optional<ModelConfig>& expected = std::nullopt,
                       const EvalOptions& options = {});

struct LatencySummary {
  double median_ms = 0, mean_ms = 0, p95_ms = 0, fps = 0;
};

/// FPS = 1000 / median latency; p95 by nearest rank.
LatencySummary summarize_latencies(std::vector<double> latencies_ms);

struct BenchResult {
  Profile profile = Profile::workstation;
  std::int64_t input_h = 0, input_w = 0, batch = 1;
  int warmup = 0;
  int iters = 0;
  std::vector<double> latencies_ms;
  LatencySummary summary;
  std::int64_t parameters = 0;

  nlohmann::json to_json() const;
};

inline constexpr int kMinBenchIters = 100;

/// Eval-mode, no-grad forwards: `warmup` untimed then `iters` timed (>= 100).
BenchResult benchmark(const ModelConfig& config, std::int64_t input_h, std::int64_t input_w,
                      int warmup, int iters, std::int64_t batch = 1, std::uint64_t seed = 0);

/// Complexity of a freshly built model at the given input size.
ComplexityReport analyze(const ModelConfig& config, std::int64_t input_h, std::int64_t input_w);

/// Writes records to `path` as line-delimited JSON.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace jetseg
