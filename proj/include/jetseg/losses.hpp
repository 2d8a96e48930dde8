#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace jetseg {

inline constexpr std::int64_t kIgnoreIndex = 255;

/// Hard per-class pixel tallies; mergeable across batches and workers.
struct ConfusionStats {
  std::int64_t num_classes = 0;
  std::vector<std::int64_t> tp, fp, fn;

  explicit ConfusionStats(std::int64_t classes = 0)
      : num_classes(classes), tp(classes, 0), fp(classes, 0), fn(classes, 0) {}

  ConfusionStats& merge(const ConfusionStats& other);
  friend bool operator==(const ConfusionStats&, const ConfusionStats&) = default;
};

/// Differentiable per-class counts, each a (C,) tensor in the dtype of the probabilities.
struct SoftConfusion {
  torch::Tensor tp, fp, fn;
};

/// pred, target: (N, H, W) integer label maps. Pixels whose target is ignore_index are
/// skipped; predictions must lie in [0, C).
ConfusionStats hard_confusion(const torch::Tensor& pred, const torch::Tensor& target,
                              std::int64_t num_classes, std::int64_t ignore_index = kIgnoreIndex);

/// probs: (N, C, H, W) with rows summing to one; target: (N, H, W).
SoftConfusion soft_confusion(const torch::Tensor& probs, const torch::Tensor& target,
                             std::int64_t ignore_index = kIgnoreIndex);

struct ClassWeights {
  std::vector<double> w;
  double beta = 0.999;

  torch::Tensor tensor(const torch::TensorOptions& opts) const;
  double sum() const;
};

/// Effective-number weights (1 - beta) / (1 - beta^n_c), normalised to sum to C when
/// `normalize`. Absent classes (n_c = 0) get the weight of a single-pixel class.
ClassWeights class_weights(const std::vector<std::int64_t>& pixel_counts, double beta,
                           bool normalize = true);

/// Per-class pixel counts of a label tensor, ignore pixels excluded.
std::vector<std::int64_t> pixel_counts(const torch::Tensor& labels, std::int64_t num_classes,
                                       std::int64_t ignore_index = kIgnoreIndex);

struct BoundaryStats {
  double tp = 0, fp = 0, fn = 0;

  BoundaryStats& merge(const BoundaryStats& other);
  /// (tp + eps) / (tp + fp + fn + eps); 1 when there is no boundary at all.
  double iou(double epsilon = 1e-6) const;
  friend bool operator==(const BoundaryStats&, const BoundaryStats&) = default;
};

/// Pixels whose (2*width+1)^2 neighbourhood, clipped to the image, contains a different
/// label. Works on (H, W) or (N, H, W) maps; returns a bool tensor of the same shape.
torch::Tensor boundary_mask(const torch::Tensor& labels, std::int64_t width = 1);

/// Tallies over U = boundary(pred) | boundary(target), ignore pixels excluded:
///   tp = pixels of U where pred == target
///   fp = pixels of boundary(pred) where pred != target
///   fn = pixels of boundary(target) where pred != target
BoundaryStats boundary_stats(const torch::Tensor& pred, const torch::Tensor& target,
                             std::int64_t width = 1, std::int64_t ignore_index = kIgnoreIndex);

struct JetLossOptions {
  double epsilon = 1e-6;
  std::int64_t boundary_width = 1;
  std::int64_t ignore_index = kIgnoreIndex;
  /// Reject probabilities whose class rows do not sum to one within 1e-5.
  bool check_normalized = true;
};

struct JetLossTerms {
  torch::Tensor total;      // 3*S - (recall + precision + boundary), S = sum of weights
  torch::Tensor recall;     // sum_c w_c (tp_c + eps) / (tp_c + fn_c + eps)
  torch::Tensor precision;  // sum_c w_c (tp_c + eps) / (tp_c + fp_c + eps)
  torch::Tensor boundary;   // S * boundary IoU
};

/// Recall + precision + boundary-IoU score turned into a non-negative loss that is zero
/// for a perfect prediction. Differentiable in `probs` through the soft counts; the
/// predicted boundary mask comes from the (constant) argmax.
JetLossTerms jetloss(const torch::Tensor& probs, const torch::Tensor& target,
                     const ClassWeights& weights, const JetLossOptions& options = {});

/// Weighted pixelwise cross-entropy baseline over logits.
torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                 const ClassWeights* weights = nullptr,
                                 std::int64_t ignore_index = kIgnoreIndex);

enum class AbsentClassPolicy {
  exclude,        // classes with tp + fp + fn == 0 leave the mean
  count_as_zero,  // divide by every class, absent ones contributing 0
};

/// Per-class IoU; nullopt for classes with tp + fp + fn == 0.
std::vector<std::optional<double>> per_class_iou(const ConfusionStats& stats);

/// Mean IoU. Throws UndefinedMetric when every class is absent.
double miou(const ConfusionStats& stats, AbsentClassPolicy policy = AbsentClassPolicy::exclude);

struct MetricsReport {
  std::vector<std::optional<double>> class_iou;
  double miou_present = 0;  // AbsentClassPolicy::exclude
  double miou_all = 0;      // AbsentClassPolicy::count_as_zero
  double loss = 0, recall = 0, precision = 0, boundary = 0;
  double pixel_accuracy = 0;
  BoundaryStats boundary_stats;

  nlohmann::json to_json() const;
  void print(std::ostream& os, const std::vector<std::string>& class_names = {}) const;
};

}  // namespace jetseg
