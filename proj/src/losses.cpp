#include "jetseg/losses.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "jetseg/errors.hpp"

namespace jetseg {

ConfusionStats& ConfusionStats::merge(const ConfusionStats& other) {
  if (other.num_classes != num_classes) {
    throw InvalidInput("cannot merge confusion stats with different class counts");
  }
  for (std::int64_t c = 0; c < num_classes; ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
  }
  return *this;
}

namespace {

void check_label_maps(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw InvalidInput("label maps differ in shape");
  }
}

void check_targets(const torch::Tensor& target, const torch::Tensor& valid,
                   std::int64_t num_classes) {
  auto t = target.masked_select(valid);
  if (t.numel() > 0 && (t.min().item<std::int64_t>() < 0 ||
                        t.max().item<std::int64_t>() >= num_classes)) {
    throw InvalidInput("target labels must lie in [0, " + std::to_string(num_classes) +
                       ") or be the ignore index");
  }
}

}  // namespace

ConfusionStats hard_confusion(const torch::Tensor& pred, const torch::Tensor& target,
                              std::int64_t num_classes, std::int64_t ignore_index) {
  check_label_maps(pred, target);
  if (num_classes < 1) throw InvalidInput("num_classes must be positive");
  auto p = pred.reshape({-1}).to(torch::kLong);
  auto t = target.reshape({-1}).to(torch::kLong);
  auto valid = t != ignore_index;
  check_targets(t, valid, num_classes);
  p = p.masked_select(valid);
  t = t.masked_select(valid);
  if (p.numel() > 0 && (p.min().item<std::int64_t>() < 0 ||
                        p.max().item<std::int64_t>() >= num_classes)) {
    throw InvalidInput("predicted labels out of range");
  }
  auto matrix = torch::bincount(t * num_classes + p, {}, num_classes * num_classes)
                    .view({num_classes, num_classes})
                    .to(torch::kLong)
                    .cpu();
  auto diag = matrix.diagonal();
  auto rows = matrix.sum(1);
  auto cols = matrix.sum(0);
  ConfusionStats s(num_classes);
  for (std::int64_t c = 0; c < num_classes; ++c) {
    s.tp[c] = diag[c].item<std::int64_t>();
    s.fn[c] = rows[c].item<std::int64_t>() - s.tp[c];
    s.fp[c] = cols[c].item<std::int64_t>() - s.tp[c];
  }
  return s;
}

SoftConfusion soft_confusion(const torch::Tensor& probs, const torch::Tensor& target,
                             std::int64_t ignore_index) {
  if (probs.dim() != 4 || target.dim() != 3 || probs.size(0) != target.size(0) ||
      probs.size(2) != target.size(1) || probs.size(3) != target.size(2)) {
    throw InvalidInput("soft_confusion expects probs (N,C,H,W) and target (N,H,W)");
  }
  const auto classes = probs.size(1);
  auto t = target.to(torch::kLong);
  auto valid = t != ignore_index;
  check_targets(t, valid, classes);
  auto safe = torch::where(valid, t, torch::zeros_like(t));
  auto validf = valid.to(probs.scalar_type()).unsqueeze(1);
  auto onehot = torch::one_hot(safe, classes).permute({0, 3, 1, 2}).to(probs.scalar_type()) *
                validf;
  SoftConfusion s;
  s.tp = (probs * onehot).sum({0, 2, 3});
  s.fp = (probs * (validf - onehot)).sum({0, 2, 3});
  s.fn = ((1.0 - probs) * onehot).sum({0, 2, 3});
  return s;
}

torch::Tensor ClassWeights::tensor(const torch::TensorOptions& opts) const {
  return torch::tensor(w, torch::TensorOptions().dtype(torch::kDouble)).to(opts);
}

double ClassWeights::sum() const {
  double s = 0;
  for (auto v : w) s += v;
  return s;
}

ClassWeights class_weights(const std::vector<std::int64_t>& counts, double beta,
                           bool normalize) {
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw InvalidSpec("class weight beta must lie in [0, 1), got " + std::to_string(beta));
  }
  ClassWeights cw;
  cw.beta = beta;
  cw.w.reserve(counts.size());
  for (auto n : counts) {
    if (n < 0) throw InvalidInput("pixel counts must be non-negative");
    const double effective = 1.0 - std::pow(beta, static_cast<double>(std::max<std::int64_t>(n, 1)));
    cw.w.push_back((1.0 - beta) / effective);
  }
  if (normalize && !cw.w.empty()) {
    const double scale = static_cast<double>(cw.w.size()) / cw.sum();
    for (auto& v : cw.w) v *= scale;
  }
  return cw;
}

std::vector<std::int64_t> pixel_counts(const torch::Tensor& labels, std::int64_t num_classes,
                                       std::int64_t ignore_index) {
  auto t = labels.reshape({-1}).to(torch::kLong);
  auto valid = t != ignore_index;
  check_targets(t, valid, num_classes);
  auto hist = torch::bincount(t.masked_select(valid), {}, num_classes).to(torch::kLong).cpu();
  std::vector<std::int64_t> out(num_classes);
  for (std::int64_t c = 0; c < num_classes; ++c) out[c] = hist[c].item<std::int64_t>();
  return out;
}

BoundaryStats& BoundaryStats::merge(const BoundaryStats& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  return *this;
}

double BoundaryStats::iou(double epsilon) const { return (tp + epsilon) / (tp + fp + fn + epsilon); }

torch::Tensor boundary_mask(const torch::Tensor& labels, std::int64_t width) {
  if (width < 1) throw InvalidSpec("boundary width must be >= 1");
  if (labels.dim() != 2 && labels.dim() != 3) {
    throw InvalidInput("boundary_mask expects an (H,W) or (N,H,W) label map");
  }
  auto l = labels.to(torch::kFloat);
  const bool single = labels.dim() == 2;
  l = single ? l.unsqueeze(0).unsqueeze(0) : l.unsqueeze(1);
  const auto k = 2 * width + 1;
  auto hi = torch::max_pool2d(l, k, 1, width);
  auto lo = -torch::max_pool2d(-l, k, 1, width);
  auto mask = hi != lo;
  return single ? mask.squeeze(0).squeeze(0) : mask.squeeze(1);
}

BoundaryStats boundary_stats(const torch::Tensor& pred, const torch::Tensor& target,
                             std::int64_t width, std::int64_t ignore_index) {
  if (width < 1) throw InvalidSpec("boundary width must be >= 1");
  check_label_maps(pred, target);
  auto p = pred.to(torch::kLong);
  auto t = target.to(torch::kLong);
  auto valid = t != ignore_index;
  auto bp = boundary_mask(p, width) & valid;
  auto bt = boundary_mask(t, width) & valid;
  auto match = p == t;
  BoundaryStats s;
  s.tp = static_cast<double>(((bp | bt) & match).sum().item<std::int64_t>());
  s.fp = static_cast<double>((bp & ~match).sum().item<std::int64_t>());
  s.fn = static_cast<double>((bt & ~match).sum().item<std::int64_t>());
  return s;
}

JetLossTerms jetloss(const torch::Tensor& probs, const torch::Tensor& target,
                     const ClassWeights& weights, const JetLossOptions& options) {
  if (probs.dim() != 4) throw InvalidInput("jetloss expects probs of shape (N,C,H,W)");
  const auto classes = probs.size(1);
  if (static_cast<std::int64_t>(weights.w.size()) != classes) {
    throw InvalidInput("class weight count " + std::to_string(weights.w.size()) +
                       " does not match " + std::to_string(classes) + " classes");
  }
  if (options.check_normalized) {
    const auto dev = (probs.detach().sum(1) - 1.0).abs().max().item<double>();
    if (dev > 1e-5) {
      throw InvalidInput("class probabilities must sum to 1 (max deviation " +
                         std::to_string(dev) + ")");
    }
  }
  const double eps = options.epsilon;
  const auto sc = soft_confusion(probs, target, options.ignore_index);
  const auto w = weights.tensor(probs.options());
  const auto total_weight = w.sum();

  JetLossTerms terms;
  terms.recall = (w * (sc.tp + eps) / (sc.tp + sc.fn + eps)).sum();
  terms.precision = (w * (sc.tp + eps) / (sc.tp + sc.fp + eps)).sum();

  auto t = target.to(torch::kLong);
  auto valid = t != options.ignore_index;
  auto safe = torch::where(valid, t, torch::zeros_like(t));
  auto pred = probs.detach().argmax(1);
  auto bp = boundary_mask(pred, options.boundary_width) & valid;
  auto bt = boundary_mask(t, options.boundary_width) & valid;
  auto p_true = probs.gather(1, safe.unsqueeze(1)).squeeze(1);
  auto miss = 1.0 - p_true;
  auto tp_b = (p_true * (bp | bt).to(probs.scalar_type())).sum();
  auto fp_b = (miss * bp.to(probs.scalar_type())).sum();
  auto fn_b = (miss * bt.to(probs.scalar_type())).sum();
  terms.boundary = total_weight * (tp_b + eps) / (tp_b + fp_b + fn_b + eps);

  terms.total = 3.0 * total_weight - (terms.recall + terms.precision + terms.boundary);
  return terms;
}

torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& target,
                                 const ClassWeights* weights, std::int64_t ignore_index) {
  namespace F = torch::nn::functional;
  auto opts = F::CrossEntropyFuncOptions().ignore_index(ignore_index);
  if (weights) opts.weight(weights->tensor(logits.options()));
  return F::cross_entropy(logits, target.to(torch::kLong), opts);
}

std::vector<std::optional<double>> per_class_iou(const ConfusionStats& stats) {
  std::vector<std::optional<double>> out(stats.num_classes);
  for (std::int64_t c = 0; c < stats.num_classes; ++c) {
    const auto denom = stats.tp[c] + stats.fp[c] + stats.fn[c];
    if (denom > 0) out[c] = static_cast<double>(stats.tp[c]) / static_cast<double>(denom);
  }
  return out;
}

double miou(const ConfusionStats& stats, AbsentClassPolicy policy) {
  double sum = 0;
  std::int64_t present = 0;
  for (const auto& iou : per_class_iou(stats)) {
    if (!iou) continue;
    sum += *iou;
    ++present;
  }
  if (present == 0) throw UndefinedMetric("mIoU undefined: every class is absent");
  const auto denom = policy == AbsentClassPolicy::exclude ? present : stats.num_classes;
  return sum / static_cast<double>(denom);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json iou = nlohmann::json::array();
  for (const auto& v : class_iou) iou.push_back(v ? nlohmann::json(*v) : nlohmann::json());
  return {{"class_iou", iou},
          {"miou_present", miou_present},
          {"miou_all", miou_all},
          {"pixel_accuracy", pixel_accuracy},
          {"loss", loss},
          {"recall", recall},
          {"precision", precision},
          {"boundary", boundary},
          {"boundary_stats",
           {{"tp", boundary_stats.tp}, {"fp", boundary_stats.fp}, {"fn", boundary_stats.fn}}}};
}

void MetricsReport::print(std::ostream& os, const std::vector<std::string>& names) const {
  os << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < class_iou.size(); ++c) {
    const auto name = c < names.size() ? names[c] : "class " + std::to_string(c);
    os << "  " << std::left << std::setw(24) << name << std::right;
    if (class_iou[c]) {
      os << std::setw(8) << *class_iou[c] << "\n";
    } else {
      os << std::setw(8) << "-" << "\n";
    }
  }
  os << "  mIoU (present classes) " << miou_present << "\n"
     << "  mIoU (all classes)     " << miou_all << "\n"
     << "  pixel accuracy         " << pixel_accuracy << "\n"
     << "  loss " << loss << "  recall " << recall << "  precision " << precision
     << "  boundary " << boundary << "\n"
     << std::defaultfloat;
}

}  // namespace jetseg
