#pragma once

// Reference implementations used by the tests. They work on plain vectors with
// explicit loops and share no code with the library.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace oracle {

using Grid = std::vector<std::vector<std::int64_t>>;  // [row][col]

/// Source channel read by each output channel, obtained by literally laying the
/// channels out as a g x (C/g) table and reading it column by column.
std::vector<std::int64_t> shuffle_sources(std::int64_t channels, std::int64_t groups);

/// Direct depthwise 2-D correlation of one channel with zero padding.
std::vector<double> depthwise_conv(const std::vector<double>& img, std::int64_t h,
                                   std::int64_t w, const std::vector<double>& kernel,
                                   std::int64_t kh, std::int64_t kw, std::int64_t dh,
                                   std::int64_t dw, std::int64_t ph, std::int64_t pw);

struct Tally {
  std::vector<std::int64_t> tp, fp, fn;
};

/// Per-pixel confusion tally over flattened label lists, target == ignore skipped.
Tally tally(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& target,
            std::int64_t classes, std::int64_t ignore = 255);

/// IoU per class as |pred_c & target_c| / |pred_c | target_c| from pixel sets;
/// mean over classes whose union is non-empty.
double brute_miou(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& target,
                  std::int64_t classes, std::int64_t ignore = 255);

/// Boundary pixels: some pixel within Chebyshev distance `width` carries another label.
std::vector<std::vector<bool>> boundary(const Grid& labels, std::int64_t width);

struct BoundaryTally {
  double tp = 0, fp = 0, fn = 0;
};

BoundaryTally boundary_tally(const Grid& pred, const Grid& target, std::int64_t width);

/// Recall + precision + boundary score loss, recomputed from raw per-pixel probabilities.
/// probs[p][c] for pixel p (row-major over all images), target[p], pred boundary from argmax.
double jetloss_scalar(const std::vector<std::vector<double>>& probs,
                      const std::vector<std::int64_t>& target, std::int64_t n, std::int64_t h,
                      std::int64_t w, const std::vector<double>& weights, double eps);

struct GradCheck {
  double max_rel_error = 0;
  std::int64_t checked = 0;
  std::string worst;
};

/// Central differences of `f` about `x` (double). Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor). At most `max_entries`
/// evenly spaced entries of each input are probed.
GradCheck gradcheck(const std::function<torch::Tensor()>& f, std::vector<torch::Tensor> inputs,
                    double step = 1e-6, double floor = 1e-6, std::int64_t max_entries = 64);

}  // namespace oracle
