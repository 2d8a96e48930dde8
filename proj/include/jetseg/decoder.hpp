#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "jetseg/encoder.hpp"

namespace jetseg {

struct DecoderSpec {
  std::array<std::int64_t, 3> in_channels{};  // stride 4, 8, 16 features
  std::int64_t mid_channels = 32;
  std::int64_t head_channels = 24;
  std::int64_t num_classes = 2;
  std::int64_t group_max = 8;
  Activation activation = Activation::tanhexp;

  void validate() const;
};

/// RegSeg-style decoder: per-scale grouped 1x1 + BN + act to a common width,
/// upsample-and-sum at stride 4, 3x3 head, 1x1 classifier, bilinear upsample x4.
class RegSegDecoderImpl : public torch::nn::Module {
 public:
  explicit RegSegDecoderImpl(const DecoderSpec& spec);

  /// Features at strides 4, 8, 16; output (N, num_classes, 4*H1, 4*W1).
  torch::Tensor forward(const std::vector<torch::Tensor>& features);
  FeatureShape describe(const std::vector<FeatureShape>& features, LayerLog& log) const;

  const DecoderSpec& spec() const { return spec_; }

  std::array<GroupedPointwise, 3> branch{nullptr, nullptr, nullptr};
  std::array<torch::nn::BatchNorm2d, 3> branch_bn{nullptr, nullptr, nullptr};
  torch::nn::Conv2d head{nullptr};
  torch::nn::BatchNorm2d head_bn{nullptr};
  torch::nn::Conv2d classifier{nullptr};

 private:
  DecoderSpec spec_;
};
TORCH_MODULE(RegSegDecoder);

/// Throws InvalidInput unless there are three maps whose extents halve exactly.
void check_decoder_inputs(const std::vector<FeatureShape>& features);

DecoderSpec decoder_spec(const ModelConfig& config);

/// Full segmentation network: JetNet encoder + RegSeg-style decoder.
class JetSegImpl : public torch::nn::Module {
 public:
  explicit JetSegImpl(const ModelConfig& config);

  /// (N, 3, H, W) -> (N, num_classes, H, W) logits.
  torch::Tensor forward(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  const ModelConfig& config() const { return config_; }

  JetNet encoder{nullptr};
  RegSegDecoder decoder{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(JetSeg);

}  // namespace jetseg
