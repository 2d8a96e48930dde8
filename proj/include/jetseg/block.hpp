#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "jetseg/ops.hpp"

namespace jetseg {

enum class BlockVariant { input, standard };

struct JetBlockSpec {
  BlockVariant variant = BlockVariant::standard;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  double expansion_ratio = 2.0;  // standard variant only
  std::int64_t stride = 1;
  /// Levels, kernels and dilations; channel counts, stride and groups are filled by the block.
  JetConvSpec jetconv;
  AttentionKind attention = AttentionKind::cbam;  // standard variant only
  Activation activation = Activation::reu;
  std::int64_t group_max = 8;
  AttentionOptions attention_options;

  /// Width after the expanding GPConv; throws InvalidSpec if not an integer.
  std::int64_t expanded_channels() const;
};

/// JetConv -> BN -> activation.
class InputBlockImpl : public torch::nn::Module {
 public:
  explicit InputBlockImpl(const JetBlockSpec& spec);

  torch::Tensor forward(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  JetConv jetconv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};

 private:
  JetBlockSpec spec_;
};
TORCH_MODULE(InputBlock);

/// Expand GPConv -> BN -> act -> channel shuffle -> JetConv -> attention -> act ->
/// reduce GPConv -> BN, plus a (projected when shapes differ) skip.
class StandardBlockImpl : public torch::nn::Module {
 public:
  explicit StandardBlockImpl(const JetBlockSpec& spec);

  torch::Tensor forward(const torch::Tensor& x);
  /// The skip path alone (identity or projection).
  torch::Tensor skip(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  const JetBlockSpec& spec() const { return spec_; }
  std::int64_t expanded() const { return expanded_; }

  GroupedPointwise expand{nullptr};
  torch::nn::BatchNorm2d expand_bn{nullptr};
  JetConv jetconv{nullptr};
  Attention attention{nullptr};
  GroupedPointwise reduce{nullptr};
  torch::nn::BatchNorm2d reduce_bn{nullptr};
  GroupedPointwise skip_proj{nullptr};
  torch::nn::BatchNorm2d skip_bn{nullptr};

 private:
  JetBlockSpec spec_;
  std::int64_t expanded_;
  std::int64_t shuffle_groups_;
};
TORCH_MODULE(StandardBlock);

/// Output shape of either block variant, without building it.
FeatureShape infer_block_shape(const JetBlockSpec& spec, const FeatureShape& in);

}  // namespace jetseg
