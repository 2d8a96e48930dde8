#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "jetseg/complexity.hpp"

namespace jetseg {

enum class AttentionKind { cbam, sam, ecam };
enum class Activation { reu, tanhexp };

std::string to_string(AttentionKind kind);
std::string to_string(Activation act);
AttentionKind parse_attention(std::string_view text);
Activation parse_activation(std::string_view text);

/// REU: x for x >= 0, x * e^x otherwise.
torch::Tensor reu(const torch::Tensor& x);
/// TanhExp: x * tanh(e^x).
torch::Tensor tanhexp(const torch::Tensor& x);
torch::Tensor activate(const torch::Tensor& x, Activation act);

/// ShuffleNet channel shuffle: output channel j reads input channel
/// (j mod g) * (C/g) + floor(j/g).
torch::Tensor channel_shuffle(const torch::Tensor& x, std::int64_t groups);

/// Largest g <= g_max dividing both channel counts.
std::int64_t estimate_groups(std::int64_t c_in, std::int64_t c_out, std::int64_t g_max);

FeatureShape shape_of(const torch::Tensor& x);

/// Output extent of a convolution along one axis.
std::int64_t conv_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                         std::int64_t padding, std::int64_t dilation);

struct JetConvSpec {
  std::int64_t in_channels = 0;
  /// 0 means equal to in_channels. Differing counts (the stem) get a projected residual.
  std::int64_t out_channels = 0;
  int levels = 3;
  std::vector<std::int64_t> kernel_sizes;    // empty: {3, 5, 7} truncated to levels
  std::vector<std::int64_t> dilation_rates;  // empty: {1, 2, 3} truncated to levels
  /// Groups of the pointwise projection; 0 means estimate_groups(levels*in, out, group_max).
  std::int64_t groups = 0;
  std::int64_t group_max = 8;
  std::int64_t stride = 1;

  std::int64_t resolved_out() const { return out_channels == 0 ? in_channels : out_channels; }
  /// Fills defaulted fields and validates; throws InvalidSpec.
  JetConvSpec resolved() const;
};

/// Depthwise factorised (k x 1, dilation d) then (1 x k, dilation d), followed by a
/// square non-dilated k x k depthwise convolution. Stride applies to the first conv.
class CDDConvImpl : public torch::nn::Module {
 public:
  CDDConvImpl(std::int64_t channels, std::int64_t kernel, std::int64_t dilation,
              std::int64_t stride = 1);

  torch::Tensor forward(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  torch::nn::Conv2d vertical{nullptr};
  torch::nn::Conv2d horizontal{nullptr};
  torch::nn::Conv2d square{nullptr};

 private:
  std::int64_t channels_, kernel_, dilation_, stride_;
};
TORCH_MODULE(CDDConv);

/// Grouped 1x1 convolution.
class GroupedPointwiseImpl : public torch::nn::Module {
 public:
  GroupedPointwiseImpl(std::int64_t c_in, std::int64_t c_out, std::int64_t groups,
                       std::int64_t stride = 1, bool bias = false);

  torch::Tensor forward(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log,
                        const std::string& name = "gpconv") const;

  std::int64_t groups() const { return groups_; }

  torch::nn::Conv2d conv{nullptr};

 private:
  std::int64_t c_in_, c_out_, groups_, stride_;
};
TORCH_MODULE(GroupedPointwise);

/// Multi-level CDDC operator with cumulative fusion, concatenation, grouped
/// projection and a residual connection.
class JetConvImpl : public torch::nn::Module {
 public:
  explicit JetConvImpl(const JetConvSpec& spec);

  torch::Tensor forward(const torch::Tensor& x);
  /// Concatenated cumulative sums s_1..s_L, before projection (levels*C channels).
  torch::Tensor fused(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  const JetConvSpec& spec() const { return spec_; }

  torch::nn::ModuleList branches{nullptr};
  GroupedPointwise projection{nullptr};
  /// Present only when input and output channel counts differ.
  GroupedPointwise shortcut{nullptr};

 private:
  torch::Tensor residual(const torch::Tensor& x);

  JetConvSpec spec_;
};
TORCH_MODULE(JetConv);

struct AttentionOptions {
  std::int64_t reduction = 8;       // CBAM channel bottleneck ratio
  std::int64_t spatial_kernel = 7;  // SAM kernel
};

/// ECA kernel size: nearest odd integer to |log2(C)/2 + 0.5| (at least 1).
std::int64_t eca_kernel_size(std::int64_t channels);

/// CBAM channel gate: shared bottleneck MLP over average- and max-pooled descriptors.
class ChannelGateImpl : public torch::nn::Module {
 public:
  ChannelGateImpl(std::int64_t channels, std::int64_t reduction);
  /// (N, C, 1, 1) gate in (0, 1).
  torch::Tensor forward(const torch::Tensor& x);
  void describe(const FeatureShape& in, LayerLog& log) const;

  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};

 private:
  std::int64_t channels_, hidden_;
};
TORCH_MODULE(ChannelGate);

/// Spatial gate: k x k conv over the channel-wise mean and max maps.
class SpatialGateImpl : public torch::nn::Module {
 public:
  explicit SpatialGateImpl(std::int64_t kernel);
  /// (N, 1, H, W) gate in (0, 1).
  torch::Tensor forward(const torch::Tensor& x);
  void describe(const FeatureShape& in, LayerLog& log) const;

  torch::nn::Conv2d conv{nullptr};

 private:
  std::int64_t kernel_;
};
TORCH_MODULE(SpatialGate);

/// Efficient channel gate: 1-D conv across the pooled channel descriptor.
class EfficientChannelGateImpl : public torch::nn::Module {
 public:
  explicit EfficientChannelGateImpl(std::int64_t channels);
  /// (N, C, 1, 1) gate in (0, 1).
  torch::Tensor forward(const torch::Tensor& x);
  void describe(const FeatureShape& in, LayerLog& log) const;

  torch::nn::Conv1d conv{nullptr};

 private:
  std::int64_t channels_, kernel_;
};
TORCH_MODULE(EfficientChannelGate);

/// x * gate(x) for CBAM (channel then spatial), SAM (spatial) or ECAM (channel).
class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(AttentionKind kind, std::int64_t channels, AttentionOptions options = {});

  torch::Tensor forward(const torch::Tensor& x);
  /// Effective elementwise gate, expanded to x's shape; forward(x) == x * gate(x).
  torch::Tensor gate(const torch::Tensor& x);
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  AttentionKind kind() const { return kind_; }

  ChannelGate channel{nullptr};
  SpatialGate spatial{nullptr};
  EfficientChannelGate efficient{nullptr};

 private:
  AttentionKind kind_;
};
TORCH_MODULE(Attention);

/// Accounting helpers shared by the composite modules.
void describe_bn(LayerLog& log, const std::string& name, const FeatureShape& s,
                 const torch::nn::Module& bn);
void describe_act(LayerLog& log, const std::string& name, const FeatureShape& s);

}  // namespace jetseg
