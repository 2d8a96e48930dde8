#include "jetseg/ops.hpp"

#include <cmath>
#include <numeric>

#include "jetseg/errors.hpp"

namespace jetseg {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::cbam: return "cbam";
    case AttentionKind::sam: return "sam";
    case AttentionKind::ecam: return "ecam";
  }
  return "?";
}

std::string to_string(Activation act) {
  return act == Activation::reu ? "reu" : "tanhexp";
}

AttentionKind parse_attention(std::string_view text) {
  if (text == "cbam") return AttentionKind::cbam;
  if (text == "sam") return AttentionKind::sam;
  if (text == "ecam") return AttentionKind::ecam;
  throw InvalidSpec("unknown attention kind '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
  if (text == "reu") return Activation::reu;
  if (text == "tanhexp") return Activation::tanhexp;
  throw InvalidSpec("unknown activation '" + std::string(text) + "'");
}

torch::Tensor reu(const torch::Tensor& x) {
  // exp of the clamped argument keeps the positive branch free of overflow.
  return x * torch::exp(torch::clamp_max(x, 0.0));
}

torch::Tensor tanhexp(const torch::Tensor& x) {
  // tanh(e^20) is 1 in double precision.
  return x * torch::tanh(torch::exp(torch::clamp_max(x, 20.0)));
}

torch::Tensor activate(const torch::Tensor& x, Activation act) {
  return act == Activation::reu ? reu(x) : tanhexp(x);
}

torch::Tensor channel_shuffle(const torch::Tensor& x, std::int64_t groups) {
  if (x.dim() != 4) throw InvalidInput("channel_shuffle expects a 4-D tensor");
  const auto c = x.size(1);
  if (groups < 1 || c % groups != 0) {
    throw InvalidSpec("channel_shuffle: groups " + std::to_string(groups) +
                      " does not divide " + std::to_string(c) + " channels");
  }
  if (groups == 1) return x;
  const auto n = x.size(0), h = x.size(2), w = x.size(3);
  return x.view({n, groups, c / groups, h, w}).transpose(1, 2).contiguous().view({n, c, h, w});
}

std::int64_t estimate_groups(std::int64_t c_in, std::int64_t c_out, std::int64_t g_max) {
  const auto common = std::gcd(c_in, c_out);
  for (auto g = std::min(g_max, common); g > 1; --g) {
    if (common % g == 0) return g;
  }
  return 1;
}

FeatureShape shape_of(const torch::Tensor& x) {
  if (x.dim() != 4) throw InvalidInput("expected a 4-D feature map");
  return {x.size(0), x.size(1), x.size(2), x.size(3)};
}

std::int64_t conv_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                         std::int64_t padding, std::int64_t dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

void describe_bn(LayerLog& log, const std::string& name, const FeatureShape& s,
                 const torch::nn::Module& bn) {
  LayerSpec spec{.kind = LayerKind::bn, .h_in = s.h, .w_in = s.w, .h_out = s.h, .w_out = s.w,
                 .c_in = s.c, .c_out = s.c};
  log.add(name, spec, &bn);
}

void describe_act(LayerLog& log, const std::string& name, const FeatureShape& s) {
  LayerSpec spec{.kind = LayerKind::act, .h_in = s.h, .w_in = s.w, .h_out = s.h, .w_out = s.w,
                 .c_in = s.c, .c_out = s.c};
  log.add(name, spec);
}

// ---------------------------------------------------------------------------
// CDDConv

namespace {

void check_kernel(std::int64_t kernel, std::int64_t dilation) {
  if (kernel % 2 == 0 || kernel < 3 || kernel > 7) {
    throw InvalidSpec("CDDC kernel must be one of 3, 5, 7 (got " + std::to_string(kernel) +
                      ")");
  }
  if (dilation < 1) {
    throw InvalidSpec("CDDC dilation must be >= 1 (got " + std::to_string(dilation) + ")");
  }
}

torch::nn::Conv2d depthwise(std::int64_t channels, std::int64_t kh, std::int64_t kw,
                            std::int64_t dh, std::int64_t dw, std::int64_t stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, {kh, kw})
                               .stride(stride)
                               .padding({dh * (kh - 1) / 2, dw * (kw - 1) / 2})
                               .dilation({dh, dw})
                               .groups(channels)
                               .bias(false));
}

}  // namespace

CDDConvImpl::CDDConvImpl(std::int64_t channels, std::int64_t kernel, std::int64_t dilation,
                         std::int64_t stride)
    : channels_(channels), kernel_(kernel), dilation_(dilation), stride_(stride) {
  check_kernel(kernel, dilation);
  if (channels < 1) throw InvalidSpec("CDDC needs at least one channel");
  if (stride < 1 || stride > 2) throw InvalidSpec("CDDC stride must be 1 or 2");
  vertical = register_module("vertical", depthwise(channels, kernel, 1, dilation, 1, stride));
  horizontal = register_module("horizontal", depthwise(channels, 1, kernel, 1, dilation, 1));
  square = register_module("square", depthwise(channels, kernel, kernel, 1, 1, 1));
}

torch::Tensor CDDConvImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_) {
    throw InvalidInput("CDDC expects " + std::to_string(channels_) + " channels");
  }
  return square(horizontal(vertical(x)));
}

FeatureShape CDDConvImpl::describe(const FeatureShape& in, LayerLog& log) const {
  const auto pad = dilation_ * (kernel_ - 1) / 2;
  FeatureShape mid = in;
  mid.h = conv_extent(in.h, kernel_, stride_, pad, dilation_);
  mid.w = conv_extent(in.w, 1, stride_, 0, 1);
  auto conv_spec = [this](const FeatureShape& a, const FeatureShape& b, std::int64_t kw,
                          std::int64_t kh, std::int64_t s) {
    return LayerSpec{.kind = LayerKind::conv, .kernel_w = kw, .kernel_h = kh, .h_in = a.h,
                     .w_in = a.w, .h_out = b.h, .w_out = b.w, .c_in = channels_,
                     .c_out = channels_, .stride = s, .groups = channels_};
  };
  log.add("vertical", conv_spec(in, mid, 1, kernel_, stride_), vertical.get());
  log.add("horizontal", conv_spec(mid, mid, kernel_, 1, 1), horizontal.get());
  log.add("square", conv_spec(mid, mid, kernel_, kernel_, 1), square.get());
  return mid;
}

// ---------------------------------------------------------------------------
// GroupedPointwise

GroupedPointwiseImpl::GroupedPointwiseImpl(std::int64_t c_in, std::int64_t c_out,
                                           std::int64_t groups, std::int64_t stride, bool bias)
    : c_in_(c_in), c_out_(c_out), groups_(groups), stride_(stride) {
  if (c_in < 1 || c_out < 1 || groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw InvalidSpec("GPConv: groups " + std::to_string(groups) + " must divide " +
                      std::to_string(c_in) + " and " + std::to_string(c_out));
  }
  conv = register_module(
      "conv", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(c_in, c_out, 1).stride(stride).groups(groups).bias(
                      bias)));
}

torch::Tensor GroupedPointwiseImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != c_in_) {
    throw InvalidInput("GPConv expects " + std::to_string(c_in_) + " input channels");
  }
  return conv(x);
}

FeatureShape GroupedPointwiseImpl::describe(const FeatureShape& in, LayerLog& log,
                                            const std::string& name) const {
  FeatureShape out{in.n, c_out_, conv_extent(in.h, 1, stride_, 0, 1),
                   conv_extent(in.w, 1, stride_, 0, 1)};
  log.add(name,
          LayerSpec{.kind = LayerKind::conv, .h_in = in.h, .w_in = in.w, .h_out = out.h,
                    .w_out = out.w, .c_in = c_in_, .c_out = c_out_, .stride = stride_,
                    .groups = groups_},
          conv.get());
  return out;
}

// ---------------------------------------------------------------------------
// JetConv

JetConvSpec JetConvSpec::resolved() const {
  JetConvSpec r = *this;
  if (r.in_channels < 1) throw InvalidSpec("JetConv in_channels must be positive");
  if (r.levels < 1 || r.levels > 3) {
    throw InvalidSpec("JetConv levels must be 1, 2 or 3 (got " + std::to_string(r.levels) + ")");
  }
  static const std::int64_t default_kernels[] = {3, 5, 7};
  static const std::int64_t default_dilations[] = {1, 2, 3};
  if (r.kernel_sizes.empty()) r.kernel_sizes.assign(default_kernels, default_kernels + r.levels);
  if (r.dilation_rates.empty()) {
    r.dilation_rates.assign(default_dilations, default_dilations + r.levels);
  }
  if (static_cast<int>(r.kernel_sizes.size()) != r.levels ||
      static_cast<int>(r.dilation_rates.size()) != r.levels) {
    throw InvalidSpec("JetConv needs one kernel size and one dilation per level");
  }
  for (int i = 0; i < r.levels; ++i) check_kernel(r.kernel_sizes[i], r.dilation_rates[i]);
  if (r.stride < 1 || r.stride > 2) throw InvalidSpec("JetConv stride must be 1 or 2");
  if (r.out_channels == 0) r.out_channels = r.in_channels;
  if (r.group_max < 1) throw InvalidSpec("JetConv group_max must be positive");
  const auto concat = r.levels * r.in_channels;
  if (r.groups == 0) r.groups = estimate_groups(concat, r.out_channels, r.group_max);
  if (concat % r.groups != 0 || r.out_channels % r.groups != 0) {
    throw InvalidSpec("JetConv groups " + std::to_string(r.groups) + " must divide " +
                      std::to_string(concat) + " and " + std::to_string(r.out_channels));
  }
  return r;
}

JetConvImpl::JetConvImpl(const JetConvSpec& spec) : spec_(spec.resolved()) {
  branches = register_module("branches", torch::nn::ModuleList());
  for (int i = 0; i < spec_.levels; ++i) {
    branches->push_back(CDDConv(spec_.in_channels, spec_.kernel_sizes[i],
                                spec_.dilation_rates[i], spec_.stride));
  }
  projection = register_module(
      "projection", GroupedPointwise(spec_.levels * spec_.in_channels, spec_.out_channels,
                                     spec_.groups));
  if (spec_.out_channels != spec_.in_channels) {
    shortcut = register_module("shortcut",
                               GroupedPointwise(spec_.in_channels, spec_.out_channels, 1));
  }
}

torch::Tensor JetConvImpl::fused(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw InvalidInput("JetConv expects " + std::to_string(spec_.in_channels) +
                       " channels, got shape " + (x.dim() == 4 ? shape_of(x).str() : "non-4D"));
  }
  std::vector<torch::Tensor> sums;
  sums.reserve(spec_.levels);
  for (const auto& branch : *branches) {
    auto b = branch->as<CDDConv>()->forward(x);
    sums.push_back(sums.empty() ? b : sums.back() + b);
  }
  return torch::cat(sums, 1);
}

torch::Tensor JetConvImpl::residual(const torch::Tensor& x) {
  auto r = x;
  if (spec_.stride > 1) {
    r = torch::avg_pool2d(r, spec_.stride, spec_.stride, 0, /*ceil_mode=*/true,
                          /*count_include_pad=*/false);
  }
  if (shortcut) r = shortcut(r);
  return r;
}

torch::Tensor JetConvImpl::forward(const torch::Tensor& x) {
  return projection(fused(x)) + residual(x);
}

FeatureShape JetConvImpl::describe(const FeatureShape& in, LayerLog& log) const {
  FeatureShape branch_out;
  int i = 0;
  for (const auto& branch : *branches) {
    auto scope = log.scope("branch" + std::to_string(i++));
    branch_out = branch->as<CDDConv>()->describe(in, log);
  }
  FeatureShape concat = branch_out;
  concat.c = spec_.levels * spec_.in_channels;
  const auto out = projection->describe(concat, log, "projection");
  if (spec_.stride > 1) {
    log.add("shortcut_pool",
            LayerSpec{.kind = LayerKind::pool, .kernel_w = spec_.stride,
                      .kernel_h = spec_.stride, .h_in = in.h, .w_in = in.w, .h_out = out.h,
                      .w_out = out.w, .c_in = in.c, .c_out = in.c, .stride = spec_.stride});
  }
  if (shortcut) shortcut->describe({in.n, in.c, out.h, out.w}, log, "shortcut");
  return out;
}

// ---------------------------------------------------------------------------
// Attention

std::int64_t eca_kernel_size(std::int64_t channels) {
  const auto t = static_cast<std::int64_t>(
      std::fabs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5));
  return std::max<std::int64_t>(1, t % 2 == 1 ? t : t + 1);
}

ChannelGateImpl::ChannelGateImpl(std::int64_t channels, std::int64_t reduction)
    : channels_(channels), hidden_(std::max<std::int64_t>(1, channels / reduction)) {
  fc1 = register_module("fc1", torch::nn::Linear(channels_, hidden_));
  fc2 = register_module("fc2", torch::nn::Linear(hidden_, channels_));
}

torch::Tensor ChannelGateImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0);
  auto avg = x.mean({2, 3});
  auto max = x.amax({2, 3});
  auto mlp = [this](const torch::Tensor& d) { return fc2(torch::relu(fc1(d))); };
  return torch::sigmoid(mlp(avg) + mlp(max)).view({n, channels_, 1, 1});
}

void ChannelGateImpl::describe(const FeatureShape& in, LayerLog& log) const {
  const LayerSpec pool{.kind = LayerKind::pool, .kernel_w = in.w, .kernel_h = in.h,
                       .h_in = in.h, .w_in = in.w, .c_in = in.c, .c_out = in.c};
  const LayerSpec fc_a{.kind = LayerKind::fc, .h_out = hidden_, .c_in = channels_,
                       .c_out = hidden_};
  const LayerSpec fc_b{.kind = LayerKind::fc, .h_out = channels_, .c_in = hidden_,
                       .c_out = channels_};
  const LayerSpec relu{.kind = LayerKind::act, .c_in = hidden_, .c_out = hidden_};
  const LayerSpec sig{.kind = LayerKind::act, .c_in = channels_, .c_out = channels_};
  log.add("avg_pool", pool);
  log.add("max_pool", pool);
  // The bottleneck runs on both descriptors; weights are counted on the first pass.
  log.add("fc1_avg", fc_a, fc1.get());
  log.add("relu_avg", relu);
  log.add("fc2_avg", fc_b, fc2.get());
  log.add("fc1_max", fc_a);
  log.add("relu_max", relu);
  log.add("fc2_max", fc_b);
  log.add("sigmoid", sig);
  describe_act(log, "gating", in);
}

SpatialGateImpl::SpatialGateImpl(std::int64_t kernel) : kernel_(kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw InvalidSpec("spatial gate kernel must be odd");
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(2, 1, kernel).padding(kernel / 2).bias(
                  false)));
}

torch::Tensor SpatialGateImpl::forward(const torch::Tensor& x) {
  auto desc = torch::cat({x.mean(1, true), x.amax(1, true)}, 1);
  return torch::sigmoid(conv(desc));
}

void SpatialGateImpl::describe(const FeatureShape& in, LayerLog& log) const {
  const LayerSpec pool{.kind = LayerKind::pool, .h_in = in.h, .w_in = in.w, .h_out = in.h,
                       .w_out = in.w, .c_in = in.c, .c_out = 1};
  log.add("channel_mean", pool);
  log.add("channel_max", pool);
  log.add("conv",
          LayerSpec{.kind = LayerKind::conv, .kernel_w = kernel_, .kernel_h = kernel_,
                    .h_in = in.h, .w_in = in.w, .h_out = in.h, .w_out = in.w, .c_in = 2,
                    .c_out = 1},
          conv.get());
  describe_act(log, "sigmoid", {in.n, 1, in.h, in.w});
  describe_act(log, "gating", in);
}

EfficientChannelGateImpl::EfficientChannelGateImpl(std::int64_t channels)
    : channels_(channels), kernel_(eca_kernel_size(channels)) {
  conv = register_module(
      "conv", torch::nn::Conv1d(
                  torch::nn::Conv1dOptions(1, 1, kernel_).padding(kernel_ / 2).bias(false)));
}

torch::Tensor EfficientChannelGateImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0);
  auto desc = x.mean({2, 3}).view({n, 1, channels_});
  return torch::sigmoid(conv(desc)).view({n, channels_, 1, 1});
}

void EfficientChannelGateImpl::describe(const FeatureShape& in, LayerLog& log) const {
  log.add("avg_pool", LayerSpec{.kind = LayerKind::pool, .kernel_w = in.w, .kernel_h = in.h,
                                .h_in = in.h, .w_in = in.w, .c_in = in.c, .c_out = in.c});
  // The 1-D convolution slides over the channel axis of a 1 x C descriptor.
  log.add("conv1d",
          LayerSpec{.kind = LayerKind::conv, .kernel_w = kernel_, .kernel_h = 1, .h_in = 1,
                    .w_in = channels_, .h_out = 1, .w_out = channels_},
          conv.get());
  log.add("sigmoid", LayerSpec{.kind = LayerKind::act, .c_in = channels_, .c_out = channels_});
  describe_act(log, "gating", in);
}

AttentionImpl::AttentionImpl(AttentionKind kind, std::int64_t channels,
                             AttentionOptions options)
    : kind_(kind) {
  switch (kind) {
    case AttentionKind::cbam:
      channel = register_module("channel", ChannelGate(channels, options.reduction));
      spatial = register_module("spatial", SpatialGate(options.spatial_kernel));
      break;
    case AttentionKind::sam:
      spatial = register_module("spatial", SpatialGate(options.spatial_kernel));
      break;
    case AttentionKind::ecam:
      efficient = register_module("efficient", EfficientChannelGate(channels));
      break;
  }
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x) {
  switch (kind_) {
    case AttentionKind::cbam: {
      auto refined = x * channel(x);
      return refined * spatial(refined);
    }
    case AttentionKind::sam: return x * spatial(x);
    case AttentionKind::ecam: return x * efficient(x);
  }
  return x;
}

torch::Tensor AttentionImpl::gate(const torch::Tensor& x) {
  switch (kind_) {
    case AttentionKind::cbam: {
      auto cg = channel(x);
      return (cg * spatial(x * cg)).expand_as(x);
    }
    case AttentionKind::sam: return spatial(x).expand_as(x);
    case AttentionKind::ecam: return efficient(x).expand_as(x);
  }
  return torch::ones_like(x);
}

FeatureShape AttentionImpl::describe(const FeatureShape& in, LayerLog& log) const {
  if (channel) {
    auto scope = log.scope("channel");
    channel->describe(in, log);
  }
  if (spatial) {
    auto scope = log.scope("spatial");
    spatial->describe(in, log);
  }
  if (efficient) {
    auto scope = log.scope("efficient");
    efficient->describe(in, log);
  }
  return in;
}

}  // namespace jetseg
