#include "jetseg/block.hpp"

#include <cmath>

#include "jetseg/errors.hpp"

namespace jetseg {

std::int64_t JetBlockSpec::expanded_channels() const {
  const double raw = static_cast<double>(in_channels) * expansion_ratio;
  const auto rounded = static_cast<std::int64_t>(std::llround(raw));
  if (expansion_ratio <= 0.0 || std::fabs(raw - static_cast<double>(rounded)) > 1e-9 ||
      rounded < 1) {
    throw InvalidSpec("expansion ratio " + std::to_string(expansion_ratio) + " on " +
                      std::to_string(in_channels) + " channels is not an integer width");
  }
  return rounded;
}

namespace {

void check_common(const JetBlockSpec& spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1) {
    throw InvalidSpec("JetBlock channel counts must be positive");
  }
  if (spec.stride != 1 && spec.stride != 2) throw InvalidSpec("JetBlock stride must be 1 or 2");
}

JetConvSpec input_jetconv(const JetBlockSpec& spec) {
  JetConvSpec jc = spec.jetconv;
  jc.in_channels = spec.in_channels;
  jc.out_channels = spec.out_channels;
  jc.stride = spec.stride;
  jc.group_max = spec.group_max;
  jc.groups = 0;
  return jc.resolved();
}

JetConvSpec standard_jetconv(const JetBlockSpec& spec, std::int64_t expanded) {
  JetConvSpec jc = spec.jetconv;
  jc.in_channels = expanded;
  jc.out_channels = expanded;
  jc.stride = spec.stride;
  jc.group_max = spec.group_max;
  jc.groups = 0;
  return jc.resolved();
}

std::int64_t strided(std::int64_t extent, std::int64_t stride) {
  return (extent + stride - 1) / stride;
}

}  // namespace

InputBlockImpl::InputBlockImpl(const JetBlockSpec& spec) : spec_(spec) {
  if (spec.variant != BlockVariant::input) throw InvalidSpec("InputBlock needs variant=input");
  check_common(spec);
  jetconv = register_module("jetconv", JetConv(input_jetconv(spec)));
  bn = register_module("bn", torch::nn::BatchNorm2d(spec.out_channels));
}

torch::Tensor InputBlockImpl::forward(const torch::Tensor& x) {
  return activate(bn(jetconv(x)), spec_.activation);
}

FeatureShape InputBlockImpl::describe(const FeatureShape& in, LayerLog& log) const {
  FeatureShape out;
  {
    auto scope = log.scope("jetconv");
    out = jetconv->describe(in, log);
  }
  describe_bn(log, "bn", out, *bn);
  describe_act(log, to_string(spec_.activation), out);
  return out;
}

StandardBlockImpl::StandardBlockImpl(const JetBlockSpec& spec)
    : spec_(spec), expanded_(0), shuffle_groups_(1) {
  if (spec.variant != BlockVariant::standard) {
    throw InvalidSpec("StandardBlock needs variant=standard");
  }
  check_common(spec);
  expanded_ = spec.expanded_channels();
  const auto g_expand = estimate_groups(spec.in_channels, expanded_, spec.group_max);
  const auto g_reduce = estimate_groups(expanded_, spec.out_channels, spec.group_max);
  shuffle_groups_ = g_expand;

  expand = register_module("expand", GroupedPointwise(spec.in_channels, expanded_, g_expand));
  expand_bn = register_module("expand_bn", torch::nn::BatchNorm2d(expanded_));
  jetconv = register_module("jetconv", JetConv(standard_jetconv(spec, expanded_)));
  attention = register_module(
      "attention", Attention(spec.attention, expanded_, spec.attention_options));
  reduce = register_module("reduce", GroupedPointwise(expanded_, spec.out_channels, g_reduce));
  reduce_bn = register_module("reduce_bn", torch::nn::BatchNorm2d(spec.out_channels));
  if (spec.in_channels != spec.out_channels || spec.stride != 1) {
    const auto g_skip = estimate_groups(spec.in_channels, spec.out_channels, spec.group_max);
    skip_proj = register_module(
        "skip_proj", GroupedPointwise(spec.in_channels, spec.out_channels, g_skip, spec.stride));
    skip_bn = register_module("skip_bn", torch::nn::BatchNorm2d(spec.out_channels));
  }
}

torch::Tensor StandardBlockImpl::skip(const torch::Tensor& x) {
  return skip_proj ? skip_bn(skip_proj(x)) : x;
}

torch::Tensor StandardBlockImpl::forward(const torch::Tensor& x) {
  auto y = activate(expand_bn(expand(x)), spec_.activation);
  y = jetseg::channel_shuffle(y, shuffle_groups_);
  y = jetconv(y);
  y = activate(attention(y), spec_.activation);
  y = reduce_bn(reduce(y));
  return y + skip(x);
}

FeatureShape StandardBlockImpl::describe(const FeatureShape& in, LayerLog& log) const {
  const auto act_name = to_string(spec_.activation);
  auto s = expand->describe(in, log, "expand");
  describe_bn(log, "expand_bn", s, *expand_bn);
  describe_act(log, act_name + "_1", s);
  {
    auto scope = log.scope("jetconv");
    s = jetconv->describe(s, log);
  }
  {
    auto scope = log.scope("attention");
    s = attention->describe(s, log);
  }
  describe_act(log, act_name + "_2", s);
  s = reduce->describe(s, log, "reduce");
  describe_bn(log, "reduce_bn", s, *reduce_bn);
  if (skip_proj) {
    const auto p = skip_proj->describe(in, log, "skip_proj");
    describe_bn(log, "skip_bn", p, *skip_bn);
  }
  return s;
}

FeatureShape infer_block_shape(const JetBlockSpec& spec, const FeatureShape& in) {
  check_common(spec);
  if (in.c != spec.in_channels) {
    throw InvalidInput("block expects " + std::to_string(spec.in_channels) +
                       " channels, got " + std::to_string(in.c));
  }
  if (spec.variant == BlockVariant::standard) (void)spec.expanded_channels();
  return {in.n, spec.out_channels, strided(in.h, spec.stride), strided(in.w, spec.stride)};
}

}  // namespace jetseg
