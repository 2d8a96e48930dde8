#include "jetseg/encoder.hpp"

#include "jetseg/errors.hpp"

namespace jetseg {

void check_encoder_input(const FeatureShape& s) {
  if (s.c != 3) throw InvalidInput("encoder expects 3 input channels, got " + std::to_string(s.c));
  if (s.h % JetNetImpl::kInputDivisor != 0 || s.w % JetNetImpl::kInputDivisor != 0) {
    throw InvalidInput("input height and width must be divisible by 16, got " +
                       std::to_string(s.h) + "x" + std::to_string(s.w));
  }
}

JetBlockSpec ModelConfig::stem_spec() const {
  JetBlockSpec spec;
  spec.variant = BlockVariant::input;
  spec.in_channels = 3;
  spec.out_channels = stem_channels;
  spec.stride = 2;
  spec.jetconv.levels = stem_levels;
  spec.activation = stem_activation;
  spec.group_max = group_max;
  return spec;
}

JetBlockSpec ModelConfig::block_spec(int stage, std::int64_t index) const {
  JetBlockSpec spec;
  spec.variant = BlockVariant::standard;
  spec.in_channels = index == 0 ? (stage == 0 ? stem_channels : stage_channels[stage - 1])
                                : stage_channels[stage];
  spec.out_channels = stage_channels[stage];
  spec.stride = index == 0 ? 2 : 1;
  spec.expansion_ratio = expansion_ratio;
  spec.jetconv.levels = jetconv_levels[stage];
  spec.attention = attention[stage];
  spec.activation = activation[stage];
  spec.group_max = group_max;
  return spec;
}

JetNetImpl::JetNetImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  stem = register_module("stem", InputBlock(config_.stem_spec()));
  for (int s = 0; s < 3; ++s) {
    stages[s] = register_module("s" + std::to_string(s + 1), torch::nn::ModuleList());
    for (std::int64_t b = 0; b < config_.blocks_per_stage[s]; ++b) {
      stages[s]->push_back(StandardBlock(config_.block_spec(s, b)));
    }
  }
}

std::vector<torch::Tensor> JetNetImpl::forward(const torch::Tensor& x) {
  check_encoder_input(shape_of(x));
  std::vector<torch::Tensor> outs;
  auto y = stem(x);
  for (auto& stage : stages) {
    for (const auto& block : *stage) y = block->as<StandardBlock>()->forward(y);
    outs.push_back(y);
  }
  return outs;
}

std::vector<FeatureShape> JetNetImpl::describe_stages(const FeatureShape& in,
                                                      LayerLog& log) const {
  check_encoder_input(in);
  std::vector<FeatureShape> outs;
  FeatureShape s;
  {
    auto scope = log.scope("stem");
    s = stem->describe(in, log);
  }
  for (int st = 0; st < 3; ++st) {
    std::int64_t b = 0;
    for (const auto& block : *stages[st]) {
      auto scope = log.scope("s" + std::to_string(st + 1) + ".b" + std::to_string(b++));
      s = block->as<StandardBlock>()->describe(s, log);
    }
    outs.push_back(s);
  }
  return outs;
}

FeatureShape JetNetImpl::describe(const FeatureShape& in, LayerLog& log) const {
  return describe_stages(in, log).back();
}

}  // namespace jetseg
