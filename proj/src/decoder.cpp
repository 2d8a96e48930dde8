#include "jetseg/decoder.hpp"

#include "jetseg/errors.hpp"

namespace jetseg {

void DecoderSpec::validate() const {
  for (auto c : in_channels) {
    if (c < 1) throw InvalidSpec("decoder input channels must be positive");
  }
  if (mid_channels < 1 || head_channels < 1) throw InvalidSpec("decoder widths must be positive");
  if (num_classes < 2) throw InvalidSpec("decoder needs num_classes >= 2");
  if (group_max < 1) throw InvalidSpec("decoder group_max must be positive");
}

void check_decoder_inputs(const std::vector<FeatureShape>& f) {
  if (f.size() != 3) {
    throw InvalidInput("decoder expects 3 feature maps, got " + std::to_string(f.size()));
  }
  for (int i = 1; i < 3; ++i) {
    if (f[i - 1].h != 2 * f[i].h || f[i - 1].w != 2 * f[i].w || f[i].n != f[0].n) {
      throw InvalidInput("decoder features must sit at strides 4/8/16; got " + f[0].str() +
                         ", " + f[1].str() + ", " + f[2].str());
    }
  }
}

DecoderSpec decoder_spec(const ModelConfig& config) {
  DecoderSpec spec;
  spec.in_channels = config.stage_channels;
  spec.mid_channels = config.decoder_mid;
  spec.head_channels = config.decoder_head;
  spec.num_classes = config.num_classes;
  spec.group_max = config.group_max;
  return spec;
}

RegSegDecoderImpl::RegSegDecoderImpl(const DecoderSpec& spec) : spec_(spec) {
  spec_.validate();
  for (int i = 0; i < 3; ++i) {
    const auto g = estimate_groups(spec_.in_channels[i], spec_.mid_channels, spec_.group_max);
    branch[i] = register_module("branch" + std::to_string(i),
                                GroupedPointwise(spec_.in_channels[i], spec_.mid_channels, g));
    branch_bn[i] = register_module("branch" + std::to_string(i) + "_bn",
                                   torch::nn::BatchNorm2d(spec_.mid_channels));
  }
  head = register_module(
      "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(spec_.mid_channels, spec_.head_channels,
                                                         3)
                                    .padding(1)
                                    .bias(false)));
  head_bn = register_module("head_bn", torch::nn::BatchNorm2d(spec_.head_channels));
  classifier = register_module(
      "classifier",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(spec_.head_channels, spec_.num_classes, 1)));
}

namespace {

torch::Tensor upsample(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  namespace F = torch::nn::functional;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

torch::Tensor RegSegDecoderImpl::forward(const std::vector<torch::Tensor>& features) {
  std::vector<FeatureShape> shapes;
  for (const auto& f : features) shapes.push_back(shape_of(f));
  check_decoder_inputs(shapes);
  const auto h = shapes[0].h, w = shapes[0].w;
  torch::Tensor sum;
  for (int i = 2; i >= 0; --i) {
    auto y = activate(branch_bn[i](branch[i](features[i])), spec_.activation);
    if (i > 0) y = upsample(y, h, w);
    sum = sum.defined() ? sum + y : y;
  }
  auto y = activate(head_bn(head(sum)), spec_.activation);
  y = classifier(y);
  return upsample(y, 4 * h, 4 * w);
}

FeatureShape RegSegDecoderImpl::describe(const std::vector<FeatureShape>& f,
                                         LayerLog& log) const {
  check_decoder_inputs(f);
  const auto act = to_string(spec_.activation);
  for (int i = 2; i >= 0; --i) {
    const auto name = "branch" + std::to_string(i);
    const auto s = branch[i]->describe(f[i], log, name);
    describe_bn(log, name + "_bn", s, *branch_bn[i]);
    describe_act(log, name + "_" + act, s);
  }
  const FeatureShape mid{f[0].n, spec_.mid_channels, f[0].h, f[0].w};
  const FeatureShape hs{f[0].n, spec_.head_channels, f[0].h, f[0].w};
  log.add("head",
          LayerSpec{.kind = LayerKind::conv, .kernel_w = 3, .kernel_h = 3, .h_in = mid.h,
                    .w_in = mid.w, .h_out = hs.h, .w_out = hs.w, .c_in = mid.c, .c_out = hs.c},
          head.get());
  describe_bn(log, "head_bn", hs, *head_bn);
  describe_act(log, "head_" + act, hs);
  log.add("classifier",
          LayerSpec{.kind = LayerKind::conv, .h_in = hs.h, .w_in = hs.w, .h_out = hs.h,
                    .w_out = hs.w, .c_in = hs.c, .c_out = spec_.num_classes},
          classifier.get());
  return {f[0].n, spec_.num_classes, 4 * f[0].h, 4 * f[0].w};
}

JetSegImpl::JetSegImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  encoder = register_module("encoder", JetNet(config_));
  decoder = register_module("decoder", RegSegDecoder(decoder_spec(config_)));
}

torch::Tensor JetSegImpl::forward(const torch::Tensor& x) {
  return decoder(encoder(x));
}

FeatureShape JetSegImpl::describe(const FeatureShape& in, LayerLog& log) const {
  std::vector<FeatureShape> stages;
  {
    auto scope = log.scope("encoder");
    stages = encoder->describe_stages(in, log);
  }
  auto scope = log.scope("decoder");
  return decoder->describe(stages, log);
}

}  // namespace jetseg
