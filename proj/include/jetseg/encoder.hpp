#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "jetseg/block.hpp"

namespace jetseg {

enum class Profile { workstation, agx, nano };

std::string to_string(Profile p);
Profile parse_profile(std::string_view text);

/// Complete description of a JetSeg model. Stage arrays index S1..S3; the stem is S0.
struct ModelConfig {
  Profile profile = Profile::workstation;
  std::int64_t input_h = 512;
  std::int64_t input_w = 512;
  std::int64_t stem_channels = 16;
  int stem_levels = 3;
  Activation stem_activation = Activation::reu;
  std::array<std::int64_t, 3> stage_channels{24, 32, 48};
  std::array<std::int64_t, 3> blocks_per_stage{4, 4, 2};
  std::array<int, 3> jetconv_levels{3, 2, 1};
  std::array<AttentionKind, 3> attention{AttentionKind::cbam, AttentionKind::sam,
                                         AttentionKind::ecam};
  std::array<Activation, 3> activation{Activation::reu, Activation::tanhexp,
                                       Activation::tanhexp};
  double expansion_ratio = 2.0;
  std::int64_t group_max = 8;
  std::int64_t num_classes = 31;
  std::int64_t decoder_mid = 32;
  std::int64_t decoder_head = 24;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  static ModelConfig for_profile(Profile p);

  /// Throws ConfigError naming the first violated field.
  void validate() const;

  /// key = value text; every field is written so parse(to_text()) == *this.
  std::string to_text() const;
  /// Keys start from the defaults of the `profile` key (workstation when absent).
  static ModelConfig parse(std::string_view text);
  static ModelConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Names of fields whose values differ from `other`.
  std::vector<std::string> diff(const ModelConfig& other) const;

  /// Block spec for block `index` of stage `stage` (0-based S1..S3).
  JetBlockSpec block_spec(int stage, std::int64_t index) const;
  JetBlockSpec stem_spec() const;
};

/// JetNet: input block (stride 2) then three stages whose first block has stride 2.
/// Stage outputs sit at strides 4, 8 and 16.
class JetNetImpl : public torch::nn::Module {
 public:
  static constexpr std::int64_t kInputDivisor = 16;

  explicit JetNetImpl(const ModelConfig& config);

  std::vector<torch::Tensor> forward(const torch::Tensor& x);
  std::vector<FeatureShape> describe_stages(const FeatureShape& in, LayerLog& log) const;
  FeatureShape describe(const FeatureShape& in, LayerLog& log) const;

  const ModelConfig& config() const { return config_; }

  InputBlock stem{nullptr};
  std::array<torch::nn::ModuleList, 3> stages{nullptr, nullptr, nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(JetNet);

/// Throws InvalidInput unless H and W are multiples of 16 and C == 3.
void check_encoder_input(const FeatureShape& s);

}  // namespace jetseg
