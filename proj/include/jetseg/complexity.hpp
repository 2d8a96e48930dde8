#pragma once

#include <concepts>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace torch::nn {
class Module;
}

namespace jetseg {

/// N x C x H x W geometry of a feature map.
struct FeatureShape {
  std::int64_t n = 1;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
  std::string str() const;
};

enum class LayerKind { conv, pool, fc, bn, act };

const char* to_string(LayerKind kind);

/// Geometry of one layer as consumed by the FLOPs formulas.
///
/// Convolutions carry kernel, stride and groups. Pools carry the pooling window in
/// kernel_w/kernel_h. Fully connected layers carry in-features in c_in and
/// out-features in h_out (w_out = 1, c_out = out-features, spatial inputs 1x1).
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::int64_t kernel_w = 1;
  std::int64_t kernel_h = 1;
  std::int64_t h_in = 1;
  std::int64_t w_in = 1;
  std::int64_t h_out = 1;
  std::int64_t w_out = 1;
  std::int64_t c_in = 1;
  std::int64_t c_out = 1;
  std::int64_t stride = 1;
  std::int64_t groups = 1;

  /// Throws InvalidSpec on non-positive dims or (for conv) non-dividing groups.
  void validate() const;
};

struct LayerFlops {
  std::int64_t flops = 0;
  /// The printed division was not exact and the value was rounded down.
  bool rounded = false;
};

/// FLOPs of one layer, formulas as printed:
///   conv: Kw*Kh*Hin*Win*Cin*Cout / (s^2*g)
///   pool: Cin*Hout*Wout*Kw*Kh
///   fc:   Cin*Hin*Win*Hout*Wout
///   bn:   4*Cin*Hout*Wout
///   act:  Cin*Hin*Win
LayerFlops layer_flops(const LayerSpec& spec);

/// Conventional multiply-accumulate accounting: conv uses output dims,
/// Kw*Kh*(Cin/g)*Cout*Hout*Wout; fc is Cin*Cout; the remaining kinds match layer_flops.
std::int64_t layer_macs(const LayerSpec& spec);

/// Closed-form weight count of a (grouped) convolution, without bias.
std::int64_t conv_weight_count(std::int64_t c_in, std::int64_t c_out, std::int64_t groups,
                               std::int64_t kernel_w, std::int64_t kernel_h);

struct LayerRecord {
  std::string id;
  LayerSpec spec;
  std::int64_t flops = 0;
  std::int64_t macs = 0;
  bool rounded = false;
  /// Enumerated from the owning module's tensors; 0 for weight-free or replayed layers.
  std::int64_t params = 0;
};

/// Collects LayerRecords while a model describes itself for a given input shape.
class LayerLog {
 public:
  class Scope {
   public:
    Scope(LayerLog& log, std::string name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    LayerLog& log_;
  };

  [[nodiscard]] Scope scope(std::string name) { return Scope(*this, std::move(name)); }

  /// Records a layer. `owner`, when given, is the module whose parameters belong to
  /// this layer (counted recursively).
  void add(const std::string& name, const LayerSpec& spec,
           const torch::nn::Module* owner = nullptr);

  const std::vector<LayerRecord>& records() const { return records_; }

 private:
  std::string qualified(const std::string& name) const;

  std::vector<std::string> prefix_;
  std::vector<LayerRecord> records_;
};

struct ComponentTotals {
  std::int64_t conv = 0;
  std::int64_t pool = 0;
  std::int64_t fc = 0;
  std::int64_t act = 0;
  std::int64_t bn = 0;

  std::int64_t total() const { return conv + pool + fc + act + bn; }
  void add(LayerKind kind, std::int64_t value);
};

struct ComplexityReport {
  FeatureShape input;
  FeatureShape output;
  std::vector<LayerRecord> per_layer;
  ComponentTotals flops;  // printed-formula accounting
  ComponentTotals macs;   // conventional accounting
  std::int64_t params = 0;
  bool any_rounded = false;

  std::int64_t total_flops() const { return flops.total(); }

  nlohmann::json to_json(bool include_layers = true) const;
  /// Human-readable table; one row per layer when `per_layer_rows`.
  void print(std::ostream& os, bool per_layer_rows = false) const;
};

ComplexityReport summarize(const FeatureShape& input, const FeatureShape& output,
                           const LayerLog& log);

template <class Model>
concept Describable = requires(const Model& m, const FeatureShape& s, LayerLog& log) {
  { m.describe(s, log) } -> std::same_as<FeatureShape>;
};

/// Walks a model by shape inference and accounts every layer.
template <Describable Model>
ComplexityReport model_complexity(const Model& model, const FeatureShape& input) {
  LayerLog log;
  const FeatureShape output = model.describe(input, log);
  return summarize(input, output, log);
}

/// Total trainable parameter count of a module, by enumeration.
std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace jetseg
