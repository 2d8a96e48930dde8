#include "jetseg/complexity.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include <torch/torch.h>

#include "jetseg/errors.hpp"

namespace jetseg {

std::string FeatureShape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::pool: return "pool";
    case LayerKind::fc: return "fc";
    case LayerKind::bn: return "bn";
    case LayerKind::act: return "act";
  }
  return "?";
}

void LayerSpec::validate() const {
  const std::int64_t dims[] = {kernel_w, kernel_h, h_in, w_in, h_out, w_out,
                               c_in, c_out, stride, groups};
  for (auto d : dims) {
    if (d <= 0) throw InvalidSpec("layer spec dimensions must be positive");
  }
  if (kind == LayerKind::conv && (c_in % groups != 0 || c_out % groups != 0)) {
    throw InvalidSpec("conv groups " + std::to_string(groups) + " must divide c_in " +
                      std::to_string(c_in) + " and c_out " + std::to_string(c_out));
  }
}

LayerFlops layer_flops(const LayerSpec& s) {
  s.validate();
  switch (s.kind) {
    case LayerKind::conv: {
      const std::int64_t num = s.kernel_w * s.kernel_h * s.h_in * s.w_in * s.c_in * s.c_out;
      const std::int64_t den = s.stride * s.stride * s.groups;
      return {num / den, num % den != 0};
    }
    case LayerKind::pool:
      return {s.c_in * s.h_out * s.w_out * s.kernel_w * s.kernel_h, false};
    case LayerKind::fc:
      return {s.c_in * s.h_in * s.w_in * s.h_out * s.w_out, false};
    case LayerKind::bn:
      return {4 * s.c_in * s.h_out * s.w_out, false};
    case LayerKind::act:
      return {s.c_in * s.h_in * s.w_in, false};
  }
  return {};
}

std::int64_t layer_macs(const LayerSpec& s) {
  s.validate();
  switch (s.kind) {
    case LayerKind::conv:
      return s.kernel_w * s.kernel_h * (s.c_in / s.groups) * s.c_out * s.h_out * s.w_out;
    case LayerKind::fc:
      return s.c_in * s.c_out;
    default:
      return layer_flops(s).flops;
  }
}

std::int64_t conv_weight_count(std::int64_t c_in, std::int64_t c_out, std::int64_t groups,
                               std::int64_t kernel_w, std::int64_t kernel_h) {
  return (c_in / groups) * (c_out / groups) * groups * kernel_w * kernel_h;
}

LayerLog::Scope::Scope(LayerLog& log, std::string name) : log_(log) {
  log_.prefix_.push_back(std::move(name));
}

LayerLog::Scope::~Scope() { log_.prefix_.pop_back(); }

std::string LayerLog::qualified(const std::string& name) const {
  std::string id;
  for (const auto& p : prefix_) {
    id += p;
    id += '.';
  }
  return id + name;
}

void LayerLog::add(const std::string& name, const LayerSpec& spec,
                   const torch::nn::Module* owner) {
  LayerRecord rec;
  rec.id = qualified(name);
  rec.spec = spec;
  try {
    const auto f = layer_flops(spec);
    rec.flops = f.flops;
    rec.rounded = f.rounded;
    rec.macs = layer_macs(spec);
  } catch (const InvalidSpec& e) {
    throw InvalidSpec("layer " + rec.id + ": " + e.what());
  }
  if (owner) rec.params = count_parameters(*owner);
  records_.push_back(std::move(rec));
}

void ComponentTotals::add(LayerKind kind, std::int64_t value) {
  switch (kind) {
    case LayerKind::conv: conv += value; break;
    case LayerKind::pool: pool += value; break;
    case LayerKind::fc: fc += value; break;
    case LayerKind::act: act += value; break;
    case LayerKind::bn: bn += value; break;
  }
}

ComplexityReport summarize(const FeatureShape& input, const FeatureShape& output,
                           const LayerLog& log) {
  ComplexityReport r;
  r.input = input;
  r.output = output;
  r.per_layer = log.records();
  for (const auto& rec : r.per_layer) {
    r.flops.add(rec.spec.kind, rec.flops);
    r.macs.add(rec.spec.kind, rec.macs);
    r.params += rec.params;
    r.any_rounded = r.any_rounded || rec.rounded;
  }
  return r;
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters(/*recurse=*/true)) n += p.numel();
  return n;
}

namespace {

nlohmann::json totals_json(const ComponentTotals& t) {
  return {{"F_conv", t.conv}, {"F_pool", t.pool}, {"F_fc", t.fc},
          {"F_act", t.act},   {"F_bn", t.bn},     {"total", t.total()}};
}

nlohmann::json shape_json(const FeatureShape& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

nlohmann::json ComplexityReport::to_json(bool include_layers) const {
  nlohmann::json j;
  j["input"] = shape_json(input);
  j["output"] = shape_json(output);
  j["flops"] = totals_json(flops);
  j["macs"] = totals_json(macs);
  j["params"] = params;
  j["any_rounded"] = any_rounded;
  // The printed fully-connected formula has no output-feature factor; records carry
  // out-features in h_out so it evaluates to in*out.
  j["fc_formula_note"] = "F_fc = Cin*Hin*Win*Hout*Wout with out-features carried in Hout";
  if (include_layers) {
    auto& layers = j["layers"] = nlohmann::json::array();
    for (const auto& rec : per_layer) {
      layers.push_back({{"id", rec.id},
                        {"kind", to_string(rec.spec.kind)},
                        {"flops", rec.flops},
                        {"macs", rec.macs},
                        {"params", rec.params},
                        {"rounded", rec.rounded}});
    }
  }
  return j;
}

void ComplexityReport::print(std::ostream& os, bool per_layer_rows) const {
  if (per_layer_rows) {
    os << std::left << std::setw(56) << "layer" << std::setw(6) << "kind" << std::right
       << std::setw(14) << "flops" << std::setw(14) << "macs" << std::setw(10) << "params"
       << "\n";
    for (const auto& rec : per_layer) {
      os << std::left << std::setw(56) << rec.id << std::setw(6) << to_string(rec.spec.kind)
         << std::right << std::setw(14) << rec.flops << std::setw(14) << rec.macs
         << std::setw(10) << rec.params << (rec.rounded ? " *" : "") << "\n";
    }
    os << "\n";
  }
  auto row = [&os](const char* name, std::int64_t f, std::int64_t m) {
    os << std::left << std::setw(10) << name << std::right << std::setw(16) << f
       << std::setw(16) << m << "\n";
  };
  os << "input " << input.str() << " -> output " << output.str() << "\n";
  os << std::left << std::setw(10) << "component" << std::right << std::setw(16)
     << "flops(eq)" << std::setw(16) << "macs(std)" << "\n";
  row("F_conv", flops.conv, macs.conv);
  row("F_pool", flops.pool, macs.pool);
  row("F_fc", flops.fc, macs.fc);
  row("F_act", flops.act, macs.act);
  row("F_bn", flops.bn, macs.bn);
  row("total", flops.total(), macs.total());
  os << std::fixed << std::setprecision(4) << "GFLOPs " << flops.total() / 1e9
     << "  params " << params << std::defaultfloat << (any_rounded ? "  (rounded)" : "")
     << "\n";
}

}  // namespace jetseg
