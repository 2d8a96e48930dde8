#include <doctest.h>

#include <map>
#include <sstream>

#include "jetseg/decoder.hpp"
#include "jetseg/errors.hpp"

using namespace jetseg;

namespace {

struct Golden {
  const char* name;
  LayerSpec spec;
  std::int64_t flops;
  bool rounded;
};

// Values substituted by hand into the per-kind formulas.
const std::vector<Golden>& golden() {
  static const std::vector<Golden> g = {
      // 3*3*4*4*8*8
      {"conv3x3", {LayerKind::conv, 3, 3, 4, 4, 4, 4, 8, 8, 1, 1}, 9216, false},
      // 1*1*8*8*16*32 / 4
      {"gpconv", {LayerKind::conv, 1, 1, 8, 8, 8, 8, 16, 32, 1, 4}, 8192, false},
      // 3*3*8*8*8*8 / (2^2 * 8)
      {"depthwise s2", {LayerKind::conv, 3, 3, 8, 8, 4, 4, 8, 8, 2, 8}, 1152, false},
      // 1*3*6*6*4*4 / 4
      {"vertical 3x1", {LayerKind::conv, 1, 3, 6, 6, 6, 6, 4, 4, 1, 4}, 432, false},
      // 3*3*5*5*3*4 / 4
      {"conv s2 exact", {LayerKind::conv, 3, 3, 5, 5, 3, 3, 3, 4, 2, 1}, 675, false},
      // 3*3*5*5*3*5 / 4 = 843.75
      {"conv s2 inexact", {LayerKind::conv, 3, 3, 5, 5, 3, 3, 3, 5, 2, 1}, 843, true},
      // 8*4*4*2*2
      {"maxpool", {LayerKind::pool, 2, 2, 8, 8, 4, 4, 8, 8, 2, 1}, 512, false},
      // 64*1*1*16*1
      {"fc", {LayerKind::fc, 1, 1, 1, 1, 16, 1, 64, 16, 1, 1}, 1024, false},
      // 4*16*8*8
      {"bn", {LayerKind::bn, 1, 1, 8, 8, 8, 8, 16, 16, 1, 1}, 4096, false},
      // 1*1*1
      {"act", {LayerKind::act, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, 1, false},
  };
  return g;
}

ComplexityReport report_of(Profile p, std::int64_t h, std::int64_t w) {
  JetSeg model(ModelConfig::for_profile(p));
  return model_complexity(*model, {1, 3, h, w});
}

}  // namespace

TEST_SUITE("complexity") {

TEST_CASE("golden layer fixture") {
  for (const auto& g : golden()) {
    const auto f = layer_flops(g.spec);
    INFO(g.name);
    CHECK(f.flops == g.flops);
    CHECK(f.rounded == g.rounded);
  }
}

TEST_CASE("golden fixture sums exactly through a log") {
  LayerLog log;
  std::int64_t sum = 0;
  std::map<LayerKind, std::int64_t> by_kind;
  for (const auto& g : golden()) {
    log.add(g.name, g.spec);
    sum += g.flops;
    by_kind[g.spec.kind] += g.flops;
  }
  const auto r = summarize({1, 8, 4, 4}, {1, 1, 1, 1}, log);
  CHECK(r.total_flops() == sum);
  CHECK(r.flops.conv == by_kind[LayerKind::conv]);
  CHECK(r.flops.pool == by_kind[LayerKind::pool]);
  CHECK(r.flops.fc == by_kind[LayerKind::fc]);
  CHECK(r.flops.bn == by_kind[LayerKind::bn]);
  CHECK(r.flops.act == by_kind[LayerKind::act]);
  CHECK(r.any_rounded);
}

TEST_CASE("group division property") {
  for (const auto& g : golden()) {
    if (g.spec.kind != LayerKind::conv || g.rounded) continue;
    auto one = g.spec;
    one.groups = 1;
    CHECK(layer_flops(g.spec).flops * g.spec.groups == layer_flops(one).flops);
  }
  for (const auto& rec : report_of(Profile::workstation, 512, 512).per_layer) {
    if (rec.spec.kind != LayerKind::conv) continue;
    auto one = rec.spec;
    one.groups = 1;
    REQUIRE_FALSE(rec.rounded);
    REQUIRE(rec.flops * rec.spec.groups == layer_flops(one).flops);
  }
}

TEST_CASE("standard accounting uses output dims") {
  const LayerSpec s{LayerKind::conv, 3, 3, 8, 8, 4, 4, 8, 16, 2, 2};
  CHECK(layer_macs(s) == 3 * 3 * (8 / 2) * 16 * 4 * 4);
  CHECK(layer_flops(s).flops == 3 * 3 * 8 * 8 * 8 * 16 / (4 * 2));
  const LayerSpec fc{LayerKind::fc, 1, 1, 1, 1, 10, 1, 20, 10, 1, 1};
  CHECK(layer_macs(fc) == 200);
}

TEST_CASE("invalid layer specs") {
  LayerSpec s{LayerKind::conv, 3, 3, 8, 8, 8, 8, 6, 8, 1, 4};
  CHECK_THROWS_AS(layer_flops(s), InvalidSpec);
  s.groups = 2;
  s.h_in = 0;
  CHECK_THROWS_AS(layer_flops(s), InvalidSpec);
}

TEST_CASE("single-layer model equals layer_flops") {
  GroupedPointwise m(16, 32, 4);
  const auto r = model_complexity(*m, {1, 16, 8, 8});
  REQUIRE(r.per_layer.size() == 1);
  const LayerSpec s{LayerKind::conv, 1, 1, 8, 8, 8, 8, 16, 32, 1, 4};
  CHECK(r.total_flops() == layer_flops(s).flops);
  CHECK(r.params == 128);
  CHECK(r.output == FeatureShape{1, 32, 8, 8});
}

TEST_CASE("analyzer is deterministic") {
  JetSeg model(ModelConfig::for_profile(Profile::agx));
  const auto a = model_complexity(*model, {1, 3, 128, 128});
  const auto b = model_complexity(*model, {1, 3, 128, 128});
  CHECK(a.to_json() == b.to_json());
  const auto c = report_of(Profile::agx, 128, 128);
  CHECK(a.to_json() == c.to_json());
}

TEST_CASE("report totals are consistent") {
  for (auto p : {Profile::workstation, Profile::agx, Profile::nano}) {
    const auto r = report_of(p, 256, 256);
    std::int64_t sum = 0;
    for (const auto& rec : r.per_layer) sum += rec.flops;
    CHECK(sum == r.total_flops());
    CHECK(r.flops.conv + r.flops.pool + r.flops.fc + r.flops.act + r.flops.bn == sum);
    CHECK(r.flops.conv > 0);
    CHECK(r.flops.pool > 0);
    CHECK(r.flops.fc > 0);
    CHECK(r.flops.act > 0);
    CHECK(r.flops.bn > 0);
    JetSeg model(ModelConfig::for_profile(p));
    CHECK(r.params == count_parameters(*model));
    CHECK(r.output == FeatureShape{1, 31, 256, 256});
  }
}

TEST_CASE("encoder plus decoder equals the full model") {
  JetSeg model(ModelConfig::for_profile(Profile::workstation));
  const FeatureShape in{1, 3, 128, 128};
  LayerLog enc_log, dec_log;
  const auto stages = model->encoder->describe_stages(in, enc_log);
  model->decoder->describe(stages, dec_log);
  const auto enc = summarize(in, stages[2], enc_log);
  const auto dec = summarize(stages[0], {1, 31, 128, 128}, dec_log);
  const auto full = model_complexity(*model, in);
  CHECK(enc.total_flops() + dec.total_flops() == full.total_flops());
  CHECK(enc.params + dec.params == full.params);
  CHECK(enc.per_layer.size() + dec.per_layer.size() == full.per_layer.size());
}

TEST_CASE("doubling the input quadruples spatially scaling layers") {
  const auto small = report_of(Profile::workstation, 64, 64);
  const auto big = report_of(Profile::workstation, 128, 128);
  REQUIRE(small.per_layer.size() == big.per_layer.size());
  std::int64_t scaled = 0;
  for (std::size_t i = 0; i < small.per_layer.size(); ++i) {
    const auto& a = small.per_layer[i];
    const auto& b = big.per_layer[i];
    REQUIRE(a.id == b.id);
    if (a.spec.kind == LayerKind::fc || a.spec.stride != 1) continue;
    if (b.spec.h_in != 2 * a.spec.h_in || b.spec.w_in != 2 * a.spec.w_in) continue;
    CHECK(b.flops == 4 * a.flops);
    ++scaled;
  }
  CHECK(scaled > static_cast<std::int64_t>(small.per_layer.size()) / 2);
}

TEST_CASE("enumerated conv parameters equal the closed form") {
  const auto r = report_of(Profile::workstation, 64, 64);
  for (const auto& rec : r.per_layer) {
    if (rec.spec.kind != LayerKind::conv || rec.params == 0) continue;
    const auto closed = conv_weight_count(rec.spec.c_in, rec.spec.c_out, rec.spec.groups,
                                          rec.spec.kernel_w, rec.spec.kernel_h);
    const bool biased = rec.id.find("classifier") != std::string::npos;
    INFO(rec.id);
    CHECK(rec.params == closed + (biased ? rec.spec.c_out : 0));
  }
  CHECK(conv_weight_count(16, 32, 4, 1, 1) == 128);
  CHECK(conv_weight_count(8, 8, 8, 3, 1) == 24);
}

TEST_CASE("report serialisation") {
  const auto r = report_of(Profile::nano, 64, 64);
  const auto j = r.to_json();
  for (const char* key : {"F_conv", "F_pool", "F_fc", "F_act", "F_bn", "total"}) {
    CHECK(j.at("flops").contains(key));
    CHECK(j.at("macs").contains(key));
  }
  CHECK(j.at("layers").size() == r.per_layer.size());
  CHECK_FALSE(r.to_json(false).contains("layers"));
  std::ostringstream os;
  r.print(os, true);
  CHECK(os.str().find("F_conv") != std::string::npos);
  CHECK(os.str().find(r.per_layer.front().id) != std::string::npos);
}

TEST_CASE("workstation complexity at 512") {
  const auto r = report_of(Profile::workstation, 512, 512);
  MESSAGE("GFLOPs " << r.total_flops() / 1e9 << ", params " << r.params);
  CHECK(r.total_flops() >= 1.125e9 / 4);
  CHECK(r.total_flops() <= 1.125e9 * 4);
  CHECK(r.params < 500000);
}

}  // TEST_SUITE
