// Acceptance run: one PASS/FAIL/SKIP line per criterion, exit status 1 on any FAIL.
// Artefacts go to $JETSEG_ACCEPTANCE_OUT (default ./acceptance_out).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "jetseg/errors.hpp"
#include "jetseg/ops.hpp"
#include "jetseg/runtime.hpp"
#include "support/oracles.hpp"

using namespace jetseg;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets
constexpr double kGradRelTol = 1e-3;
constexpr double kEps = 1e-6;
constexpr int kInterpSteps = 10;
constexpr int kConfusionInstances = 60;
constexpr double kTargetGflops = 1.125;
constexpr double kFlopsFactor = 4.0;
constexpr std::int64_t kMaxParams = 500000;
constexpr double kMinValMiou = 0.85;
constexpr double kMaxLossRatio = 0.25;
constexpr double kShapeBudgetS = 60;
constexpr double kGradBudgetS = 300;
constexpr double kTrainBudgetS = 3600;
constexpr int kBenchWarmup = 10;
constexpr int kBenchIters = kMinBenchIters;

// Desk-scale training recipe for criterion 7
constexpr std::size_t kBlobSamples = 128;
constexpr std::int64_t kBlobClasses = 3;
constexpr std::int64_t kBlobSize = 64;
constexpr int kBlobEpochs = 15;
constexpr std::int64_t kBlobBatch = 4;
constexpr double kBlobLr = 3e-3;
constexpr std::uint64_t kBlobSeed = 0;

// CamVid smoke run
constexpr std::int64_t kCamVidH = 176;
constexpr std::int64_t kCamVidW = 240;
constexpr int kCamVidEpochs = 15;

struct Outcome {
  enum Kind { pass, fail, skip } kind;
  std::string detail;
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path out_dir() {
  const char* env = std::getenv("JETSEG_ACCEPTANCE_OUT");
  fs::path dir = env && *env ? fs::path(env) : fs::path("acceptance_out");
  fs::create_directories(dir);
  return dir;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::vector<std::int64_t> flat(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kLong);
  return {c.data_ptr<std::int64_t>(), c.data_ptr<std::int64_t>() + c.numel()};
}

oracle::Grid grid(const torch::Tensor& t) {
  oracle::Grid g(t.size(0), std::vector<std::int64_t>(t.size(1)));
  for (std::int64_t y = 0; y < t.size(0); ++y)
    for (std::int64_t x = 0; x < t.size(1); ++x) g[y][x] = t[y][x].item<std::int64_t>();
  return g;
}

std::string shape_of(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor one_hot_probs(const torch::Tensor& labels, std::int64_t classes) {
  return torch::one_hot(labels, classes).permute({0, 3, 1, 2}).to(torch::kDouble);
}

// 1. Shapes ------------------------------------------------------------------

Outcome shapes() {
  const auto t0 = std::chrono::steady_clock::now();
  torch::NoGradGuard ng;
  std::ostringstream os;
  for (auto p : {Profile::workstation, Profile::agx, Profile::nano}) {
    const auto cfg = ModelConfig::for_profile(p);
    JetSeg model(cfg);
    model->eval();
    const auto x = torch::randn({1, 3, 512, 512});
    const auto y = model(x);
    expect(y.sizes() == torch::IntArrayRef({1, cfg.num_classes, 512, 512}),
           to_string(p) + " output " + shape_of(y));
    const auto feats = model->encoder(x);
    expect(feats.size() == 3, "expected three stage outputs");
    for (std::size_t s = 0; s < 3; ++s) {
      const std::int64_t stride = 4 << s;
      expect(feats[s].size(2) == 512 / stride && feats[s].size(3) == 512 / stride,
             to_string(p) + " stage " + std::to_string(s + 1) + " is not at stride " +
                 std::to_string(stride));
    }
    os << to_string(p) << " " << shape_of(y) << "; ";
  }
  const double secs = seconds_since(t0);
  expect(secs < kShapeBudgetS, "took " + fmt(secs) + " s");
  os << "strides 4/8/16, " << fmt(secs, 3) << " s";
  return {Outcome::pass, os.str()};
}

// 2. Oracles -----------------------------------------------------------------

Outcome oracles() {
  std::int64_t perms = 0;
  for (std::int64_t c = 1; c <= 24; ++c)
    for (std::int64_t g = 1; g <= 6; ++g) {
      if (c % g) continue;
      const auto x = torch::arange(c, torch::kDouble).view({1, c, 1, 1});
      const auto got = flat(jetseg::channel_shuffle(x, g).view({c}));
      expect(got == oracle::shuffle_sources(c, g),
             "shuffle C=" + std::to_string(c) + " g=" + std::to_string(g));
      ++perms;
    }

  for (int trial = 0; trial < kConfusionInstances; ++trial) {
    torch::manual_seed(1000 + trial);
    const std::int64_t classes = 2 + trial % 5;
    const auto pred = torch::randint(0, classes, {1, 8, 8}, torch::kLong);
    auto target = torch::randint(0, classes, {1, 8, 8}, torch::kLong);
    if (trial % 3 == 0) target.index_put_({0, trial % 8, (trial / 8) % 8}, kIgnoreIndex);
    const auto s = hard_confusion(pred, target, classes);
    const auto o = oracle::tally(flat(pred), flat(target), classes);
    expect(s.tp == o.tp && s.fp == o.fp && s.fn == o.fn,
           "confusion instance " + std::to_string(trial));
    const double m = miou(s);
    const double want = oracle::brute_miou(flat(pred), flat(target), classes);
    expect(m == want, "mIoU instance " + std::to_string(trial) + ": " + fmt(m, 17) + " vs " +
                          fmt(want, 17));
  }

  // 6x6 fixture: vertical edge between columns 2|3, predicted one column to the right.
  auto target = torch::zeros({6, 6}, torch::kLong);
  target.narrow(1, 3, 3).fill_(1);
  auto pred = torch::zeros({6, 6}, torch::kLong);
  pred.narrow(1, 4, 2).fill_(1);
  const auto b = boundary_stats(pred, target);
  expect(b.tp == 12 && b.fp == 6 && b.fn == 6,
         "boundary fixture " + fmt(b.tp) + "/" + fmt(b.fp) + "/" + fmt(b.fn));
  const auto ob = oracle::boundary_tally(grid(pred), grid(target), 1);
  expect(b.tp == ob.tp && b.fp == ob.fp && b.fn == ob.fn, "boundary oracle");

  return {Outcome::pass, std::to_string(perms) + " shuffle maps, " +
                             std::to_string(kConfusionInstances) +
                             " confusion instances, boundary fixture tp/fp/fn 12/6/6"};
}

// 3. Gradients ---------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  auto record = [&](const std::string& name, const oracle::GradCheck& r) {
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = name + " " + r.worst;
    }
    expect(r.checked > 0, name + " probed nothing");
    expect(r.max_rel_error < kGradRelTol, name + " rel error " + fmt(r.max_rel_error) + " at " +
                                              r.worst);
  };

  torch::manual_seed(7);
  auto x = torch::randn({2, 4, 6, 6}, torch::dtype(torch::kDouble).requires_grad(true));
  const auto probe = torch::randn({2, 4, 6, 6}, torch::kDouble);
  record("reu", oracle::gradcheck([&] { return (reu(x) * probe).sum(); }, {x}));
  record("tanhexp", oracle::gradcheck([&] { return (tanhexp(x) * probe).sum(); }, {x}));

  JetConvSpec spec;
  spec.in_channels = 4;
  JetConv jc(spec);
  jc->to(torch::kDouble);
  record("jetconv", oracle::gradcheck([&] { return (jc(x) * probe).sum(); },
                                      {x, jc->projection->conv->weight}));

  for (auto kind : {AttentionKind::cbam, AttentionKind::sam, AttentionKind::ecam}) {
    Attention a(kind, 4, AttentionOptions{2, 3});
    a->to(torch::kDouble);
    record(to_string(kind), oracle::gradcheck([&] { return (a(x) * probe).sum(); }, {x}));
  }

  auto probs = torch::softmax(torch::randn({1, 3, 8, 8}, torch::kDouble), 1)
                   .detach()
                   .requires_grad_(true);
  const auto target = torch::randint(0, 3, {1, 8, 8}, torch::kLong);
  const auto w = class_weights(pixel_counts(target, 3), 0.99);
  JetLossOptions opts;
  opts.check_normalized = false;
  record("jetloss", oracle::gradcheck([&] { return jetloss(probs, target, w, opts).total; },
                                      {probs}, 1e-6, 1e-6, 192));

  const double secs = seconds_since(t0);
  expect(secs < kGradBudgetS, "took " + fmt(secs) + " s");
  return {Outcome::pass, "max rel error " + fmt(worst) + " (" + worst_name + "), " +
                             fmt(secs, 3) + " s"};
}

// 4. JetLoss calibration -----------------------------------------------------

Outcome calibration() {
  constexpr std::int64_t classes = 3;
  torch::manual_seed(21);
  const auto target = torch::randint(0, classes, {2, 8, 8}, torch::kLong);
  const auto w = class_weights(pixel_counts(target, classes), 0.999);
  JetLossOptions opts;
  opts.epsilon = kEps;

  const auto hot = one_hot_probs(target, classes);
  const double perfect = jetloss(hot, target, w, opts).total.item<double>();
  expect(std::abs(perfect) <= classes * kEps, "perfect loss " + fmt(perfect, 6));

  const auto uniform = torch::full_like(hot, 1.0 / classes);
  std::vector<double> losses;
  for (int k = 0; k <= kInterpSteps; ++k) {
    const double t = static_cast<double>(k) / kInterpSteps;
    losses.push_back(jetloss((1 - t) * uniform + t * hot, target, w, opts).total.item<double>());
  }
  for (std::size_t k = 1; k < losses.size(); ++k) {
    expect(losses[k] < losses[k - 1], "loss rises at step " + std::to_string(k) + ": " +
                                          fmt(losses[k - 1], 8) + " -> " + fmt(losses[k], 8));
  }
  return {Outcome::pass, "perfect " + fmt(perfect, 3) + " <= " + fmt(classes * kEps, 3) +
                             ", uniform " + fmt(losses.front()) + " decreasing over " +
                             std::to_string(kInterpSteps) + " steps"};
}

// 5. Complexity fidelity -----------------------------------------------------

Outcome complexity_fidelity() {
  struct Golden {
    LayerSpec spec;
    std::int64_t flops;
  };
  // Hand-substituted values; see the complexity unit tests for the arithmetic.
  const std::vector<Golden> golden = {
      {{LayerKind::conv, 3, 3, 4, 4, 4, 4, 8, 8, 1, 1}, 9216},
      {{LayerKind::conv, 1, 1, 8, 8, 8, 8, 16, 32, 1, 4}, 8192},
      {{LayerKind::conv, 3, 3, 8, 8, 4, 4, 8, 8, 2, 8}, 1152},
      {{LayerKind::conv, 1, 3, 6, 6, 6, 6, 4, 4, 1, 4}, 432},
      {{LayerKind::conv, 3, 3, 5, 5, 3, 3, 3, 4, 2, 1}, 675},
      {{LayerKind::conv, 3, 3, 5, 5, 3, 3, 3, 5, 2, 1}, 843},
      {{LayerKind::pool, 2, 2, 8, 8, 4, 4, 8, 8, 2, 1}, 512},
      {{LayerKind::fc, 1, 1, 1, 1, 16, 1, 64, 16, 1, 1}, 1024},
      {{LayerKind::bn, 1, 1, 8, 8, 8, 8, 16, 16, 1, 1}, 4096},
      {{LayerKind::act, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, 1},
  };
  LayerLog log;
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < golden.size(); ++i) {
    const auto got = layer_flops(golden[i].spec).flops;
    expect(got == golden[i].flops, "golden layer " + std::to_string(i) + ": " +
                                       std::to_string(got) + " vs " +
                                       std::to_string(golden[i].flops));
    log.add("golden" + std::to_string(i), golden[i].spec);
    sum += golden[i].flops;
  }
  expect(summarize({1, 8, 4, 4}, {1, 1, 1, 1}, log).total_flops() == sum, "golden sum");

  std::int64_t group_checked = 0;
  for (auto p : {Profile::workstation, Profile::agx, Profile::nano}) {
    JetSeg model(ModelConfig::for_profile(p));
    const auto r = model_complexity(*model, {1, 3, 512, 512});
    std::int64_t layers = 0;
    for (const auto& rec : r.per_layer) layers += rec.flops;
    expect(layers == r.total_flops(), to_string(p) + " layer sum");
    expect(r.flops.conv + r.flops.pool + r.flops.fc + r.flops.act + r.flops.bn == layers,
           to_string(p) + " kind sum");

    LayerLog enc_log, dec_log;
    const FeatureShape in{1, 3, 512, 512};
    const auto stages = model->encoder->describe_stages(in, enc_log);
    model->decoder->describe(stages, dec_log);
    const auto enc = summarize(in, stages[2], enc_log);
    const auto dec = summarize(stages[0], r.output, dec_log);
    expect(enc.total_flops() + dec.total_flops() == r.total_flops(),
           to_string(p) + " encoder + decoder");

    for (const auto& rec : r.per_layer) {
      if (rec.spec.kind != LayerKind::conv) continue;
      auto one = rec.spec;
      one.groups = 1;
      expect(!rec.rounded && rec.flops * rec.spec.groups == layer_flops(one).flops,
             "group property at " + rec.id);
      ++group_checked;
    }
  }
  return {Outcome::pass, "10 golden layers exact, additivity on 3 profiles, group property on " +
                             std::to_string(group_checked) + " conv layers"};
}

// 6. Target-scale complexity -------------------------------------------------

Outcome target_scale(const fs::path& dir) {
  const auto cfg = ModelConfig::for_profile(Profile::workstation);
  const auto r = analyze(cfg, 512, 512);
  write_jsonl(dir / "complexity_workstation_512.jsonl", {r.to_json()});
  const double gflops = r.total_flops() / 1e9;
  std::ostringstream os;
  os << "total " << fmt(gflops) << " GFLOPs (target " << kTargetGflops << " within x"
     << kFlopsFactor << "), " << r.params << " params (< " << kMaxParams << ")";
  const bool ok = gflops >= kTargetGflops / kFlopsFactor && gflops <= kTargetGflops * kFlopsFactor &&
                  r.params < kMaxParams;
  return {ok ? Outcome::pass : Outcome::fail, os.str()};
}

// 7. Desk-scale training -----------------------------------------------------

Outcome desk_training(const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = synthetic_blobs(kBlobSamples, kBlobClasses, kBlobSize, kBlobSize, kBlobSeed);
  const auto splits = build_splits(data->ids(), kBlobSeed);
  auto cfg = ModelConfig::for_profile(Profile::workstation);
  cfg.input_h = kBlobSize;
  cfg.input_w = kBlobSize;
  cfg.num_classes = kBlobClasses;

  TrainOptions opts;
  opts.epochs = kBlobEpochs;
  opts.batch_size = kBlobBatch;
  opts.learning_rate = kBlobLr;
  opts.seed = kBlobSeed;
  opts.out_dir = dir / "desk_training";
  const auto rec = train(cfg, *data, splits, opts, [](const EpochRecord& e) {
    std::cerr << "  epoch " << e.epoch << " train " << e.train_loss << " val mIoU "
              << e.val_miou << "\n";
  });
  const double secs = seconds_since(t0);

  const double first = rec.epochs.front().train_loss;
  const double last = rec.epochs.back().train_loss;
  const double ratio = last / first;
  const double val = rec.epochs.back().val_miou;
  std::ostringstream os;
  os << "val mIoU " << fmt(val) << " (>= " << kMinValMiou << "), loss " << fmt(first) << " -> "
     << fmt(last) << " = " << fmt(100 * ratio, 3) << "% (< " << 100 * kMaxLossRatio << "%), "
     << fmt(secs, 3) << " s";
  const bool ok = rec.epochs.size() == static_cast<std::size_t>(kBlobEpochs) &&
                  val >= kMinValMiou && ratio < kMaxLossRatio && secs < kTrainBudgetS;
  return {ok ? Outcome::pass : Outcome::fail, os.str()};
}

// 8. CamVid smoke ------------------------------------------------------------

fs::path camvid_root() {
  const char* env = std::getenv("JETSEG_CAMVID");
  return env && *env ? fs::path(env) : fs::path("data/CamVid");
}

Outcome camvid_smoke(const fs::path& dir) {
  std::vector<std::string> ids;
  for (int i = 0; i < 701; ++i) ids.push_back("f" + std::to_string(i));
  const auto protocol = build_splits(ids, 0);
  expect(protocol.train.size() == 367 && protocol.val.size() == 101 && protocol.test.size() == 233,
         "701-id split protocol");

  const auto root = camvid_root();
  if (!CamVidDataset::looks_like_camvid(root)) {
    return {Outcome::skip, "no dataset at " + root.string() +
                               " (set JETSEG_CAMVID); 701-id split protocol gives 367/101/233"};
  }
  CamVidDataset data(root, kCamVidH, kCamVidW);
  const auto splits = build_splits(data.ids(), 0);
  expect(splits.train.size() == 367 && splits.val.size() == 101 && splits.test.size() == 233,
         "CamVid splits " + std::to_string(splits.train.size()) + "/" +
             std::to_string(splits.val.size()) + "/" + std::to_string(splits.test.size()));

  auto cfg = ModelConfig::for_profile(Profile::workstation);
  cfg.input_h = kCamVidH;
  cfg.input_w = kCamVidW;
  cfg.num_classes = data.num_classes();
  TrainOptions opts;
  opts.epochs = kCamVidEpochs;
  opts.out_dir = dir / "camvid";
  RunRecord rec;
  try {
    rec = train(cfg, data, splits, opts, [](const EpochRecord& e) {
      std::cerr << "  camvid epoch " << e.epoch << " train " << e.train_loss << "\n";
    });
  } catch (const TrainingDiverged& e) {
    return {Outcome::fail, e.what()};
  }
  expect(rec.test.has_value(), "no test metrics");

  // Constant prediction of the most frequent training class
  std::vector<std::int64_t> counts(cfg.num_classes, 0);
  for (auto i : indices_of(data, splits.train)) {
    const auto c = pixel_counts(data.get(i).labels, cfg.num_classes);
    for (std::int64_t k = 0; k < cfg.num_classes; ++k) counts[k] += c[k];
  }
  const auto majority = std::max_element(counts.begin(), counts.end()) - counts.begin();
  const Predictor constant = [&](const Batch& b) {
    return one_hot_probs(torch::full_like(b.labels, majority), cfg.num_classes);
  };
  const auto base = evaluate_predictions(data, indices_of(data, splits.test), rec.manifest.stats,
                                         rec.weights, constant);
  std::ostringstream os;
  os << "splits 367/101/233, test mIoU " << fmt(rec.test->miou_present) << " vs majority "
     << fmt(base.miou_present);
  return {rec.test->miou_present > base.miou_present ? Outcome::pass : Outcome::fail, os.str()};
}

// 9. Benchmark protocol ------------------------------------------------------

Outcome bench_protocol(const fs::path& dir) {
  std::ostringstream os;
  std::vector<nlohmann::json> records;
  std::vector<std::int64_t> params;
  for (auto p : {Profile::nano, Profile::agx, Profile::workstation}) {
    const auto cfg = ModelConfig::for_profile(p);
    const auto r = benchmark(cfg, 256, 256, kBenchWarmup, kBenchIters);
    expect(r.latencies_ms.size() >= static_cast<std::size_t>(kMinBenchIters) && r.warmup > 0,
           to_string(p) + " timed " + std::to_string(r.latencies_ms.size()) + " iterations");
    records.push_back(r.to_json());
    params.push_back(analyze(cfg, 512, 512).params);
    os << to_string(p) << " " << params.back() << " params " << fmt(r.summary.fps, 3)
       << " FPS; ";
  }
  write_jsonl(dir / "bench_256.jsonl", records);
  expect(params[0] <= params[1] && params[1] <= params[2], "params ordering: " + os.str());
  os << kBenchIters << " timed iterations after " << kBenchWarmup << " warmup";
  return {Outcome::pass, os.str()};
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  const auto dir = out_dir();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"shapes", shapes},
      {"oracles", oracles},
      {"gradients", gradients},
      {"jetloss calibration", calibration},
      {"complexity fidelity", complexity_fidelity},
      {"workstation complexity at 512", [&] { return target_scale(dir); }},
      {"desk-scale training", [&] { return desk_training(dir); }},
      {"camvid smoke", [&] { return camvid_smoke(dir); }},
      {"benchmark protocol", [&] { return bench_protocol(dir); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Outcome::fail, e.what()};
    }
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
    if (o.kind == Outcome::fail) ++failures;
    std::cout << "[" << tag << "] " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " failed"
                         : std::string("acceptance: all criteria met"))
            << std::endl;
  return failures ? 1 : 0;
}
