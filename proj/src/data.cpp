#include "jetseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "jetseg/errors.hpp"
#include "jetseg/losses.hpp"

namespace jetseg {

namespace fs = std::filesystem;

torch::Tensor standardize(const torch::Tensor& image, const ChannelStats& stats) {
  auto opts = torch::TensorOptions().dtype(image.scalar_type());
  auto mean = torch::tensor({stats.mean[0], stats.mean[1], stats.mean[2]}, opts.dtype(torch::kDouble))
                  .to(image.scalar_type());
  auto sd = torch::tensor({stats.stddev[0], stats.stddev[1], stats.stddev[2]},
                          opts.dtype(torch::kDouble))
                .to(image.scalar_type());
  const auto shape = image.dim() == 4 ? std::vector<std::int64_t>{1, 3, 1, 1}
                                      : std::vector<std::int64_t>{3, 1, 1};
  return (image - mean.view(shape)) / sd.view(shape);
}

// ---------------------------------------------------------------------------
// Splits

SplitManifest build_splits(std::vector<std::string> ids, std::uint64_t seed) {
  if (ids.size() < 3) throw InvalidInput("build_splits needs at least 3 ids");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = ids.size();
  const auto test = n * 233 / 701;
  const auto pool = n - test;
  const auto train = pool * 367 / 468;

  SplitManifest m;
  m.seed = seed;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(train),
               ids.begin() + static_cast<std::ptrdiff_t>(pool));
  m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(pool), ids.end());
  return m;
}

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path.string());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    if (!l.empty()) lines.push_back(l);
  }
  return lines;
}

}  // namespace

void SplitManifest::save(const fs::path& dir) const {
  fs::create_directories(dir);
  write_lines(dir / "train.txt", train);
  write_lines(dir / "val.txt", val);
  write_lines(dir / "test.txt", test);
  std::ofstream out(dir / "manifest.txt");
  out.precision(17);
  out << "seed " << seed << "\n"
      << "mean " << stats.mean[0] << " " << stats.mean[1] << " " << stats.mean[2] << "\n"
      << "std " << stats.stddev[0] << " " << stats.stddev[1] << " " << stats.stddev[2] << "\n";
}

SplitManifest SplitManifest::load(const fs::path& dir) {
  SplitManifest m;
  m.train = read_lines(dir / "train.txt");
  m.val = read_lines(dir / "val.txt");
  m.test = read_lines(dir / "test.txt");
  if (fs::exists(dir / "manifest.txt")) {
    for (const auto& line : read_lines(dir / "manifest.txt")) {
      std::istringstream is(line);
      std::string key;
      is >> key;
      if (key == "seed") {
        is >> m.seed;
      } else if (key == "mean") {
        is >> m.stats.mean[0] >> m.stats.mean[1] >> m.stats.mean[2];
      } else if (key == "std") {
        is >> m.stats.stddev[0] >> m.stats.stddev[1] >> m.stats.stddev[2];
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Palette

Palette Palette::parse(const std::string& text) {
  Palette p;
  std::istringstream is(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    int r, g, b;
    std::string name;
    if (!(ls >> r)) continue;
    if (!(ls >> g >> b >> name) || r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
      throw InvalidInput("palette line " + std::to_string(lineno) + ": expected 'R G B name'");
    }
    Entry e{{static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
             static_cast<std::uint8_t>(b)},
            name,
            kIgnoreIndex};
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    if (lower != "void") {
      e.label = static_cast<std::int64_t>(p.class_names_.size());
      p.class_names_.push_back(name);
    }
    p.entries_.push_back(std::move(e));
  }
  if (p.class_names_.empty()) throw InvalidInput("palette defines no classes");
  return p;
}

Palette Palette::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read palette " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Palette Palette::remapped_to_11() const {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> groups = {
      {"Sky", {"Sky"}},
      {"Building", {"Building", "Archway", "Bridge", "Tunnel", "Wall"}},
      {"Pole", {"Column_Pole", "TrafficCone"}},
      {"Road", {"Road", "LaneMkgsDriv", "LaneMkgsNonDriv"}},
      {"Sidewalk", {"Sidewalk", "ParkingBlock", "RoadShoulder"}},
      {"Tree", {"Tree", "VegetationMisc"}},
      {"SignSymbol", {"SignSymbol", "Misc_Text", "TrafficLight"}},
      {"Fence", {"Fence"}},
      {"Car", {"Car", "SUVPickupTruck", "Truck_Bus", "Train", "OtherMoving"}},
      {"Pedestrian", {"Pedestrian", "Child", "CartLuggagePram", "Animal"}},
      {"Bicyclist", {"Bicyclist", "MotorcycleScooter"}},
  };
  std::map<std::string, std::int64_t> target;
  Palette out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    out.class_names_.push_back(groups[g].first);
    for (const auto& name : groups[g].second) target[name] = static_cast<std::int64_t>(g);
  }
  for (const auto& e : entries_) {
    auto it = target.find(e.name);
    out.entries_.push_back({e.rgb, e.name, it == target.end() ? kIgnoreIndex : it->second});
  }
  return out;
}

namespace {

std::uint32_t pack(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return (std::uint32_t{r} << 16) | (std::uint32_t{g} << 8) | b;
}

}  // namespace

torch::Tensor Palette::decode(const torch::Tensor& rgb, const std::string& source) const {
  if (rgb.dim() != 3 || rgb.size(2) != 3) throw InvalidInput("colour mask must be (H, W, 3)");
  std::unordered_map<std::uint32_t, std::int64_t> lut;
  for (const auto& e : entries_) lut.emplace(pack(e.rgb[0], e.rgb[1], e.rgb[2]), e.label);
  auto src = rgb.to(torch::kUInt8).contiguous();
  const auto h = src.size(0), w = src.size(1);
  auto out = torch::empty({h, w}, torch::kLong);
  const auto* px = src.data_ptr<std::uint8_t>();
  auto* dst = out.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < h * w; ++i) {
    const auto key = pack(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
    auto it = lut.find(key);
    if (it == lut.end()) {
      throw InvalidInput("unknown palette colour (" + std::to_string(px[3 * i]) + ", " +
                         std::to_string(px[3 * i + 1]) + ", " + std::to_string(px[3 * i + 2]) +
                         ")" + (source.empty() ? "" : " in " + source));
    }
    dst[i] = it->second;
  }
  return out;
}

torch::Tensor Palette::encode(const torch::Tensor& labels) const {
  std::unordered_map<std::int64_t, std::array<std::uint8_t, 3>> colour;
  for (const auto& e : entries_) colour.emplace(e.label, e.rgb);
  auto src = labels.to(torch::kLong).contiguous();
  const auto h = src.size(0), w = src.size(1);
  auto out = torch::zeros({h, w, 3}, torch::kUInt8);
  const auto* lab = src.data_ptr<std::int64_t>();
  auto* dst = out.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < h * w; ++i) {
    auto it = colour.find(lab[i]);
    if (it == colour.end()) throw InvalidInput("label " + std::to_string(lab[i]) + " has no colour");
    std::copy(it->second.begin(), it->second.end(), dst + 3 * i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

SegmentationSample load_sample(const fs::path& image_path, const fs::path& label_path,
                               const Palette& palette, std::int64_t target_h,
                               std::int64_t target_w, const ChannelStats* stats) {
  cv::Mat bgr = cv::imread(image_path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw InvalidInput("cannot read image " + image_path.string());
  cv::Mat mask_bgr = cv::imread(label_path.string(), cv::IMREAD_COLOR);
  if (mask_bgr.empty()) throw InvalidInput("cannot read label mask " + label_path.string());
  if (bgr.size() != mask_bgr.size()) {
    throw InvalidInput("image and label sizes differ for " + image_path.string());
  }

  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  const cv::Size target(static_cast<int>(target_w), static_cast<int>(target_h));
  if (rgb.size() != target) cv::resize(rgb, rgb, target, 0, 0, cv::INTER_LINEAR);

  cv::Mat mask_rgb;
  cv::cvtColor(mask_bgr, mask_rgb, cv::COLOR_BGR2RGB);
  auto mask_t = torch::from_blob(mask_rgb.data, {mask_rgb.rows, mask_rgb.cols, 3}, torch::kUInt8)
                    .clone();
  auto labels = palette.decode(mask_t, label_path.string());
  if (labels.size(0) != target_h || labels.size(1) != target_w) {
    cv::Mat idx(static_cast<int>(labels.size(0)), static_cast<int>(labels.size(1)), CV_8U);
    auto l8 = labels.to(torch::kUInt8).contiguous();
    std::memcpy(idx.data, l8.data_ptr<std::uint8_t>(), static_cast<std::size_t>(l8.numel()));
    cv::resize(idx, idx, target, 0, 0, cv::INTER_NEAREST);
    labels = torch::from_blob(idx.data, {target_h, target_w}, torch::kUInt8).to(torch::kLong);
  }

  SegmentationSample s;
  s.id = image_path.stem().string();
  s.image = torch::from_blob(rgb.data, {target_h, target_w, 3}, torch::kUInt8)
                .permute({2, 0, 1})
                .to(torch::kFloat)
                .div(255.0)
                .contiguous();
  if (stats) s.image = standardize(s.image, *stats);
  s.labels = labels.contiguous();
  return s;
}

std::vector<std::string> SegmentationDataset::class_names() const {
  std::vector<std::string> names;
  for (std::int64_t c = 0; c < num_classes(); ++c) names.push_back("class " + std::to_string(c));
  return names;
}

std::size_t SegmentationDataset::index_of(const std::string& id) const {
  const auto& all = ids();
  auto it = std::find(all.begin(), all.end(), id);
  if (it == all.end()) throw InvalidInput("unknown sample id '" + id + "'");
  return static_cast<std::size_t>(it - all.begin());
}

InMemoryDataset::InMemoryDataset(std::vector<SegmentationSample> samples,
                                 std::int64_t num_classes)
    : samples_(std::move(samples)), num_classes_(num_classes) {
  for (const auto& s : samples_) ids_.push_back(s.id);
}

namespace {

fs::path find_palette(const fs::path& root) {
  for (const char* name : {"palette.txt", "label_colors.txt"}) {
    if (fs::exists(root / name)) return root / name;
  }
  return {};
}

fs::path find_label(const fs::path& labels_dir, const std::string& stem) {
  for (const auto& candidate : {stem + ".png", stem + "_L.png"}) {
    if (fs::exists(labels_dir / candidate)) return labels_dir / candidate;
  }
  return {};
}

}  // namespace

bool CamVidDataset::looks_like_camvid(const fs::path& root) {
  return fs::is_directory(root / "images") && fs::is_directory(root / "labels") &&
         !find_palette(root).empty();
}

CamVidDataset::CamVidDataset(const fs::path& root, std::int64_t target_h, std::int64_t target_w,
                             bool eleven_classes)
    : root_(root), target_h_(target_h), target_w_(target_w) {
  if (!looks_like_camvid(root)) {
    throw InvalidInput(root.string() + " lacks images/, labels/ and a palette file");
  }
  palette_ = Palette::load(find_palette(root));
  if (eleven_classes) palette_ = palette_.remapped_to_11();
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(root / "images")) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".bmp")) {
      images.push_back(e.path());
    }
  }
  std::sort(images.begin(), images.end());
  for (const auto& img : images) {
    const auto stem = img.stem().string();
    auto label = find_label(root / "labels", stem);
    if (label.empty()) throw InvalidInput("no label mask for image " + img.string());
    ids_.push_back(stem);
    images_.push_back(img);
    labels_.push_back(label);
  }
}

SegmentationSample CamVidDataset::get(std::size_t index) const {
  return load_sample(images_.at(index), labels_.at(index), palette_, target_h_, target_w_);
}

// ---------------------------------------------------------------------------
// Synthetic blobs

namespace {

std::array<float, 3> class_colour(std::int64_t c, std::int64_t classes) {
  // Shapes get saturated hues; the background (class 0) is mid grey.
  if (c == 0) return {0.45f, 0.45f, 0.45f};
  const float hue = static_cast<float>(c - 1) / static_cast<float>(classes - 1) * 6.0f;
  const float x = 1.0f - std::fabs(std::fmod(hue, 2.0f) - 1.0f);
  std::array<float, 3> rgb{};
  switch (static_cast<int>(hue)) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  for (auto& v : rgb) v = 0.1f + 0.8f * v;
  return rgb;
}

}  // namespace

std::unique_ptr<InMemoryDataset> synthetic_blobs(std::size_t n, std::int64_t classes,
                                                 std::int64_t height, std::int64_t width,
                                                 std::uint64_t seed) {
  if (classes < 2) throw InvalidSpec("synthetic_blobs needs at least 2 classes");
  if (height < 4 || width < 4) throw InvalidSpec("synthetic_blobs needs images of at least 4x4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  const auto min_side = std::min(height, width);

  std::vector<SegmentationSample> samples;
  samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto image = torch::empty({3, height, width}, torch::kFloat);
    auto labels = torch::zeros({height, width}, torch::kLong);
    auto img = image.accessor<float, 3>();
    auto lab = labels.accessor<std::int64_t, 2>();
    for (std::int64_t y = 0; y < height; ++y) {
      for (std::int64_t x = 0; x < width; ++x) {
        const float grey = 0.3f + 0.3f * unit(rng);
        for (int ch = 0; ch < 3; ++ch) img[ch][y][x] = grey;
      }
    }
    const int shapes = 1 + static_cast<int>(rng() % 3);
    for (int s = 0; s < shapes; ++s) {
      const std::int64_t cls =
          s == 0 ? 1 + static_cast<std::int64_t>(i % static_cast<std::size_t>(classes - 1))
                 : 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(classes - 1));
      const auto colour = class_colour(cls, classes);
      const float radius = static_cast<float>(min_side) * (0.12f + 0.13f * unit(rng));
      const float cy = radius + unit(rng) * (static_cast<float>(height) - 2 * radius);
      const float cx = radius + unit(rng) * (static_cast<float>(width) - 2 * radius);
      const bool disc = rng() % 2 == 0;
      for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
          const float dy = static_cast<float>(y) + 0.5f - cy;
          const float dx = static_cast<float>(x) + 0.5f - cx;
          const bool inside = disc ? dx * dx + dy * dy <= radius * radius
                                   : std::fabs(dx) <= radius && std::fabs(dy) <= 0.7f * radius;
          if (!inside) continue;
          lab[y][x] = cls;
          const float jitter = 0.1f * (unit(rng) - 0.5f);
          for (int ch = 0; ch < 3; ++ch) img[ch][y][x] = colour[ch] + jitter;
        }
      }
    }
    samples.push_back({"blob_" + std::to_string(i), image, labels});
  }
  return std::make_unique<InMemoryDataset>(std::move(samples), classes);
}

ChannelStats compute_channel_stats(const SegmentationDataset& data,
                                   std::span<const std::size_t> indices) {
  std::array<double, 3> sum{}, sq{};
  double count = 0;
  for (auto i : indices) {
    auto img = data.get(i).image.to(torch::kDouble);
    for (int c = 0; c < 3; ++c) {
      sum[c] += img[c].sum().item<double>();
      sq[c] += img[c].square().sum().item<double>();
    }
    count += static_cast<double>(img.size(1) * img.size(2));
  }
  ChannelStats st;
  if (count == 0) return st;
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / count;
    const double var = sq[c] / count - st.mean[c] * st.mean[c];
    st.stddev[c] = std::sqrt(std::max(var, 1e-12));
  }
  return st;
}

std::vector<std::size_t> indices_of(const SegmentationDataset& data,
                                    const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> lookup;
  const auto& all = data.ids();
  for (std::size_t i = 0; i < all.size(); ++i) lookup.emplace(all[i], i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = lookup.find(id);
    if (it == lookup.end()) throw InvalidInput("unknown sample id '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

Batch make_batch(const SegmentationDataset& data, std::span<const std::size_t> indices,
                 const ChannelStats& stats) {
  std::vector<torch::Tensor> images, labels;
  images.reserve(indices.size());
  labels.reserve(indices.size());
  for (auto i : indices) {
    auto s = data.get(i);
    images.push_back(s.image);
    labels.push_back(s.labels);
  }
  return {standardize(torch::stack(images), stats), torch::stack(labels)};
}

}  // namespace jetseg
