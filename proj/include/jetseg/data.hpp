#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace jetseg {

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

/// image: (3, H, W) float; labels: (H, W) int64 in [0, C) or 255.
struct SegmentationSample {
  std::string id;
  torch::Tensor image;
  torch::Tensor labels;
};

/// (image - mean) / std per channel; works for (3,H,W) and (N,3,H,W).
torch::Tensor standardize(const torch::Tensor& image, const ChannelStats& stats);

struct SplitManifest {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;
  /// Standardisation constants of the training split.
  ChannelStats stats;

  /// Writes train.txt, val.txt, test.txt and manifest.txt (seed and stats) into `dir`.
  void save(const std::filesystem::path& dir) const;
  static SplitManifest load(const std::filesystem::path& dir);
  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

/// Seeded shuffle, then test = floor(n*233/701) and train = floor(pool*367/468) with the
/// remainder of each cut going to the earlier set (pool, then val). Reproduces the
/// 367/101/233 CamVid protocol on 701 ids.
SplitManifest build_splits(std::vector<std::string> ids, std::uint64_t seed);

/// Colour-to-class table parsed from "R G B name" lines. An entry named "Void" maps to
/// the ignore index; every other entry is a class, numbered in file order unless remapped.
class Palette {
 public:
  static Palette parse(const std::string& text);
  static Palette load(const std::filesystem::path& path);

  /// Common 11-class CamVid grouping of the 32 raw labels; unlisted names become void.
  Palette remapped_to_11() const;

  std::int64_t num_classes() const { return static_cast<std::int64_t>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// (H, W, 3) uint8 RGB -> (H, W) int64; throws InvalidInput naming the colour and `source`.
  torch::Tensor decode(const torch::Tensor& rgb, const std::string& source = "") const;
  /// (H, W) int64 -> (H, W, 3) uint8 RGB using the first entry of each class.
  torch::Tensor encode(const torch::Tensor& labels) const;

 private:
  struct Entry {
    std::array<std::uint8_t, 3> rgb;
    std::string name;
    std::int64_t label;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> class_names_;
};

/// Reads an image and colour mask, mapping colours through `palette`. Images are resized
/// bilinearly, labels with nearest neighbour; image values in [0, 1], standardised when
/// `stats` is given.
SegmentationSample load_sample(const std::filesystem::path& image_path,
                               const std::filesystem::path& label_path, const Palette& palette,
                               std::int64_t target_h, std::int64_t target_w,
                               const ChannelStats* stats = nullptr);

class SegmentationDataset {
 public:
  virtual ~SegmentationDataset() = default;
  virtual std::size_t size() const = 0;
  /// Image in [0, 1] (not standardised).
  virtual SegmentationSample get(std::size_t index) const = 0;
  virtual std::int64_t num_classes() const = 0;
  virtual const std::vector<std::string>& ids() const = 0;
  virtual std::vector<std::string> class_names() const;

  std::size_t index_of(const std::string& id) const;
};

class InMemoryDataset : public SegmentationDataset {
 public:
  InMemoryDataset(std::vector<SegmentationSample> samples, std::int64_t num_classes);

  std::size_t size() const override { return samples_.size(); }
  SegmentationSample get(std::size_t index) const override { return samples_.at(index); }
  std::int64_t num_classes() const override { return num_classes_; }
  const std::vector<std::string>& ids() const override { return ids_; }

 private:
  std::vector<SegmentationSample> samples_;
  std::vector<std::string> ids_;
  std::int64_t num_classes_;
};

/// Directory of images/<stem>.png with labels/<stem>.png or labels/<stem>_L.png and a
/// palette file (palette.txt or label_colors.txt). Samples are read lazily.
class CamVidDataset : public SegmentationDataset {
 public:
  CamVidDataset(const std::filesystem::path& root, std::int64_t target_h, std::int64_t target_w,
                bool eleven_classes = false);

  /// True when `root` has the expected layout.
  static bool looks_like_camvid(const std::filesystem::path& root);

  std::size_t size() const override { return ids_.size(); }
  SegmentationSample get(std::size_t index) const override;
  std::int64_t num_classes() const override { return palette_.num_classes(); }
  const std::vector<std::string>& ids() const override { return ids_; }
  std::vector<std::string> class_names() const override { return palette_.class_names(); }

 private:
  std::filesystem::path root_;
  std::int64_t target_h_, target_w_;
  Palette palette_;
  std::vector<std::string> ids_;
  std::vector<std::filesystem::path> images_, labels_;
};

/// Coloured discs and rectangles on a grey noise background. Class 0 is the background;
/// shape colour determines the class. Sample i always contains class 1 + (i mod (C-1)).
std::unique_ptr<InMemoryDataset> synthetic_blobs(std::size_t n, std::int64_t classes,
                                                 std::int64_t height, std::int64_t width,
                                                 std::uint64_t seed);

/// Per-channel mean/std of the [0, 1] images of the given samples.
ChannelStats compute_channel_stats(const SegmentationDataset& data,
                                   std::span<const std::size_t> indices);

std::vector<std::size_t> indices_of(const SegmentationDataset& data,
                                    const std::vector<std::string>& ids);

struct Batch {
  torch::Tensor images;  // (N, 3, H, W) standardised
  torch::Tensor labels;  // (N, H, W) int64
};

Batch make_batch(const SegmentationDataset& data, std::span<const std::size_t> indices,
                 const ChannelStats& stats);

}  // namespace jetseg
