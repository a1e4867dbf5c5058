#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attg/attention.hpp"
#include "attg/image_io.hpp"
#include "attg/patching.hpp"

namespace attg {

enum class ShapeKind : std::uint8_t { circle, square, triangle, cross, ring, diamond };
enum class FillPattern : std::uint8_t { solid, stripes, dots };
enum class TextureKind : std::uint8_t { stripes, gradient, checker, noise };
enum class BackgroundVariant : std::uint8_t { OF, MS, MR, MN };

inline constexpr int kShapeKinds = 6;
inline constexpr int kFillPatterns = 3;

std::string to_string(BackgroundVariant v);
BackgroundVariant parse_variant(const std::string& s);

struct SceneSpec {
  int label = 0;
  ShapeKind shape = ShapeKind::circle;
  FillPattern fill = FillPattern::solid;
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
  double rotation = 0.0;
  TextureKind texture = TextureKind::stripes;
  std::uint64_t noise_seed = 0;
};

struct GroundTruthMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // 1 = foreground
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> patch_fraction;  // foreground pixel fraction per patch

  double coverage() const;
  // Patch labels: 1 where at least half the patch is foreground.
  std::vector<std::uint8_t> patch_labels() const;
};

GroundTruthMask mask_from_pixels(int height, int width, std::vector<std::uint8_t> pixels, int patch_size);

struct DataConfig {
  int classes = 10;
  int per_class = 100;
  int image_size = 64;
  int patch_size = 8;
  std::uint64_t seed = 0;
  int feature_dim = 16;

  void validate() const;
  std::string to_text() const;
  static DataConfig from_map(const std::map<std::string, std::string>& kv);
};

struct Sample {
  Image image;
  GroundTruthMask mask;
  SceneSpec scene;
};

ShapeKind shape_of_class(int label);
FillPattern fill_of_class(int label);
TextureKind texture_of_class(int label);

// Draws one scene of the given class; the object keeps a margin of one patch (at most an eighth of
// the image side) and covers 10–50% of pixels.
Sample generate_sample(const DataConfig& config, int label, std::uint64_t seed);

// Class-major corpus with a stratified 80/20 train/val split. Pure function of the config.
std::vector<Sample> generate_samples(const DataConfig& config);

// Fresh background drawn from the given class's texture distribution.
Image render_background(int label, int classes, int size, std::uint64_t seed);

// Replaces background pixels according to the variant; foreground pixels are copied bit-for-bit.
Image background_variant(const Image& image, const GroundTruthMask& mask, BackgroundVariant variant, int classes,
                         std::uint64_t seed);

// Raw map of per-patch foreground fractions, optionally perturbed by uniform noise of
// amplitude eta and clamped to [0, 1].
AttentionMap oracle_attention(const GroundTruthMask& mask, double eta = 0.0, std::uint64_t seed = 0);

// Seeded orthonormal projection of a per-patch descriptor (centered mean color, color spread,
// signed foreground fraction, patch coordinates, bias).
PatchFeatures oracle_features(const Image& image, const GroundTruthMask& mask, int dim, std::uint64_t seed);

// ---- on-disk corpus ------------------------------------------------------------------

struct DatasetEntry {
  std::string id;
  std::string path;
  int label = 0;
  Split split = Split::train;
};

// Writes images, masks, ground-truth maps, oracle features, val-split background
// variants, index.csv, and dataset.cfg under `out`.
void generate_dataset(const DataConfig& config, const std::filesystem::path& out);

struct Dataset {
  std::filesystem::path root;
  DataConfig config;
  std::vector<DatasetEntry> entries;
  std::vector<Sample> samples;  // aligned with entries

  std::vector<int> indices(Split split) const;
  std::vector<Image> variant_images(BackgroundVariant variant) const;  // val split, entry order
};

Dataset load_dataset(const std::filesystem::path& root);

// The same corpus as generate_dataset, kept in memory (empty root).
Dataset in_memory_dataset(const DataConfig& config);

std::vector<DatasetEntry> parse_index(const std::string& csv);

std::uint64_t variant_seed(std::uint64_t dataset_seed, const std::string& id, BackgroundVariant v);
std::uint64_t feature_projection_seed(std::uint64_t dataset_seed);

}  // namespace attg
