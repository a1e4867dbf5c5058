#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace attg {

enum class Split : std::uint8_t { train, val };

std::string to_string(Split s);
Split parse_split(const std::string& s);

// H×W×3 raster with values in [0,1], stored row-major with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
  int label = 0;
  Split split = Split::train;
  std::string id;

  static Image zeros(int height, int width);

  double& at(int row, int col, int channel) { return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel]; }
  double at(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
};

// N×D patch matrix. Row p is patch (p / grid_w, p % grid_w); columns follow
// (row, column, channel) raster order inside the patch.
struct PatchGrid {
  Eigen::MatrixXd patches;
  int grid_h = 0;
  int grid_w = 0;
  int patch_size = 0;

  int count() const { return grid_h * grid_w; }
  int dim() const { return patch_size * patch_size * 3; }
};

struct NormalizedTarget {
  Eigen::MatrixXd patches;
  double epsilon = 1e-6;
};

// gamma[i] == 1 marks patch i as masked (hidden from the encoder).
struct MaskSpec {
  std::vector<std::uint8_t> gamma;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> visible_indices;

  int size() const { return static_cast<int>(gamma.size()); }
  int masked_count() const;
  std::vector<int> masked_indices() const;

  // Builds a mask from an explicit gamma vector; ratio is set to the masked fraction.
  static MaskSpec from_gamma(std::vector<std::uint8_t> gamma);
};

inline constexpr double kDefaultTargetEpsilon = 1e-6;
inline constexpr double kDefaultMaskRatio = 0.75;

PatchGrid patchify(const Image& image, int patch_size);
Image unpatchify(const PatchGrid& grid);

// Per-row standardization: (x - mean) / sqrt(var + epsilon), population variance.
NormalizedTarget normalize_targets(const PatchGrid& grid, double epsilon = kDefaultTargetEpsilon);

// floor(n × ratio) with a small guard against representation error (e.g. 0.29 × 100).
int masked_count_for(int n_patches, double ratio);

MaskSpec sample_random_mask(int n_patches, double ratio, std::uint64_t seed);

struct AttentionMap;

// Masks the floor(N × ratio) patches with the highest normalized attention; ties go to the lower index.
MaskSpec attention_descending_mask(const AttentionMap& map, double ratio);

}  // namespace attg
