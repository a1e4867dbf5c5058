#include "attg/patching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attg/attention.hpp"
#include "attg/error.hpp"
#include "attg/rng.hpp"

namespace attg {

std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw ValidationError("unknown split '" + s + "'");
}

Image Image::zeros(int height, int width) {
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width * 3, 0.0);
  return img;
}

int MaskSpec::masked_count() const {
  return static_cast<int>(std::count(gamma.begin(), gamma.end(), std::uint8_t{1}));
}

std::vector<int> MaskSpec::masked_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (gamma[i]) out.push_back(i);
  return out;
}

MaskSpec MaskSpec::from_gamma(std::vector<std::uint8_t> gamma) {
  MaskSpec m;
  m.gamma = std::move(gamma);
  for (int i = 0; i < m.size(); ++i) {
    if (m.gamma[i] > 1) throw ValidationError("mask values must be 0 or 1");
    if (!m.gamma[i]) m.visible_indices.push_back(i);
  }
  m.ratio = m.gamma.empty() ? 0.0 : static_cast<double>(m.masked_count()) / m.size();
  return m;
}

PatchGrid patchify(const Image& image, int patch_size) {
  if (patch_size <= 0) throw ValidationError("patch size must be positive");
  if (image.height <= 0 || image.width <= 0 || image.height % patch_size || image.width % patch_size)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3)
    throw ShapeError("pixel buffer does not match image dimensions");

  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.grid_h = image.height / patch_size;
  grid.grid_w = image.width / patch_size;
  grid.patches.resize(grid.count(), grid.dim());
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      const int p = gy * grid.grid_w + gx;
      int k = 0;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c)
          for (int ch = 0; ch < 3; ++ch) grid.patches(p, k++) = image.at(gy * patch_size + r, gx * patch_size + c, ch);
    }
  return grid;
}

Image unpatchify(const PatchGrid& grid) {
  if (grid.patch_size <= 0 || grid.grid_h <= 0 || grid.grid_w <= 0 || grid.patches.rows() != grid.count() ||
      grid.patches.cols() != grid.dim())
    throw ShapeError("patch grid shape does not match its geometry");
  Image img = Image::zeros(grid.grid_h * grid.patch_size, grid.grid_w * grid.patch_size);
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      const int p = gy * grid.grid_w + gx;
      int k = 0;
      for (int r = 0; r < grid.patch_size; ++r)
        for (int c = 0; c < grid.patch_size; ++c)
          for (int ch = 0; ch < 3; ++ch)
            img.at(gy * grid.patch_size + r, gx * grid.patch_size + c, ch) = grid.patches(p, k++);
    }
  return img;
}

NormalizedTarget normalize_targets(const PatchGrid& grid, double epsilon) {
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  NormalizedTarget out;
  out.epsilon = epsilon;
  out.patches.resize(grid.patches.rows(), grid.patches.cols());
  const double d = static_cast<double>(grid.patches.cols());
  for (Eigen::Index i = 0; i < grid.patches.rows(); ++i) {
    const auto row = grid.patches.row(i);
    const double mean = row.sum() / d;
    const double var = (row.array() - mean).square().sum() / d;
    out.patches.row(i) = (row.array() - mean) / std::sqrt(var + epsilon);
  }
  return out;
}

int masked_count_for(int n_patches, double ratio) {
  return static_cast<int>(std::floor(n_patches * ratio + 1e-9));
}

MaskSpec sample_random_mask(int n_patches, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("mask ratio must lie in (0, 1)");
  if (n_patches <= 0) throw ValidationError("patch count must be positive");
  std::vector<int> order(n_patches);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n_patches)}));
  rng.shuffle(order.begin(), order.end());

  const int k = masked_count_for(n_patches, ratio);
  std::vector<std::uint8_t> gamma(n_patches, 0);
  for (int i = 0; i < k; ++i) gamma[order[i]] = 1;
  MaskSpec m = MaskSpec::from_gamma(std::move(gamma));
  m.ratio = ratio;
  m.seed = seed;
  return m;
}

MaskSpec attention_descending_mask(const AttentionMap& map, double ratio) {
  if (map.state != MapState::normalized) throw StateError("descending mask requires a normalized attention map");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("mask ratio must lie in (0, 1)");
  const int n = map.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return map.values[a] > map.values[b]; });
  const int k = masked_count_for(n, ratio);
  std::vector<std::uint8_t> gamma(n, 0);
  for (int i = 0; i < k; ++i) gamma[order[i]] = 1;
  MaskSpec m = MaskSpec::from_gamma(std::move(gamma));
  m.ratio = ratio;
  return m;
}

}  // namespace attg
