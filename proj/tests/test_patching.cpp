#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "attg/attention.hpp"
#include "attg/error.hpp"
#include "attg/patching.hpp"
#include "test_util.hpp"

using namespace attg;

TEST_CASE("patchify shape for a 32x32 image with 16-pixel patches") {
  const PatchGrid g = patchify(Image::zeros(32, 32), 16);
  CHECK(g.count() == 4);
  CHECK(g.dim() == 768);
  CHECK(g.patches.rows() == 4);
  CHECK(g.patches.cols() == 768);
}

TEST_CASE("constant image gives constant patch rows") {
  Image img = Image::zeros(32, 32);
  std::fill(img.pixels.begin(), img.pixels.end(), 0.5);
  const PatchGrid g = patchify(img, 8);
  CHECK((g.patches.array() == 0.5).all());
}

TEST_CASE("patch rows follow raster order inside the patch") {
  Image img = Image::zeros(4, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i);
  const PatchGrid g = patchify(img, 2);
  // Patch 1 is the top-right block: pixels (0,2), (0,3), (1,2), (1,3).
  CHECK(g.patches(1, 0) == img.at(0, 2, 0));
  CHECK(g.patches(1, 3) == img.at(0, 3, 0));
  CHECK(g.patches(1, 6) == img.at(1, 2, 0));
  CHECK(g.patches(2, 0) == img.at(2, 0, 0));
}

TEST_CASE("unpatchify inverts patchify bitwise") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int ps = 1 + trial % 4;
    const Image img = testutil::random_image(gen, ps * (1 + trial % 3), ps * (2 + trial % 2));
    const Image back = unpatchify(patchify(img, ps));
    CHECK(back.height == img.height);
    CHECK(back.width == img.width);
    CHECK(back.pixels == img.pixels);
  }
  const Image zero = unpatchify(patchify(Image::zeros(32, 32), 16));
  CHECK(std::all_of(zero.pixels.begin(), zero.pixels.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("random grids round-trip through unpatchify and patchify") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PatchGrid g;
  g.grid_h = 3;
  g.grid_w = 2;
  g.patch_size = 4;
  g.patches.resize(6, 48);
  for (Eigen::Index i = 0; i < g.patches.size(); ++i) g.patches.data()[i] = u(gen);
  CHECK(patchify(unpatchify(g), 4).patches == g.patches);
}

TEST_CASE("patchify rejects sizes that do not divide the image") {
  CHECK_THROWS_AS(patchify(Image::zeros(30, 32), 8), ShapeError);
  CHECK_THROWS_AS(patchify(Image::zeros(32, 32), 0), ValidationError);
}

TEST_CASE("normalize_targets standardizes each row") {
  PatchGrid g;
  g.grid_h = 1;
  g.grid_w = 2;
  g.patch_size = 1;
  g.patches.resize(2, 3);
  g.patches << 0.3, 0.3, 0.3, 0.0, 1.0, 0.5;
  const NormalizedTarget t = normalize_targets(g, 1e-6);
  CHECK((t.patches.row(0).array() == 0.0).all());

  PatchGrid pair;
  pair.grid_h = pair.grid_w = 1;
  pair.patch_size = 1;
  pair.patches.resize(1, 2);
  pair.patches << 0.0, 1.0;
  const NormalizedTarget p = normalize_targets(pair, 1e-14);
  CHECK(p.patches(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(p.patches(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(normalize_targets(pair, 0.0), ValidationError);

  std::mt19937_64 gen(11);
  std::normal_distribution<double> n(0.4, 0.2);
  PatchGrid r;
  r.grid_h = 50;
  r.grid_w = 1;
  r.patch_size = 4;
  r.patches.resize(50, 48);
  for (Eigen::Index i = 0; i < r.patches.size(); ++i) r.patches.data()[i] = n(gen);
  const NormalizedTarget rt = normalize_targets(r, 1e-6);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const double mean = rt.patches.row(i).mean();
    const double var = (rt.patches.row(i).array() - mean).square().mean();
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("random mask counts and determinism") {
  const MaskSpec m = sample_random_mask(196, 0.75, 42);
  CHECK(m.masked_count() == 147);
  CHECK(m.visible_indices.size() == 49);
  CHECK(sample_random_mask(196, 0.75, 42).gamma == m.gamma);
  CHECK(sample_random_mask(196, 0.75, 43).gamma != m.gamma);
  CHECK(masked_count_for(100, 0.29) == 29);
  CHECK(masked_count_for(64, 0.75) == 48);
  CHECK_THROWS_AS(sample_random_mask(16, 1.5, 0), ValidationError);
}

TEST_CASE("visible indices list the unmasked patches in ascending order") {
  const MaskSpec m = sample_random_mask(64, 0.75, 9);
  std::vector<int> expected;
  for (int i = 0; i < 64; ++i)
    if (!m.gamma[i]) expected.push_back(i);
  CHECK(m.visible_indices == expected);
  const auto masked = m.masked_indices();
  CHECK(static_cast<int>(masked.size()) == m.masked_count());
}

TEST_CASE("masked frequency per patch is close to the ratio") {
  std::vector<int> hits(16, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const MaskSpec m = sample_random_mask(16, 0.75, seed);
    REQUIRE(m.masked_count() == 12);
    for (int i = 0; i < 16; ++i) hits[i] += m.gamma[i];
  }
  for (int h : hits) {
    CHECK(h / 10000.0 >= 0.70);
    CHECK(h / 10000.0 <= 0.80);
  }
}

TEST_CASE("attention-descending mask takes the top values with low-index ties") {
  AttentionMap m = AttentionMap::raw(2, 2, {0.1, 0.9, 0.5, 0.3}, MapSource::oracle);
  m.state = MapState::normalized;
  const MaskSpec top = attention_descending_mask(m, 0.5);
  CHECK(top.masked_indices() == std::vector<int>{1, 2});

  AttentionMap uniform = AttentionMap::raw(2, 2, {0.5, 0.5, 0.5, 0.5}, MapSource::oracle);
  uniform.state = MapState::normalized;
  CHECK(attention_descending_mask(uniform, 0.75).masked_indices() == std::vector<int>{0, 1, 2});

  CHECK_THROWS_AS(attention_descending_mask(AttentionMap::raw(2, 2, {0, 1, 0, 1}, MapSource::oracle), 0.5), StateError);
}

TEST_CASE("attention-descending mask matches a brute-force top-k") {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> level(0, 4);  // coarse levels force ties
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(16);
    for (auto& x : v) x = level(gen) / 4.0;
    AttentionMap m = AttentionMap::raw(4, 4, v, MapSource::oracle);
    m.state = MapState::normalized;
    const double ratio = 0.25 * (1 + trial % 3);
    const int k = masked_count_for(16, ratio);

    std::vector<int> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    // Oracle: repeatedly pick the largest remaining value, lowest index first.
    std::set<int> expected;
    for (int r = 0; r < k; ++r) {
      int best = -1;
      for (int i : idx)
        if (!expected.count(i) && (best < 0 || v[i] > v[best])) best = i;
      expected.insert(best);
    }
    const auto got = attention_descending_mask(m, ratio).masked_indices();
    CHECK(std::set<int>(got.begin(), got.end()) == expected);
  }
}
