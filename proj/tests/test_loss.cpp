#include <doctest.h>

#include <cmath>
#include <random>

#include "attg/error.hpp"
#include "attg/loss.hpp"
#include "test_util.hpp"

using namespace attg;

namespace {

AttentionMap scaled(std::vector<double> w) {
  const int n = static_cast<int>(w.size());
  AttentionMap m = AttentionMap::raw(1, n, std::move(w), MapSource::oracle);
  m.state = MapState::scaled;
  m.tau = 1.0;
  return m;
}

AttentionMap normalized(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  AttentionMap m = AttentionMap::raw(1, n, std::move(v), MapSource::oracle);
  m.state = MapState::normalized;
  return m;
}

PerPatchLoss losses(std::vector<double> v) {
  PerPatchLoss l;
  l.values = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return l;
}

NormalizedTarget target_of(const Eigen::MatrixXd& m) {
  NormalizedTarget t;
  t.patches = m;
  return t;
}

}  // namespace

TEST_CASE("per-patch MSE") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Ones(2, 4);
  CHECK((per_patch_mse(a, target_of(a)).values.array() == 0.0).all());
  CHECK(per_patch_mse(a, target_of(Eigen::MatrixXd::Zero(2, 4))).values(0) == 1.0);

  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  Eigen::MatrixXd p(5, 7), t(5, 7);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p.data()[i] = n(gen);
    t.data()[i] = n(gen);
  }
  const PerPatchLoss l = per_patch_mse(p, target_of(t));
  for (int r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 7; ++c) sum += (p(r, c) - t(r, c)) * (p(r, c) - t(r, c));
    CHECK(std::abs(l.values(r) - sum / 7.0) <= 1e-12);
  }
}

TEST_CASE("guided loss arithmetic") {
  const MaskSpec mask = MaskSpec::from_gamma({0, 1, 1});
  CHECK(guided_loss(losses({1, 2, 3}), mask, scaled({2, 1, 3})) == 5.5);
  CHECK(vanilla_loss(losses({1, 2, 3}), mask) == 2.5);
  CHECK(vanilla_loss(losses({1, 2, 3}), MaskSpec::from_gamma({1, 1, 1})) == 2.0);
  CHECK(guided_loss(losses({1, 2, 3}), mask, AttentionMap::unit_weights(1, 3)) == 2.5);
}

TEST_CASE("guided loss needs masked patches and scaled weights") {
  CHECK_THROWS_AS(vanilla_loss(losses({1, 2}), MaskSpec::from_gamma({0, 0})), ValidationError);
  CHECK_THROWS_AS(guided_loss(losses({1, 2}), MaskSpec::from_gamma({1, 1}), normalized({0, 1})), StateError);
  CHECK_THROWS_AS(guided_loss(losses({1, 2}), MaskSpec::from_gamma({1, 1, 0}), scaled({1, 1})), ShapeError);
}

TEST_CASE("guided loss is at least the vanilla loss when weights are at least one") {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> l(16), m(16);
    for (auto& x : l) x = 3 * u(gen);
    for (auto& x : m) x = u(gen);
    const MaskSpec mask = sample_random_mask(16, 0.75, trial);
    const double tau = 0.2 + u(gen);
    const double g = guided_loss(losses(l), mask, scale_map(normalized(m), tau));
    const double v = vanilla_loss(losses(l), mask);
    CHECK(g >= v);
    CHECK(g <= std::exp(1.0 / tau) * v * (1 + 1e-12));
  }
}

TEST_CASE("guidance modes") {
  const AttentionMap map = normalized({0.0, 1.0});
  const Guidance vanilla = apply_guidance_mode(GuidanceMode::vanilla, map, 0.75);
  CHECK(vanilla.weights.values == std::vector<double>{1.0, 1.0});

  const Guidance attg = apply_guidance_mode(GuidanceMode::attg, map, 0.75);
  CHECK(attg.weights.values == scale_map(map, 0.75).values);

  const Guidance inv = apply_guidance_mode(GuidanceMode::inverted, map, 0.5);
  CHECK(inv.weights.values[0] == std::exp(2.0));
  CHECK(inv.weights.values[1] == 1.0);

  const Guidance masked = apply_guidance_mode(GuidanceMode::input_masking, normalized({0.1, 0.9, 0.5, 0.3}), 1.0, 0.5);
  REQUIRE(masked.masking_override.has_value());
  CHECK(masked.masking_override->masked_indices() == std::vector<int>{1, 2});
  CHECK(masked.weights.values == std::vector<double>(4, 1.0));
}

TEST_CASE("foreground-only and background-only drop the lowest decile") {
  std::vector<double> v;
  for (int i = 0; i < 20; ++i) v.push_back(i / 19.0);
  const AttentionMap map = normalized(v);
  const Guidance fg = apply_guidance_mode(GuidanceMode::foreground_only, map, 1.0);
  // Quantile at 0.1 of 20 evenly spaced values sits between the 2nd and 3rd entries.
  CHECK(fg.keep[0] == 0);
  CHECK(fg.keep[1] == 0);
  CHECK(fg.keep[2] == 1);
  CHECK(fg.weights.values[0] == 1.0);
  CHECK(fg.weights.values[19] == std::exp(1.0));

  const Guidance bg = apply_guidance_mode(GuidanceMode::background_only, map, 1.0);
  CHECK(bg.keep[19] == 0);
  CHECK(bg.keep[18] == 0);
  CHECK(bg.keep[17] == 1);
  CHECK(bg.weights.values[0] == std::exp(1.0));

  // Dropped patches leave numerator and denominator alike.
  std::vector<double> l(20, 1.0);
  l[0] = 100.0;
  const MaskSpec all = MaskSpec::from_gamma(std::vector<std::uint8_t>(20, 1));
  double expected = 0.0;
  for (int i = 2; i < 20; ++i) expected += fg.weights.values[i];
  CHECK(guided_loss(losses(l), all, fg) == doctest::Approx(expected / 18.0).epsilon(1e-14));
}

TEST_CASE("loss gradient") {
  Eigen::MatrixXd p = Eigen::MatrixXd::Random(4, 6);
  const MaskSpec mask = MaskSpec::from_gamma({1, 0, 1, 1});
  const AttentionMap w = scale_map(normalized({0.2, 0.4, 1.0, 0.0}), 0.75);
  CHECK(guided_loss_gradient(p, target_of(p), mask, w).isZero(0.0));
  const Eigen::MatrixXd g = guided_loss_gradient(p, target_of(Eigen::MatrixXd::Zero(4, 6)), mask, w);
  CHECK((g.row(1).array() == 0.0).all());
  CHECK(!g.row(0).isZero(0.0));
}

TEST_CASE("loss gradient matches central finite differences") {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd p(8, 5), t(8, 5);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p.data()[i] = n(gen);
      t.data()[i] = n(gen);
    }
    std::vector<double> m(8);
    for (auto& x : m) x = u(gen);
    const MaskSpec mask = sample_random_mask(8, 0.5, trial);
    const Guidance g = apply_guidance_mode(trial % 2 ? GuidanceMode::attg : GuidanceMode::foreground_only, normalized(m), 0.75);
    const NormalizedTarget target = target_of(t);
    const Eigen::MatrixXd analytic = guided_loss_gradient(p, target, mask, g);
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Eigen::MatrixXd plus = p, minus = p;
      plus.data()[i] += h;
      minus.data()[i] -= h;
      const double fd = (guided_loss(per_patch_mse(plus, target), mask, g) - guided_loss(per_patch_mse(minus, target), mask, g)) / (2 * h);
      if (analytic.data()[i] == 0.0 && fd == 0.0) continue;
      worst = std::max(worst, testutil::relative_error(analytic.data()[i], fd));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("guidance mode names") {
  for (auto m : {GuidanceMode::vanilla, GuidanceMode::attg, GuidanceMode::foreground_only, GuidanceMode::background_only,
                 GuidanceMode::inverted, GuidanceMode::input_masking})
    CHECK(parse_guidance_mode(to_string(m)) == m);
  CHECK(parse_guidance_mode("foreground_only") == GuidanceMode::foreground_only);
  CHECK_THROWS_AS(parse_guidance_mode("fg"), ValidationError);
}
