#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "attg/attention.hpp"
#include "attg/error.hpp"
#include "attg/jacobi.hpp"
#include "attg/log.hpp"

using namespace attg;

namespace {

AttentionMap normalized(std::vector<double> v, int gh = 1) {
  const int gw = static_cast<int>(v.size()) / gh;
  AttentionMap m = AttentionMap::raw(gh, gw, std::move(v), MapSource::oracle);
  m.state = MapState::normalized;
  return m;
}

struct WarningCounter {
  int count = 0;
  ScopedWarningSink sink{[this](const std::string&) { ++count; }};
};

Eigen::MatrixXd random_symmetric_weights(std::mt19937_64& gen, int n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::MatrixXd w(n, n);
  for (int i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) w(i, j) = w(j, i) = u(gen);
  }
  return w;
}

// Generalized Fiedler vector from Eigen's solver for (D − W) y = λ D y.
struct Spectrum {
  Eigen::VectorXd fiedler;
  double gap = 0.0;  // distance from λ2 to its nearest neighbour
};

Spectrum reference_spectrum(const Eigen::MatrixXd& w) {
  const Eigen::VectorXd d = w.rowwise().sum();
  const Eigen::MatrixXd lap = Eigen::MatrixXd(d.asDiagonal()) - w;
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(lap, Eigen::MatrixXd(d.asDiagonal()));
  Spectrum s;
  s.fiedler = solver.eigenvectors().col(1);
  const auto& ev = solver.eigenvalues();
  s.gap = std::abs(ev(2) - ev(1));
  if (ev.size() > 2) s.gap = std::min(s.gap, std::abs(ev(1) - ev(0)));
  return s;
}

double brute_ncut(const Eigen::MatrixXd& w, const std::vector<std::uint8_t>& side) {
  const int n = static_cast<int>(w.rows());
  double cut = 0.0, va = 0.0, vb = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      (side[i] ? va : vb) += w(i, j);
      if (side[i] && !side[j]) cut += w(i, j);
    }
  return cut / va + cut / vb;
}

}  // namespace

TEST_CASE("normalize_map min-max scales") {
  const AttentionMap m = normalize_map(AttentionMap::raw(1, 3, {2, 5, 8}, MapSource::oracle));
  CHECK(m.state == MapState::normalized);
  CHECK(m.values == std::vector<double>{0.0, 0.5, 1.0});

  const AttentionMap again = normalize_map(AttentionMap::raw(1, 4, {0.0, 0.25, 1.0, 0.5}, MapSource::oracle));
  CHECK(again.values == std::vector<double>{0.0, 0.25, 1.0, 0.5});
}

TEST_CASE("constant maps normalize to zero with a warning") {
  WarningCounter warnings;
  const AttentionMap m = normalize_map(AttentionMap::raw(1, 3, {3, 3, 3}, MapSource::oracle));
  CHECK(m.values == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(warnings.count == 1);
}

TEST_CASE("normalize_map enforces state") {
  CHECK_THROWS_AS(normalize_map(normalized({0, 1})), StateError);
  CHECK_THROWS_AS(scale_map(AttentionMap::raw(1, 2, {0, 1}, MapSource::oracle), 1.0), StateError);
  CHECK_THROWS_AS(normalize_map(AttentionMap::raw(1, 2, {0, std::nan("")}, MapSource::oracle)), NumericalError);
}

TEST_CASE("scale_map evaluates exp(v / tau)") {
  const AttentionMap s = scale_map(normalized({0.0, 1.0}), 1.0);
  CHECK(s.values[0] == 1.0);
  CHECK(s.values[1] == doctest::Approx(2.718281828).epsilon(1e-9));
  CHECK(s.tau.value() == 1.0);
  CHECK(scale_map(normalized({1.0}), 0.75).values[0] == doctest::Approx(3.793668).epsilon(1e-6));
  for (double tau : {0.1, 0.75, 1.0, 10.0}) CHECK(scale_map(normalized({0.0}), tau).values[0] == 1.0);
  CHECK_THROWS_AS(scale_map(normalized({0.5}), 0.0), ValidationError);
}

TEST_CASE("half-cosine temperature schedule") {
  TemperatureSchedule s;
  s.total_epochs = 100;
  CHECK(temperature_at(s, 0) == 0.75);
  CHECK(temperature_at(s, 100) == 1.0);
  CHECK(temperature_at(s, 50) == doctest::Approx(0.875).epsilon(1e-12));
  double prev = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double tau = temperature_at(s, t);
    CHECK(tau >= prev);
    prev = tau;
  }
  s.kind = ScheduleKind::fixed;
  CHECK(temperature_at(s, 73) == 0.75);
  CHECK_THROWS_AS(temperature_at(s, 101), ValidationError);
  CHECK(parse_schedule_kind("cosine") == ScheduleKind::half_cosine);
  CHECK(parse_schedule_kind("fixed") == ScheduleKind::fixed);
  CHECK_THROWS_AS(parse_schedule_kind("linear"), ValidationError);
}

TEST_CASE("affinity graph from cosine similarity") {
  PatchFeatures f;
  f.grid_h = 1;
  f.grid_w = 3;
  f.features.resize(3, 2);
  f.features << 1, 0, 1, 0, 0, 1;
  const AffinityGraph g = build_affinity(f);
  CHECK(g.weights(0, 1) == 1.0);
  CHECK(g.weights(0, 2) == kTokenCutFloorWeight);
  CHECK(g.weights == g.weights.transpose());

  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  PatchFeatures r;
  r.grid_h = r.grid_w = 5;
  r.features.resize(25, 6);
  for (Eigen::Index i = 0; i < r.features.size(); ++i) r.features.data()[i] = n(gen);
  const AffinityGraph rg = build_affinity(r);
  CHECK(rg.weights == rg.weights.transpose());
  CHECK(((rg.weights.array() == 1.0) || (rg.weights.array() == kTokenCutFloorWeight)).all());
}

TEST_CASE("jacobi eigensolver agrees with Eigen on random symmetric matrices") {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 30; ++trial) {
    const int size = 2 + trial % 12;
    Eigen::MatrixXd a(size, size);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(gen);
    a = (0.5 * (a + a.transpose())).eval();
    const SymmetricEigen mine = jacobi_eigen(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(a);
    CHECK((mine.values - ref.eigenvalues()).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::MatrixXd recon = mine.vectors * mine.values.asDiagonal() * mine.vectors.transpose();
    CHECK((recon - a).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::MatrixXd gram = mine.vectors.transpose() * mine.vectors;
    CHECK((gram - Eigen::MatrixXd::Identity(size, size)).cwiseAbs().maxCoeff() < 1e-9);
    for (int c = 0; c < size; ++c) {
      Eigen::Index peak;
      mine.vectors.col(c).cwiseAbs().maxCoeff(&peak);
      CHECK(mine.vectors(peak, c) > 0.0);
    }
  }
}

TEST_CASE("jacobi rejects non-symmetric input") {
  Eigen::MatrixXd a(2, 2);
  a << 1, 2, 3, 4;
  CHECK_THROWS_AS(jacobi_eigen(a), ValidationError);
}

TEST_CASE("ncut separates two weakly linked pairs") {
  Eigen::MatrixXd w(4, 4);
  w << 1, 1, 1e-5, 1e-5, 1, 1, 1e-5, 1e-5, 1e-5, 1e-5, 1, 1, 1e-5, 1e-5, 1, 1;
  const AffinityGraph g = AffinityGraph::from_weights(w);
  const NcutResult r = ncut_bipartition(g);
  CHECK(r.partition[0] == r.partition[1]);
  CHECK(r.partition[2] == r.partition[3]);
  CHECK(r.partition[0] != r.partition[2]);

  // All 7 bipartitions: the returned one is the global minimum here.
  double best = std::numeric_limits<double>::infinity();
  for (int mask = 1; mask < 8; ++mask) {
    std::vector<std::uint8_t> side(4, 0);
    for (int i = 0; i < 3; ++i) side[i] = (mask >> i) & 1;
    best = std::min(best, brute_ncut(w, side));
  }
  CHECK(r.ncut_value == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("ncut on a complete uniform graph is deterministic") {
  const AffinityGraph g = AffinityGraph::from_weights(Eigen::MatrixXd::Ones(6, 6));
  const NcutResult a = ncut_bipartition(g);
  const NcutResult b = ncut_bipartition(g);
  CHECK(a.partition == b.partition);
}

TEST_CASE("ncut matches exhaustive search over mean-threshold-consistent splits") {
  std::mt19937_64 gen(2024);
  int checked = 0;
  while (checked < 100) {
    const int n = 3 + static_cast<int>(gen() % 8);
    const Eigen::MatrixXd w = random_symmetric_weights(gen, n);
    const Spectrum ref = reference_spectrum(w);
    if (ref.gap < 1e-6) continue;  // the Fiedler direction is not unique
    const double mean = ref.fiedler.mean();
    const double tol = 1e-9 * ref.fiedler.cwiseAbs().maxCoeff();

    double best = std::numeric_limits<double>::infinity();
    for (int mask = 1; mask < (1 << (n - 1)); ++mask) {
      std::vector<std::uint8_t> side(n, 0);
      for (int i = 0; i < n - 1; ++i) side[i] = (mask >> i) & 1;
      // Consistent when one side is exactly the set above the mean (ties may go either way).
      bool forward = true, reverse = true;
      for (int i = 0; i < n; ++i) {
        const double dv = ref.fiedler(i) - mean;
        if (dv > tol) forward &= side[i] == 1, reverse &= side[i] == 0;
        if (dv < -tol) forward &= side[i] == 0, reverse &= side[i] == 1;
      }
      if (forward || reverse) best = std::min(best, brute_ncut(w, side));
    }
    REQUIRE(std::isfinite(best));
    const NcutResult got = ncut_bipartition(AffinityGraph::from_weights(w));
    CHECK(std::abs(got.ncut_value - best) <= 1e-9);
    ++checked;
  }
}

TEST_CASE("tokencut marks the smaller, stronger-Fiedler cluster as foreground") {
  PatchFeatures f;
  f.grid_h = 2;
  f.grid_w = 4;
  f.features.resize(8, 3);
  // Three foreground patches near +x, five background patches near +y.
  f.features << 1, 0.1, 0, 0, 1, 0.05, 1, 0.05, 0, 0.1, 1, 0, 0.95, 0, 0.1, 0.05, 1, 0, 0, 0.9, 0.1, 0.02, 1, 0.05;
  const AttentionMap m = tokencut_map(f);
  CHECK(m.grid_h == 2);
  CHECK(m.grid_w == 4);
  CHECK(m.state == MapState::raw);
  CHECK(m.values == std::vector<double>{1, 0, 1, 0, 1, 0, 0, 0});

  const AffinityGraph g = build_affinity(f);
  const NcutResult cut = ncut_bipartition(g);
  Eigen::Index peak;
  cut.fiedler.cwiseAbs().maxCoeff(&peak);
  CHECK(m.values[peak] == 1.0);
}

TEST_CASE("tokencut on identical features warns and returns an empty map") {
  WarningCounter warnings;
  PatchFeatures f;
  f.grid_h = f.grid_w = 2;
  f.features = Eigen::MatrixXd::Ones(4, 5);
  const AttentionMap m = tokencut_map(f);
  CHECK(m.values == std::vector<double>(4, 0.0));
  CHECK(warnings.count == 1);
}

TEST_CASE("pool_heatmap averages each cell") {
  const AttentionMap c = pool_heatmap(Eigen::MatrixXd::Constant(8, 8, 0.7), 4);
  CHECK(c.size() == 4);
  for (double v : c.values) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

  Eigen::MatrixXd h(2, 2);
  h << 0, 1, 1, 0;
  CHECK(pool_heatmap(h, 2).values == std::vector<double>{0.5});

  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u;
  Eigen::MatrixXd r(12, 9);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(gen);
  const AttentionMap p = pool_heatmap(r, 3);
  CHECK(p.grid_h == 4);
  CHECK(p.grid_w == 3);
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 3; ++gx) {
      double sum = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) sum += r(gy * 3 + a, gx * 3 + b);
      CHECK(std::abs(p.values[gy * 3 + gx] - sum / 9.0) <= 1e-12);
    }
  CHECK_THROWS_AS(pool_heatmap(Eigen::MatrixXd::Zero(5, 4), 2), ShapeError);
}

TEST_CASE("invert_map flips normalized values") {
  const AttentionMap m = normalized({0.0, 0.5, 1.0});
  const AttentionMap inv = invert_map(m);
  CHECK(inv.values == std::vector<double>{1.0, 0.5, 0.0});
  CHECK(invert_map(inv).values == m.values);
}

TEST_CASE("quantile_zero drops values below the 10% quantile") {
  std::vector<double> v;
  for (int i = 0; i <= 10; ++i) v.push_back(i * 0.1);
  const AttentionMap q = quantile_zero(normalized(v), kQuantileFraction);
  CHECK(q.values == v);

  const AttentionMap flat = quantile_zero(normalized({0.4, 0.4, 0.4, 0.4}), 0.1);
  CHECK(flat.values == std::vector<double>(4, 0.4));

  CHECK(empirical_quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(empirical_quantile({0, 10}, 0.1) == doctest::Approx(1.0));

  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(5 + trial % 60);
    for (auto& x : r) x = u(gen);
    const AttentionMap z = quantile_zero(normalized(r), 0.1);
    int zeroed = 0;
    for (std::size_t i = 0; i < r.size(); ++i) zeroed += z.values[i] != r[i];
    CHECK(zeroed <= static_cast<int>(std::ceil(0.1 * r.size())));
  }
}

TEST_CASE("extract_attention rows are softmax distributions") {
  std::mt19937_64 gen(6);
  std::normal_distribution<double> n;
  const int d = 8;
  AttentionProjection p;
  p.heads = 2;
  p.query_weight.resize(d, d);
  p.key_weight.resize(d, d);
  for (Eigen::Index i = 0; i < d * d; ++i) {
    p.query_weight.data()[i] = n(gen);
    p.key_weight.data()[i] = n(gen);
  }
  p.query_bias = Eigen::VectorXd::Zero(d);
  p.key_bias = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd tokens(5, d);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = n(gen);
  const ExtractedAttention a = extract_attention(tokens, p, 2, 2);
  REQUIRE(a.per_head.size() == 2);
  for (const auto& head : a.per_head)
    for (Eigen::Index r = 0; r < head.rows(); ++r) CHECK(std::abs(head.row(r).sum() - 1.0) <= 1e-6);
  CHECK(a.map.size() == 4);

  // Identical query and key rows give equal logits and a uniform row.
  AttentionProjection zero = p;
  zero.query_weight.setZero();
  zero.key_weight.setZero();
  const ExtractedAttention u = extract_attention(tokens, zero, 2, 2);
  for (Eigen::Index c = 0; c < 5; ++c) CHECK(u.per_head[0](0, c) == doctest::Approx(0.2));
}

TEST_CASE("single-head attention matches direct softmax recomputation") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> n;
  const int d = 6;
  AttentionProjection p;
  p.heads = 1;
  p.query_weight.resize(d, d);
  p.key_weight.resize(d, d);
  p.query_bias.resize(d);
  p.key_bias.resize(d);
  for (Eigen::Index i = 0; i < d * d; ++i) {
    p.query_weight.data()[i] = n(gen);
    p.key_weight.data()[i] = n(gen);
  }
  for (int i = 0; i < d; ++i) {
    p.query_bias(i) = n(gen);
    p.key_bias(i) = n(gen);
  }
  Eigen::MatrixXd tokens(10, d);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = n(gen);
  const ExtractedAttention a = extract_attention(tokens, p, 3, 3);

  const Eigen::MatrixXd q = (tokens * p.query_weight).rowwise() + p.query_bias.transpose();
  const Eigen::MatrixXd k = (tokens * p.key_weight).rowwise() + p.key_bias.transpose();
  const Eigen::MatrixXd logits = q * k.transpose() / std::sqrt(static_cast<double>(d));
  for (Eigen::Index r = 0; r < 10; ++r) {
    double z = 0.0;
    for (Eigen::Index c = 0; c < 10; ++c) z += std::exp(logits(r, c));
    for (Eigen::Index c = 0; c < 10; ++c) CHECK(std::abs(a.per_head[0](r, c) - std::exp(logits(r, c)) / z) <= 1e-10);
  }
  for (int c = 1; c < 10; ++c) CHECK(a.map.values[c - 1] == a.per_head[0](0, c));
}
