#include "attg/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "attg/error.hpp"
#include "attg/jacobi.hpp"
#include "attg/log.hpp"

namespace attg {

std::string to_string(MapState s) {
  switch (s) {
    case MapState::raw: return "raw";
    case MapState::normalized: return "normalized";
    case MapState::scaled: return "scaled";
  }
  return "?";
}

std::string to_string(MapSource s) {
  switch (s) {
    case MapSource::tokencut: return "tokencut";
    case MapSource::pooled: return "pooled";
    case MapSource::ingested: return "ingested";
    case MapSource::oracle: return "oracle";
    case MapSource::inverted: return "inverted";
  }
  return "?";
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::fixed ? "fixed" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& kind) {
  if (kind == "fixed") return ScheduleKind::fixed;
  if (kind == "cosine" || kind == "half_cosine") return ScheduleKind::half_cosine;
  throw ValidationError("unknown schedule '" + kind + "' (expected fixed or cosine)");
}

AttentionMap AttentionMap::raw(int grid_h, int grid_w, std::vector<double> values, MapSource source) {
  if (grid_h <= 0 || grid_w <= 0 || values.size() != static_cast<std::size_t>(grid_h) * grid_w)
    throw ShapeError("attention map values do not match grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  AttentionMap m;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.values = std::move(values);
  m.state = MapState::raw;
  m.source = source;
  return m;
}

AttentionMap AttentionMap::unit_weights(int grid_h, int grid_w) {
  AttentionMap m = raw(grid_h, grid_w, std::vector<double>(static_cast<std::size_t>(grid_h) * grid_w, 1.0),
                       MapSource::ingested);
  m.state = MapState::scaled;
  m.tau = std::numeric_limits<double>::infinity();
  return m;
}

AttentionMap normalize_map(const AttentionMap& raw) {
  if (raw.state != MapState::raw) throw StateError("normalize_map expects a raw map, got " + to_string(raw.state));
  if (raw.values.empty()) throw ShapeError("empty attention map");
  AttentionMap out = raw;
  out.state = MapState::normalized;
  out.tau.reset();
  const auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
  const double min = *lo;
  const double max = *hi;
  if (!std::isfinite(min) || !std::isfinite(max)) throw NumericalError("attention map contains non-finite values");
  if (max == min) {
    warn("degenerate attention map (constant value " + std::to_string(min) + "); treating as no foreground");
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  const double range = max - min;
  for (auto& v : out.values) v = (v - min) / range;
  return out;
}

AttentionMap scale_map(const AttentionMap& map, double tau) {
  if (map.state != MapState::normalized) throw StateError("scale_map expects a normalized map, got " + to_string(map.state));
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  AttentionMap out = map;
  out.state = MapState::scaled;
  out.tau = tau;
  for (auto& v : out.values) v = std::exp(v / tau);
  return out;
}

double temperature_at(const TemperatureSchedule& schedule, int epoch) {
  if (!(schedule.tau_start > 0.0) || !(schedule.tau_end > 0.0)) throw ValidationError("temperatures must be positive");
  if (schedule.total_epochs < 0 || epoch < 0 || epoch > schedule.total_epochs)
    throw ValidationError("epoch " + std::to_string(epoch) + " outside schedule range [0, " +
                          std::to_string(schedule.total_epochs) + "]");
  if (schedule.kind == ScheduleKind::fixed || epoch == 0) return schedule.tau_start;
  if (epoch == schedule.total_epochs) return schedule.tau_end;
  const double progress = static_cast<double>(epoch) / schedule.total_epochs;
  const double w = 0.5 * (1.0 - std::cos(std::numbers::pi * progress));
  const double tau = schedule.tau_start + (schedule.tau_end - schedule.tau_start) * w;
  // Keep interior values inside the endpoint interval so the exact endpoints stay extremal.
  return std::clamp(tau, std::min(schedule.tau_start, schedule.tau_end), std::max(schedule.tau_start, schedule.tau_end));
}

AffinityGraph AffinityGraph::from_weights(Eigen::MatrixXd weights) {
  if (weights.rows() != weights.cols()) throw ShapeError("affinity matrix must be square");
  AffinityGraph g;
  g.degree = weights.rowwise().sum();
  g.weights = std::move(weights);
  return g;
}

AffinityGraph build_affinity(const PatchFeatures& features, double threshold, double floor_weight) {
  if (!(threshold > -1.0 && threshold < 1.0)) throw ValidationError("affinity threshold must lie in (-1, 1)");
  if (!(floor_weight > 0.0 && floor_weight < 1.0)) throw ValidationError("floor weight must lie in (0, 1)");
  const auto& f = features.features;
  const Eigen::Index n = f.rows();
  if (n == 0) throw ShapeError("no patch features");
  Eigen::VectorXd norms = f.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i)
    if (norms(i) == 0.0) throw ValidationError("patch feature " + std::to_string(i) + " is the zero vector");

  Eigen::MatrixXd w(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double cosine = f.row(i).dot(f.row(j)) / (norms(i) * norms(j));
      const double value = cosine >= threshold ? 1.0 : floor_weight;
      w(i, j) = value;
      w(j, i) = value;
    }
  }
  AffinityGraph g = AffinityGraph::from_weights(std::move(w));
  g.threshold = threshold;
  g.floor_weight = floor_weight;
  return g;
}

double ncut_value(const AffinityGraph& graph, const std::vector<std::uint8_t>& side) {
  const int n = graph.size();
  if (static_cast<int>(side.size()) != n) throw ShapeError("partition length does not match graph");
  double cut = 0.0, assoc_a = 0.0, assoc_b = 0.0;
  for (int i = 0; i < n; ++i) {
    (side[i] ? assoc_a : assoc_b) += graph.degree(i);
    for (int j = 0; j < n; ++j)
      if (side[i] && !side[j]) cut += graph.weights(i, j);
  }
  if (assoc_a == 0.0 || assoc_b == 0.0) return std::numeric_limits<double>::infinity();
  return cut / assoc_a + cut / assoc_b;
}

NcutResult ncut_bipartition(const AffinityGraph& graph) {
  const int n = graph.size();
  if (n < 2) throw ShapeError("normalized cut needs at least two nodes");
  for (int i = 0; i < n; ++i)
    if (!(graph.degree(i) > 0.0)) throw ValidationError("disconnected graph: node " + std::to_string(i) + " has degree <= 0");

  // D^{-1/2} (D − W) D^{-1/2} = I − D^{-1/2} W D^{-1/2}
  const Eigen::VectorXd inv_sqrt = graph.degree.array().rsqrt();
  Eigen::MatrixXd laplacian = -(inv_sqrt.asDiagonal() * graph.weights * inv_sqrt.asDiagonal());
  laplacian.diagonal().array() += 1.0;
  laplacian = 0.5 * (laplacian + laplacian.transpose()).eval();

  const SymmetricEigen eig = jacobi_eigen(laplacian);

  NcutResult out;
  out.eigenvalue = eig.values(1);
  out.fiedler = inv_sqrt.asDiagonal() * eig.vectors.col(1);
  const double mean = out.fiedler.mean();

  Eigen::Index peak = 0;
  for (Eigen::Index i = 1; i < n; ++i)
    if (std::abs(out.fiedler(i)) > std::abs(out.fiedler(peak))) peak = i;
  const bool peak_above = out.fiedler(peak) > mean;

  out.partition.resize(n);
  for (int i = 0; i < n; ++i) out.partition[i] = (out.fiedler(i) > mean) == peak_above ? 1 : 0;
  out.ncut_value = ncut_value(graph, out.partition);
  return out;
}

AttentionMap tokencut_map(const PatchFeatures& features, double threshold, double floor_weight) {
  if (features.features.rows() != static_cast<Eigen::Index>(features.grid_h) * features.grid_w)
    throw ShapeError("feature rows do not match the patch grid");
  const AffinityGraph graph = build_affinity(features, threshold, floor_weight);
  const int n = graph.size();
  std::vector<double> values(n, 0.0);

  // A graph whose edges all carry the same weight has no preferred cut.
  bool uniform = true;
  const double ref = n > 1 ? graph.weights(0, 1) : 1.0;
  for (int i = 0; i < n && uniform; ++i)
    for (int j = i + 1; j < n; ++j)
      if (graph.weights(i, j) != ref) {
        uniform = false;
        break;
      }
  if (uniform) {
    warn("degenerate affinity graph (all edges equal); tokencut map is empty");
    return AttentionMap::raw(features.grid_h, features.grid_w, std::move(values), MapSource::tokencut);
  }

  const NcutResult cut = ncut_bipartition(graph);
  for (int i = 0; i < n; ++i) values[i] = cut.partition[i] ? 1.0 : 0.0;
  return AttentionMap::raw(features.grid_h, features.grid_w, std::move(values), MapSource::tokencut);
}

AttentionMap pool_heatmap(const Eigen::MatrixXd& heatmap, int patch_size) {
  if (patch_size <= 0) throw ValidationError("patch size must be positive");
  if (heatmap.rows() == 0 || heatmap.cols() == 0 || heatmap.rows() % patch_size || heatmap.cols() % patch_size)
    throw ShapeError("heatmap " + std::to_string(heatmap.rows()) + "x" + std::to_string(heatmap.cols()) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  const int gh = static_cast<int>(heatmap.rows()) / patch_size;
  const int gw = static_cast<int>(heatmap.cols()) / patch_size;
  std::vector<double> values(static_cast<std::size_t>(gh) * gw);
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      values[gy * gw + gx] = heatmap.block(gy * patch_size, gx * patch_size, patch_size, patch_size).sum() / area;
  return AttentionMap::raw(gh, gw, std::move(values), MapSource::pooled);
}

AttentionMap invert_map(const AttentionMap& map) {
  if (map.state != MapState::normalized) throw StateError("invert_map expects a normalized map, got " + to_string(map.state));
  AttentionMap out = map;
  for (auto& v : out.values) v = 1.0 - v;
  out.source = MapSource::inverted;
  return out;
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ShapeError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? values[lo] : values[lo] + (values[hi] - values[lo]) * frac;
}

std::vector<int> below_quantile(const AttentionMap& map, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ValidationError("quantile must lie in (0, 1)");
  const double threshold = empirical_quantile(map.values, q);
  std::vector<int> out;
  for (int i = 0; i < map.size(); ++i)
    if (map.values[i] < threshold) out.push_back(i);
  return out;
}

AttentionMap quantile_zero(const AttentionMap& map, double q) {
  if (map.state != MapState::normalized) throw StateError("quantile_zero expects a normalized map, got " + to_string(map.state));
  AttentionMap out = map;
  for (int i : below_quantile(map, q)) out.values[i] = 0.0;
  return out;
}

ExtractedAttention extract_attention(const Eigen::MatrixXd& tokens, const AttentionProjection& p, int grid_h, int grid_w) {
  const Eigen::Index d = tokens.cols();
  const Eigen::Index len = tokens.rows();
  if (p.heads <= 0 || d % p.heads) throw ShapeError("token width must be divisible by the head count");
  if (p.query_weight.rows() != d || p.query_weight.cols() != d || p.key_weight.rows() != d || p.key_weight.cols() != d ||
      p.query_bias.size() != d || p.key_bias.size() != d)
    throw ShapeError("projection shapes do not match token width");
  if (len != static_cast<Eigen::Index>(grid_h) * grid_w + 1) throw ShapeError("token count must be grid size + 1");

  const Eigen::Index dh = d / p.heads;
  const Eigen::MatrixXd q = (tokens * p.query_weight).rowwise() + p.query_bias.transpose();
  const Eigen::MatrixXd k = (tokens * p.key_weight).rowwise() + p.key_bias.transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ExtractedAttention out;
  std::vector<double> cls_row(static_cast<std::size_t>(len - 1), 0.0);
  for (int h = 0; h < p.heads; ++h) {
    Eigen::MatrixXd logits = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index r = 0; r < len; ++r) {
      const double m = logits.row(r).maxCoeff();
      logits.row(r) = (logits.row(r).array() - m).exp();
      logits.row(r) /= logits.row(r).sum();
    }
    for (Eigen::Index c = 1; c < len; ++c) cls_row[c - 1] += logits(0, c) / p.heads;
    out.per_head.push_back(std::move(logits));
  }
  out.map = AttentionMap::raw(grid_h, grid_w, std::move(cls_row), MapSource::ingested);
  return out;
}

}  // namespace attg
