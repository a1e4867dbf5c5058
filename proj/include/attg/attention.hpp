#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace attg {

enum class MapState : std::uint8_t { raw, normalized, scaled };
enum class MapSource : std::uint8_t { tokencut, pooled, ingested, oracle, inverted };

std::string to_string(MapState s);
std::string to_string(MapSource s);

// Per-patch scalar field aligned with the patch grid (row-major, top-left first).
struct AttentionMap {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<double> values;
  MapState state = MapState::raw;
  std::optional<double> tau;  // set only in the scaled state
  MapSource source = MapSource::ingested;

  int size() const { return static_cast<int>(values.size()); }

  static AttentionMap raw(int grid_h, int grid_w, std::vector<double> values, MapSource source);
  // Scaled map of unit weights (infinite temperature).
  static AttentionMap unit_weights(int grid_h, int grid_w);
};

struct PatchFeatures {
  Eigen::MatrixXd features;  // N × d
  int grid_h = 0;
  int grid_w = 0;
};

struct AffinityGraph {
  Eigen::MatrixXd weights;
  Eigen::VectorXd degree;
  double threshold = 0.0;
  double floor_weight = 0.0;

  int size() const { return static_cast<int>(weights.rows()); }
  // Wraps an explicit symmetric weight matrix, computing degrees.
  static AffinityGraph from_weights(Eigen::MatrixXd weights);
};

enum class ScheduleKind : std::uint8_t { fixed, half_cosine };

struct TemperatureSchedule {
  ScheduleKind kind = ScheduleKind::half_cosine;
  double tau_start = 0.75;
  double tau_end = 1.0;
  int total_epochs = 0;
};

struct NcutResult {
  std::vector<std::uint8_t> partition;  // 1 = foreground side
  Eigen::VectorXd fiedler;              // generalized eigenvector, (D − W)x = λDx
  double eigenvalue = 0.0;
  double ncut_value = 0.0;
};

inline constexpr double kTokenCutThreshold = 0.2;
inline constexpr double kTokenCutFloorWeight = 1e-5;
inline constexpr double kQuantileFraction = 0.10;

// Min-max normalization. Constant maps warn and come back all zero.
AttentionMap normalize_map(const AttentionMap& raw);

// exp(value / tau); zeros map to exactly 1.
AttentionMap scale_map(const AttentionMap& map, double tau);

double temperature_at(const TemperatureSchedule& schedule, int epoch);
ScheduleKind parse_schedule_kind(const std::string& kind);
std::string to_string(ScheduleKind k);

AffinityGraph build_affinity(const PatchFeatures& features, double threshold = kTokenCutThreshold,
                             double floor_weight = kTokenCutFloorWeight);

// Ncut(A, B) = cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V) for a 0/1 side assignment.
double ncut_value(const AffinityGraph& graph, const std::vector<std::uint8_t>& side);

NcutResult ncut_bipartition(const AffinityGraph& graph);

AttentionMap tokencut_map(const PatchFeatures& features, double threshold = kTokenCutThreshold,
                          double floor_weight = kTokenCutFloorWeight);

// Average-pools an H×W heatmap into patch cells.
AttentionMap pool_heatmap(const Eigen::MatrixXd& heatmap, int patch_size);

AttentionMap invert_map(const AttentionMap& map);

// Linear-interpolation empirical quantile of the values (numpy's default rule).
double empirical_quantile(std::vector<double> values, double q);

// Indices whose value lies strictly below the q-quantile.
std::vector<int> below_quantile(const AttentionMap& map, double q);

AttentionMap quantile_zero(const AttentionMap& map, double q);

// Query/key projections of the last self-attention block, d×d each, split across heads.
struct AttentionProjection {
  Eigen::MatrixXd query_weight;
  Eigen::VectorXd query_bias;
  Eigen::MatrixXd key_weight;
  Eigen::VectorXd key_bias;
  int heads = 1;
};

struct ExtractedAttention {
  std::vector<Eigen::MatrixXd> per_head;  // (n+1)×(n+1), row-stochastic
  AttentionMap map;                       // class-token row over patches, mean over heads
};

// softmax(Q_j K_jᵀ / sqrt(d/H)) for every head j. Row 0 of tokens is the class token.
ExtractedAttention extract_attention(const Eigen::MatrixXd& tokens, const AttentionProjection& projection, int grid_h,
                                     int grid_w);

}  // namespace attg
