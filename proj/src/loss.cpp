#include "attg/loss.hpp"

#include "attg/error.hpp"

namespace attg {
namespace {

const std::vector<std::uint8_t>& keep_all(std::size_t n) {
  thread_local std::vector<std::uint8_t> ones;
  if (ones.size() != n) ones.assign(n, 1);
  return ones;
}

void check_lengths(const MaskSpec& mask, const AttentionMap& weights, const std::vector<std::uint8_t>& keep,
                   Eigen::Index n) {
  if (mask.size() != n || weights.size() != n || static_cast<Eigen::Index>(keep.size()) != n)
    throw ShapeError("loss inputs disagree on the patch count");
  if (weights.state != MapState::scaled) throw StateError("loss weights must be a scaled map, got " + to_string(weights.state));
}

double active_count(const MaskSpec& mask, const std::vector<std::uint8_t>& keep) {
  double count = 0.0;
  for (int i = 0; i < mask.size(); ++i)
    if (mask.gamma[i] && keep[i]) count += 1.0;
  if (count == 0.0) throw ValidationError("empty mask: no masked patches contribute to the loss");
  return count;
}

}  // namespace

std::string to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::vanilla: return "vanilla";
    case GuidanceMode::attg: return "attg";
    case GuidanceMode::foreground_only: return "fg-only";
    case GuidanceMode::background_only: return "bg-only";
    case GuidanceMode::inverted: return "inverted";
    case GuidanceMode::input_masking: return "input-mask";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "vanilla") return GuidanceMode::vanilla;
  if (s == "attg") return GuidanceMode::attg;
  if (s == "fg-only" || s == "foreground_only") return GuidanceMode::foreground_only;
  if (s == "bg-only" || s == "background_only") return GuidanceMode::background_only;
  if (s == "inverted") return GuidanceMode::inverted;
  if (s == "input-mask" || s == "input_masking") return GuidanceMode::input_masking;
  throw ValidationError("unknown guidance mode '" + s + "'");
}

PerPatchLoss per_patch_mse(const Eigen::MatrixXd& prediction, const NormalizedTarget& target) {
  if (prediction.rows() != target.patches.rows() || prediction.cols() != target.patches.cols())
    throw ShapeError("prediction and target shapes differ");
  PerPatchLoss out;
  out.values = (prediction - target.patches).array().square().rowwise().sum() / static_cast<double>(prediction.cols());
  return out;
}

double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const AttentionMap& weights,
                   const std::vector<std::uint8_t>& keep) {
  check_lengths(mask, weights, keep, per_patch.values.size());
  const double count = active_count(mask, keep);
  double total = 0.0;
  for (int i = 0; i < mask.size(); ++i)
    if (mask.gamma[i] && keep[i]) total += per_patch.values(i) * weights.values[i];
  return total / count;
}

double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const AttentionMap& weights) {
  return guided_loss(per_patch, mask, weights, keep_all(weights.values.size()));
}

double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const Guidance& guidance) {
  return guided_loss(per_patch, mask, guidance.weights, guidance.keep);
}

double vanilla_loss(const PerPatchLoss& per_patch, const MaskSpec& mask) {
  const auto n = static_cast<int>(per_patch.values.size());
  if (mask.size() != n) throw ShapeError("loss inputs disagree on the patch count");
  return guided_loss(per_patch, mask, AttentionMap::unit_weights(1, n));
}

Guidance apply_guidance_mode(GuidanceMode mode, const AttentionMap& map, double tau, double mask_ratio) {
  if (map.state != MapState::normalized) throw StateError("guidance expects a normalized map, got " + to_string(map.state));
  Guidance g;
  g.keep.assign(map.values.size(), 1);
  switch (mode) {
    case GuidanceMode::vanilla:
      g.weights = AttentionMap::unit_weights(map.grid_h, map.grid_w);
      break;
    case GuidanceMode::attg:
      g.weights = scale_map(map, tau);
      break;
    case GuidanceMode::foreground_only:
    case GuidanceMode::background_only: {
      const AttentionMap base = mode == GuidanceMode::foreground_only ? map : invert_map(map);
      for (int i : below_quantile(base, kQuantileFraction)) g.keep[i] = 0;
      g.weights = scale_map(quantile_zero(base, kQuantileFraction), tau);
      break;
    }
    case GuidanceMode::inverted:
      g.weights = scale_map(invert_map(map), tau);
      break;
    case GuidanceMode::input_masking:
      g.weights = AttentionMap::unit_weights(map.grid_h, map.grid_w);
      g.masking_override = attention_descending_mask(map, mask_ratio);
      break;
  }
  return g;
}

Eigen::MatrixXd guided_loss_gradient(const Eigen::MatrixXd& prediction, const NormalizedTarget& target,
                                     const MaskSpec& mask, const AttentionMap& weights) {
  Guidance g;
  g.weights = weights;
  g.keep = keep_all(weights.values.size());
  return guided_loss_gradient(prediction, target, mask, g);
}

Eigen::MatrixXd guided_loss_gradient(const Eigen::MatrixXd& prediction, const NormalizedTarget& target,
                                     const MaskSpec& mask, const Guidance& guidance) {
  if (prediction.rows() != target.patches.rows() || prediction.cols() != target.patches.cols())
    throw ShapeError("prediction and target shapes differ");
  check_lengths(mask, guidance.weights, guidance.keep, prediction.rows());
  const double count = active_count(mask, guidance.keep);
  const double scale = 2.0 / (static_cast<double>(prediction.cols()) * count);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(prediction.rows(), prediction.cols());
  for (int i = 0; i < mask.size(); ++i)
    if (mask.gamma[i] && guidance.keep[i])
      grad.row(i) = scale * guidance.weights.values[i] * (prediction.row(i) - target.patches.row(i));
  return grad;
}

}  // namespace attg
