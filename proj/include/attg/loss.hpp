#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "attg/attention.hpp"
#include "attg/patching.hpp"

namespace attg {

// Mean squared error per patch row; always non-negative.
struct PerPatchLoss {
  Eigen::VectorXd values;
};

enum class GuidanceMode { vanilla, attg, foreground_only, background_only, inverted, input_masking };

std::string to_string(GuidanceMode mode);
// Accepts both the CLI spellings (fg-only, input-mask) and the enum names.
GuidanceMode parse_guidance_mode(const std::string& s);

// Effective per-patch weighting for one image. `keep[i] == 0` drops patch i from
// both the numerator and the denominator of the masked mean.
struct Guidance {
  AttentionMap weights;  // scaled state
  std::vector<std::uint8_t> keep;
  std::optional<MaskSpec> masking_override;
};

PerPatchLoss per_patch_mse(const Eigen::MatrixXd& prediction, const NormalizedTarget& target);

// Σ γ_i L_i M_i / Σ γ_i over masked patches.
double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const AttentionMap& weights);
// Same reduction restricted to patches with keep[i] == 1.
double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const AttentionMap& weights,
                   const std::vector<std::uint8_t>& keep);
double guided_loss(const PerPatchLoss& per_patch, const MaskSpec& mask, const Guidance& guidance);

double vanilla_loss(const PerPatchLoss& per_patch, const MaskSpec& mask);

Guidance apply_guidance_mode(GuidanceMode mode, const AttentionMap& map, double tau,
                             double mask_ratio = kDefaultMaskRatio);

// ∂L/∂pred = 2 γ_i keep_i M_i (pred − target) / (D Σ γ keep).
Eigen::MatrixXd guided_loss_gradient(const Eigen::MatrixXd& prediction, const NormalizedTarget& target,
                                     const MaskSpec& mask, const AttentionMap& weights);
Eigen::MatrixXd guided_loss_gradient(const Eigen::MatrixXd& prediction, const NormalizedTarget& target,
                                     const MaskSpec& mask, const Guidance& guidance);

}  // namespace attg
