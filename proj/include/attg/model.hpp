#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "attg/loss.hpp"
#include "attg/patching.hpp"

namespace attg {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 128;
  int decoder_dim = 64;
  int heads = 4;
  int encoder_blocks = 4;
  int decoder_blocks = 2;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const;
  // Canonical `key=value\n` lines in a fixed key order.
  std::string to_text() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

// One pre-norm transformer block. Vectors are stored as 1×n matrices.
template <typename T>
struct BlockParams {
  Matrix<T> norm1_scale, norm1_offset;
  Matrix<T> query_weight, query_bias, key_weight, key_bias, value_weight, value_bias;
  Matrix<T> out_weight, out_bias;
  Matrix<T> norm2_scale, norm2_offset;
  Matrix<T> mlp_in_weight, mlp_in_bias, mlp_out_weight, mlp_out_bias;
};

template <typename T>
struct ModelParams {
  Matrix<T> patch_weight, patch_bias, cls_token;
  std::vector<BlockParams<T>> encoder;
  Matrix<T> encoder_norm_scale, encoder_norm_offset;
  Matrix<T> decoder_embed_weight, decoder_embed_bias, mask_token;
  std::vector<BlockParams<T>> decoder;
  Matrix<T> decoder_norm_scale, decoder_norm_offset;
  Matrix<T> head_weight, head_bias;
};

struct ParamInfo {
  std::string name;
  int rank = 1;
  bool decay = false;  // weight decay applies to rank-2 projection weights only
};

// Canonical parameter order shared by checkpoints, the optimizer, and gradient checks.
template <typename T>
std::vector<Matrix<T>*> parameter_list(ModelParams<T>& params);
template <typename T>
std::vector<const Matrix<T>*> parameter_list(const ModelParams<T>& params);
std::vector<ParamInfo> parameter_infos(const ModelConfig& config);

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params);

template <typename T>
ModelParams<T> init_params(const ModelConfig& config);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params);

// 2-D sine-cosine table for a grid, (grid² + 1) × dim; row 0 (class token) is zero.
Eigen::MatrixXd sincos_positional_table(int grid_side, int dim);

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

template <typename T>
struct BlockCache {
  Matrix<T> input;
  LayerNormCache<T> norm1;
  Matrix<T> attn_in, query, key, value;
  std::vector<Matrix<T>> attention;  // per head, row-stochastic
  Matrix<T> context;
  Matrix<T> residual;
  LayerNormCache<T> norm2;
  Matrix<T> mlp_in, hidden_pre, hidden;
};

template <typename T>
struct ForwardResult {
  Matrix<T> prediction;  // N × D
  Eigen::Matrix<T, 1, Eigen::Dynamic> latent;
  // Activations kept for the backward pass.
  std::vector<int> visible_order;
  Matrix<T> visible_patches;
  std::vector<BlockCache<T>> encoder;
  LayerNormCache<T> encoder_norm;
  Matrix<T> encoder_out;
  std::vector<BlockCache<T>> decoder;
  LayerNormCache<T> decoder_norm;
  Matrix<T> decoder_out;
};

// Encodes the visible patches (in `visible_order` when given, otherwise ascending),
// re-inserts mask tokens, decodes, and predicts D pixels per patch.
template <typename T>
ForwardResult<T> forward(const ModelParams<T>& params, const ModelConfig& config, const PatchGrid& grid,
                         const MaskSpec& mask, std::span<const int> visible_order = {});

// Reverse-mode pass given ∂L/∂prediction.
template <typename T>
ModelParams<T> backward_from_prediction(const ModelParams<T>& params, const ModelConfig& config,
                                        const ForwardResult<T>& pass, const Matrix<T>& prediction_grad);

template <typename T>
struct LossGradient {
  double loss = 0.0;
  ModelParams<T> gradients;
};

// Gradient of the guided loss (forward ∘ normalize_targets ∘ guided_loss) with respect to every parameter.
template <typename T>
LossGradient<T> backward(const ModelParams<T>& params, const ModelConfig& config, const PatchGrid& grid,
                         const MaskSpec& mask, const Guidance& guidance, double epsilon = kDefaultTargetEpsilon);

// Unmasked encoder pass; mean of the normalized patch tokens.
template <typename T>
Eigen::VectorXd embed_grid(const ModelParams<T>& params, const ModelConfig& config, const PatchGrid& grid);

}  // namespace attg
