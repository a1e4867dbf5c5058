#include "attg/model.hpp"

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <tuple>

#include "attg/error.hpp"
#include "attg/rng.hpp"

namespace attg {
namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr double kInitStd = 0.02;

template <typename T>
using Column = Eigen::Matrix<T, Eigen::Dynamic, 1>;

int parse_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("invalid integer for '" + key + "': " + it->second);
  }
}

// ---- parameter traversal --------------------------------------------------

template <typename Block, typename F>
void visit_block(Block& b, const std::string& prefix, F&& f) {
  f(prefix + "norm1.scale", b.norm1_scale, 1, false);
  f(prefix + "norm1.offset", b.norm1_offset, 1, false);
  f(prefix + "attn.query.weight", b.query_weight, 2, true);
  f(prefix + "attn.query.bias", b.query_bias, 1, false);
  f(prefix + "attn.key.weight", b.key_weight, 2, true);
  f(prefix + "attn.key.bias", b.key_bias, 1, false);
  f(prefix + "attn.value.weight", b.value_weight, 2, true);
  f(prefix + "attn.value.bias", b.value_bias, 1, false);
  f(prefix + "attn.out.weight", b.out_weight, 2, true);
  f(prefix + "attn.out.bias", b.out_bias, 1, false);
  f(prefix + "norm2.scale", b.norm2_scale, 1, false);
  f(prefix + "norm2.offset", b.norm2_offset, 1, false);
  f(prefix + "mlp.in.weight", b.mlp_in_weight, 2, true);
  f(prefix + "mlp.in.bias", b.mlp_in_bias, 1, false);
  f(prefix + "mlp.out.weight", b.mlp_out_weight, 2, true);
  f(prefix + "mlp.out.bias", b.mlp_out_bias, 1, false);
}

template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f("patch_embed.weight", p.patch_weight, 2, true);
  f("patch_embed.bias", p.patch_bias, 1, false);
  f("cls_token", p.cls_token, 1, false);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) visit_block(p.encoder[i], "encoder." + std::to_string(i) + ".", f);
  f("encoder_norm.scale", p.encoder_norm_scale, 1, false);
  f("encoder_norm.offset", p.encoder_norm_offset, 1, false);
  f("decoder_embed.weight", p.decoder_embed_weight, 2, true);
  f("decoder_embed.bias", p.decoder_embed_bias, 1, false);
  f("mask_token", p.mask_token, 1, false);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) visit_block(p.decoder[i], "decoder." + std::to_string(i) + ".", f);
  f("decoder_norm.scale", p.decoder_norm_scale, 1, false);
  f("decoder_norm.offset", p.decoder_norm_offset, 1, false);
  f("head.weight", p.head_weight, 2, true);
  f("head.bias", p.head_bias, 1, false);
}

template <typename T>
BlockParams<T> block_shapes(int dim, int hidden) {
  BlockParams<T> b;
  b.norm1_scale = Matrix<T>::Ones(1, dim);
  b.norm1_offset = Matrix<T>::Zero(1, dim);
  b.query_weight = Matrix<T>::Zero(dim, dim);
  b.query_bias = Matrix<T>::Zero(1, dim);
  b.key_weight = Matrix<T>::Zero(dim, dim);
  b.key_bias = Matrix<T>::Zero(1, dim);
  b.value_weight = Matrix<T>::Zero(dim, dim);
  b.value_bias = Matrix<T>::Zero(1, dim);
  b.out_weight = Matrix<T>::Zero(dim, dim);
  b.out_bias = Matrix<T>::Zero(1, dim);
  b.norm2_scale = Matrix<T>::Ones(1, dim);
  b.norm2_offset = Matrix<T>::Zero(1, dim);
  b.mlp_in_weight = Matrix<T>::Zero(dim, hidden);
  b.mlp_in_bias = Matrix<T>::Zero(1, hidden);
  b.mlp_out_weight = Matrix<T>::Zero(hidden, dim);
  b.mlp_out_bias = Matrix<T>::Zero(1, dim);
  return b;
}

template <typename T>
ModelParams<T> param_shapes(const ModelConfig& c) {
  ModelParams<T> p;
  const int d = c.embed_dim;
  const int dd = c.decoder_dim;
  p.patch_weight = Matrix<T>::Zero(c.patch_dim(), d);
  p.patch_bias = Matrix<T>::Zero(1, d);
  p.cls_token = Matrix<T>::Zero(1, d);
  for (int i = 0; i < c.encoder_blocks; ++i) p.encoder.push_back(block_shapes<T>(d, d * c.mlp_ratio));
  p.encoder_norm_scale = Matrix<T>::Ones(1, d);
  p.encoder_norm_offset = Matrix<T>::Zero(1, d);
  p.decoder_embed_weight = Matrix<T>::Zero(d, dd);
  p.decoder_embed_bias = Matrix<T>::Zero(1, dd);
  p.mask_token = Matrix<T>::Zero(1, dd);
  for (int i = 0; i < c.decoder_blocks; ++i) p.decoder.push_back(block_shapes<T>(dd, dd * c.mlp_ratio));
  p.decoder_norm_scale = Matrix<T>::Ones(1, dd);
  p.decoder_norm_offset = Matrix<T>::Zero(1, dd);
  p.head_weight = Matrix<T>::Zero(dd, c.patch_dim());
  p.head_bias = Matrix<T>::Zero(1, c.patch_dim());
  return p;
}

// ---- building blocks --------------------------------------------------------

template <typename T>
Matrix<T> add_row(const Matrix<T>& x, const Matrix<T>& row) {
  return x.rowwise() + row.row(0);
}

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& scale, const Matrix<T>& offset, LayerNormCache<T>& cache) {
  const Eigen::Index n = x.rows();
  const T dim = static_cast<T>(x.cols());
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).sum() / dim;
    const T var = (x.row(i).array() - mean).square().sum() / dim;
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.inv_std(i) = inv;
    cache.normalized.row(i) = (x.row(i).array() - mean) * inv;
  }
  Matrix<T> y = cache.normalized.array().rowwise() * scale.row(0).array();
  return y.rowwise() + offset.row(0);
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& scale, const LayerNormCache<T>& cache,
                              Matrix<T>& dscale, Matrix<T>& doffset) {
  dscale += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  doffset += dy.colwise().sum();
  const Matrix<T> dxhat = dy.array().rowwise() * scale.row(0).array();
  const T dim = static_cast<T>(dy.cols());
  Matrix<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T mean_d = dxhat.row(i).sum() / dim;
    const T mean_dx = (dxhat.row(i).array() * cache.normalized.row(i).array()).sum() / dim;
    dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - mean_d - cache.normalized.row(i).array() * mean_dx);
  }
  return dx;
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <typename T>
Matrix<T> block_forward(const BlockParams<T>& b, const Matrix<T>& x, int heads, BlockCache<T>& cache) {
  const Eigen::Index len = x.rows();
  const Eigen::Index dim = x.cols();
  const Eigen::Index dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  cache.input = x;
  cache.attn_in = layer_norm(x, b.norm1_scale, b.norm1_offset, cache.norm1);
  cache.query = add_row<T>(cache.attn_in * b.query_weight, b.query_bias);
  cache.key = add_row<T>(cache.attn_in * b.key_weight, b.key_bias);
  cache.value = add_row<T>(cache.attn_in * b.value_weight, b.value_bias);

  cache.attention.resize(heads);
  cache.context.resize(len, dim);
  for (int h = 0; h < heads; ++h) {
    Matrix<T> logits = cache.query.middleCols(h * dh, dh) * cache.key.middleCols(h * dh, dh).transpose() * scale;
    for (Eigen::Index r = 0; r < len; ++r) {
      const T m = logits.row(r).maxCoeff();
      logits.row(r) = (logits.row(r).array() - m).exp();
      logits.row(r) /= logits.row(r).sum();
    }
    cache.context.middleCols(h * dh, dh) = logits * cache.value.middleCols(h * dh, dh);
    cache.attention[h] = std::move(logits);
  }
  cache.residual = x + add_row<T>(cache.context * b.out_weight, b.out_bias);

  cache.mlp_in = layer_norm(cache.residual, b.norm2_scale, b.norm2_offset, cache.norm2);
  cache.hidden_pre = add_row<T>(cache.mlp_in * b.mlp_in_weight, b.mlp_in_bias);
  cache.hidden = cache.hidden_pre.unaryExpr([](T v) { return gelu(v); });
  return cache.residual + add_row<T>(cache.hidden * b.mlp_out_weight, b.mlp_out_bias);
}

template <typename T>
Matrix<T> block_backward(const BlockParams<T>& b, const BlockCache<T>& cache, const Matrix<T>& dout, int heads,
                         BlockParams<T>& g) {
  const Eigen::Index dim = dout.cols();
  const Eigen::Index dh = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // MLP branch
  g.mlp_out_weight.noalias() += cache.hidden.transpose() * dout;
  g.mlp_out_bias += dout.colwise().sum();
  Matrix<T> dhidden = dout * b.mlp_out_weight.transpose();
  dhidden.array() *= cache.hidden_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
  g.mlp_in_weight.noalias() += cache.mlp_in.transpose() * dhidden;
  g.mlp_in_bias += dhidden.colwise().sum();
  const Matrix<T> dmlp_in = dhidden * b.mlp_in_weight.transpose();
  Matrix<T> dresidual = dout + layer_norm_backward(dmlp_in, b.norm2_scale, cache.norm2, g.norm2_scale, g.norm2_offset);

  // Attention branch
  g.out_weight.noalias() += cache.context.transpose() * dresidual;
  g.out_bias += dresidual.colwise().sum();
  const Matrix<T> dcontext = dresidual * b.out_weight.transpose();
  Matrix<T> dquery(dout.rows(), dim), dkey(dout.rows(), dim), dvalue(dout.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const Matrix<T>& probs = cache.attention[h];
    const Matrix<T> dctx = dcontext.middleCols(h * dh, dh);
    const Matrix<T> dprobs = dctx * cache.value.middleCols(h * dh, dh).transpose();
    dvalue.middleCols(h * dh, dh) = probs.transpose() * dctx;
    const Column<T> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    Matrix<T> dlogits = probs.array() * (dprobs.colwise() - row_dot).array();
    dlogits *= scale;
    dquery.middleCols(h * dh, dh) = dlogits * cache.key.middleCols(h * dh, dh);
    dkey.middleCols(h * dh, dh) = dlogits.transpose() * cache.query.middleCols(h * dh, dh);
  }
  g.query_weight.noalias() += cache.attn_in.transpose() * dquery;
  g.query_bias += dquery.colwise().sum();
  g.key_weight.noalias() += cache.attn_in.transpose() * dkey;
  g.key_bias += dkey.colwise().sum();
  g.value_weight.noalias() += cache.attn_in.transpose() * dvalue;
  g.value_bias += dvalue.colwise().sum();
  Matrix<T> dattn_in = dquery * b.query_weight.transpose();
  dattn_in.noalias() += dkey * b.key_weight.transpose();
  dattn_in.noalias() += dvalue * b.value_weight.transpose();
  return dresidual + layer_norm_backward(dattn_in, b.norm1_scale, cache.norm1, g.norm1_scale, g.norm1_offset);
}

using TableKey = std::pair<int, int>;

template <typename T>
std::shared_ptr<const Matrix<T>> positional_table(int grid_side, int dim) {
  static std::mutex mutex;
  static std::map<TableKey, std::shared_ptr<const Matrix<T>>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{grid_side, dim}];
  if (!slot) slot = std::make_shared<const Matrix<T>>(sincos_positional_table(grid_side, dim).cast<T>());
  return slot;
}

std::vector<int> resolve_visible_order(const MaskSpec& mask, std::span<const int> order) {
  std::vector<int> visible;
  for (int i = 0; i < mask.size(); ++i)
    if (!mask.gamma[i]) visible.push_back(i);
  if (order.empty()) return visible;
  std::vector<int> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted != visible) throw ShapeError("visible order must be a permutation of the visible patches");
  return {order.begin(), order.end()};
}

}  // namespace

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("invalid model config: " + m); };
  if (patch_size <= 0 || image_size <= 0) fail("sizes must be positive");
  if (image_size % patch_size) fail("image_size must be divisible by patch_size");
  if (embed_dim <= 0 || decoder_dim <= 0 || heads <= 0) fail("dimensions must be positive");
  if (embed_dim % heads || decoder_dim % heads) fail("embed_dim and decoder_dim must be divisible by heads");
  if (embed_dim % 4 || decoder_dim % 4) fail("embed_dim and decoder_dim must be multiples of 4 for 2-D positional tables");
  if (encoder_blocks < 1 || decoder_blocks < 1) fail("need at least one encoder and one decoder block");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out << "image_size=" << image_size << '\n'
      << "patch_size=" << patch_size << '\n'
      << "embed_dim=" << embed_dim << '\n'
      << "decoder_dim=" << decoder_dim << '\n'
      << "heads=" << heads << '\n'
      << "encoder_blocks=" << encoder_blocks << '\n'
      << "decoder_blocks=" << decoder_blocks << '\n'
      << "mlp_ratio=" << mlp_ratio << '\n'
      << "model_seed=" << seed << '\n';
  return out.str();
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.image_size = parse_int(kv, "image_size", c.image_size);
  c.patch_size = parse_int(kv, "patch_size", c.patch_size);
  c.embed_dim = parse_int(kv, "embed_dim", c.embed_dim);
  c.decoder_dim = parse_int(kv, "decoder_dim", c.decoder_dim);
  c.heads = parse_int(kv, "heads", c.heads);
  c.encoder_blocks = parse_int(kv, "encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = parse_int(kv, "decoder_blocks", c.decoder_blocks);
  c.mlp_ratio = parse_int(kv, "mlp_ratio", c.mlp_ratio);
  if (const auto it = kv.find("model_seed"); it != kv.end()) {
    try {
      c.seed = std::stoull(it->second);
    } catch (const std::exception&) {
      throw ValidationError("invalid model_seed: " + it->second);
    }
  }
  c.validate();
  return c;
}

// ---- parameters ---------------------------------------------------------------

template <typename T>
std::vector<Matrix<T>*> parameter_list(ModelParams<T>& params) {
  std::vector<Matrix<T>*> out;
  visit_params(params, [&](const std::string&, Matrix<T>& m, int, bool) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> parameter_list(const ModelParams<T>& params) {
  std::vector<const Matrix<T>*> out;
  visit_params(params, [&](const std::string&, const Matrix<T>& m, int, bool) { out.push_back(&m); });
  return out;
}

std::vector<ParamInfo> parameter_infos(const ModelConfig& config) {
  auto shapes = param_shapes<float>(config);
  std::vector<ParamInfo> out;
  visit_params(shapes, [&](const std::string& name, Matrix<float>&, int rank, bool decay) {
    out.push_back({name, rank, decay});
  });
  return out;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
  ModelParams<T> out = params;
  for (auto* m : parameter_list(out)) m->setZero();
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p = param_shapes<T>(config);
  Rng rng(derive_seed(config.seed, {0x1A17}));
  visit_params(p, [&](const std::string& name, Matrix<T>& m, int rank, bool) {
    const bool token = name == "cls_token" || name == "mask_token";
    if (rank != 2 && !token) return;  // biases zero, norm scales one
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double z;
      do {
        z = rng.normal() * kInitStd;
      } while (std::abs(z) > 2.0);
      m.data()[i] = static_cast<T>(z);
    }
  });
  return p;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  ModelParams<To> out;
  auto src = parameter_list(params);
  // Build the destination with the same block layout, then copy in canonical order.
  out.encoder.resize(params.encoder.size());
  out.decoder.resize(params.decoder.size());
  auto dst = parameter_list(out);
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<To>();
  return out;
}

Eigen::MatrixXd sincos_positional_table(int grid_side, int dim) {
  if (dim % 4) throw ValidationError("positional table width must be a multiple of 4");
  const int half = dim / 2;
  const int quarter = dim / 4;
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(grid_side * grid_side + 1, dim);
  for (int r = 0; r < grid_side; ++r)
    for (int c = 0; c < grid_side; ++c) {
      const int row = 1 + r * grid_side + c;
      for (int k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        table(row, k) = std::sin(c * omega);
        table(row, quarter + k) = std::cos(c * omega);
        table(row, half + k) = std::sin(r * omega);
        table(row, half + quarter + k) = std::cos(r * omega);
      }
    }
  return table;
}

// ---- forward / backward -------------------------------------------------------

template <typename T>
ForwardResult<T> forward(const ModelParams<T>& p, const ModelConfig& config, const PatchGrid& grid,
                         const MaskSpec& mask, std::span<const int> visible_order) {
  const int n = config.num_patches();
  if (grid.count() != n || grid.dim() != config.patch_dim() || grid.grid_h != config.grid_side())
    throw ShapeError("patch grid does not match the model geometry");
  if (mask.size() != n) throw ShapeError("mask length does not match the patch count");
  if (p.encoder.size() != static_cast<std::size_t>(config.encoder_blocks) ||
      p.decoder.size() != static_cast<std::size_t>(config.decoder_blocks))
    throw ShapeError("parameters do not match the model config");

  ForwardResult<T> out;
  out.visible_order = resolve_visible_order(mask, visible_order);
  const auto nv = static_cast<Eigen::Index>(out.visible_order.size());
  const auto enc_pos = positional_table<T>(config.grid_side(), config.embed_dim);
  const auto dec_pos = positional_table<T>(config.grid_side(), config.decoder_dim);

  out.visible_patches.resize(nv, config.patch_dim());
  for (Eigen::Index j = 0; j < nv; ++j) out.visible_patches.row(j) = grid.patches.row(out.visible_order[j]).template cast<T>();

  Matrix<T> tokens(nv + 1, config.embed_dim);
  tokens.row(0) = p.cls_token.row(0) + enc_pos->row(0);
  tokens.bottomRows(nv) = add_row<T>(out.visible_patches * p.patch_weight, p.patch_bias);
  for (Eigen::Index j = 0; j < nv; ++j) tokens.row(j + 1) += enc_pos->row(out.visible_order[j] + 1);

  out.encoder.resize(p.encoder.size());
  for (std::size_t b = 0; b < p.encoder.size(); ++b) tokens = block_forward(p.encoder[b], tokens, config.heads, out.encoder[b]);
  out.encoder_out = layer_norm(tokens, p.encoder_norm_scale, p.encoder_norm_offset, out.encoder_norm);
  out.latent = nv > 0 ? Eigen::Matrix<T, 1, Eigen::Dynamic>(out.encoder_out.bottomRows(nv).colwise().mean())
                      : Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(config.embed_dim);

  const Matrix<T> projected = add_row<T>(out.encoder_out * p.decoder_embed_weight, p.decoder_embed_bias);
  Matrix<T> full(n + 1, config.decoder_dim);
  full.row(0) = projected.row(0);
  for (int i = 0; i < n; ++i) full.row(i + 1) = p.mask_token.row(0);
  for (Eigen::Index j = 0; j < nv; ++j) full.row(out.visible_order[j] + 1) = projected.row(j + 1);
  full += *dec_pos;

  out.decoder.resize(p.decoder.size());
  for (std::size_t b = 0; b < p.decoder.size(); ++b) full = block_forward(p.decoder[b], full, config.heads, out.decoder[b]);
  out.decoder_out = layer_norm(full, p.decoder_norm_scale, p.decoder_norm_offset, out.decoder_norm);
  out.prediction = add_row<T>(out.decoder_out.bottomRows(n) * p.head_weight, p.head_bias);
  return out;
}

template <typename T>
ModelParams<T> backward_from_prediction(const ModelParams<T>& p, const ModelConfig& config,
                                        const ForwardResult<T>& pass, const Matrix<T>& dpred) {
  const int n = config.num_patches();
  if (dpred.rows() != n || dpred.cols() != config.patch_dim()) throw ShapeError("prediction gradient has the wrong shape");
  ModelParams<T> g = zeros_like(p);
  const auto nv = static_cast<Eigen::Index>(pass.visible_order.size());

  g.head_weight.noalias() += pass.decoder_out.bottomRows(n).transpose() * dpred;
  g.head_bias += dpred.colwise().sum();
  Matrix<T> ddec = Matrix<T>::Zero(n + 1, config.decoder_dim);
  ddec.bottomRows(n) = dpred * p.head_weight.transpose();
  Matrix<T> dfull = layer_norm_backward(ddec, p.decoder_norm_scale, pass.decoder_norm, g.decoder_norm_scale,
                                        g.decoder_norm_offset);
  for (std::size_t b = p.decoder.size(); b-- > 0;)
    dfull = block_backward(p.decoder[b], pass.decoder[b], dfull, config.heads, g.decoder[b]);

  Matrix<T> dprojected(nv + 1, config.decoder_dim);
  dprojected.row(0) = dfull.row(0);
  std::vector<std::uint8_t> is_visible(n, 0);
  for (Eigen::Index j = 0; j < nv; ++j) {
    dprojected.row(j + 1) = dfull.row(pass.visible_order[j] + 1);
    is_visible[pass.visible_order[j]] = 1;
  }
  for (int i = 0; i < n; ++i)
    if (!is_visible[i]) g.mask_token.row(0) += dfull.row(i + 1);

  g.decoder_embed_weight.noalias() += pass.encoder_out.transpose() * dprojected;
  g.decoder_embed_bias += dprojected.colwise().sum();
  Matrix<T> denc = dprojected * p.decoder_embed_weight.transpose();
  Matrix<T> dtokens = layer_norm_backward(denc, p.encoder_norm_scale, pass.encoder_norm, g.encoder_norm_scale,
                                          g.encoder_norm_offset);
  for (std::size_t b = p.encoder.size(); b-- > 0;)
    dtokens = block_backward(p.encoder[b], pass.encoder[b], dtokens, config.heads, g.encoder[b]);

  g.cls_token.row(0) += dtokens.row(0);
  const Matrix<T> dembedded = dtokens.bottomRows(nv);
  g.patch_weight.noalias() += pass.visible_patches.transpose() * dembedded;
  g.patch_bias += dembedded.colwise().sum();
  return g;
}

template <typename T>
LossGradient<T> backward(const ModelParams<T>& params, const ModelConfig& config, const PatchGrid& grid,
                         const MaskSpec& mask, const Guidance& guidance, double epsilon) {
  const ForwardResult<T> pass = forward(params, config, grid, mask);
  const NormalizedTarget target = normalize_targets(grid, epsilon);
  const Eigen::MatrixXd prediction = pass.prediction.template cast<double>();
  LossGradient<T> out;
  out.loss = guided_loss(per_patch_mse(prediction, target), mask, guidance);
  const Matrix<T> dpred = guided_loss_gradient(prediction, target, mask, guidance).template cast<T>();
  out.gradients = backward_from_prediction(params, config, pass, dpred);
  return out;
}

template <typename T>
Eigen::VectorXd embed_grid(const ModelParams<T>& params, const ModelConfig& config, const PatchGrid& grid) {
  config.validate();
  if (grid.count() != config.num_patches() || grid.dim() != config.patch_dim())
    throw ShapeError("image geometry does not match the checkpoint config");
  const int n = config.num_patches();
  const int d = config.embed_dim;
  const auto pos = positional_table<T>(config.grid_side(), d);

  Matrix<T> tokens(n + 1, d);
  tokens.row(0) = params.cls_token.row(0) + pos->row(0);
  tokens.bottomRows(n) = add_row<T>(grid.patches.template cast<T>() * params.patch_weight, params.patch_bias);
  tokens.bottomRows(n) += pos->bottomRows(n);
  BlockCache<T> scratch;
  for (const auto& block : params.encoder) tokens = block_forward(block, tokens, config.heads, scratch);
  LayerNormCache<T> norm;
  const Matrix<T> encoded = layer_norm(tokens, params.encoder_norm_scale, params.encoder_norm_offset, norm);
  return encoded.bottomRows(n).colwise().mean().transpose().template cast<double>();
}

#define ATTG_INSTANTIATE(T)                                                                                        \
  template std::vector<Matrix<T>*> parameter_list(ModelParams<T>&);                                                \
  template std::vector<const Matrix<T>*> parameter_list(const ModelParams<T>&);                                    \
  template ModelParams<T> zeros_like(const ModelParams<T>&);                                                       \
  template ModelParams<T> init_params<T>(const ModelConfig&);                                                      \
  template ForwardResult<T> forward(const ModelParams<T>&, const ModelConfig&, const PatchGrid&, const MaskSpec&, \
                                    std::span<const int>);                                                         \
  template ModelParams<T> backward_from_prediction(const ModelParams<T>&, const ModelConfig&,                      \
                                                   const ForwardResult<T>&, const Matrix<T>&);                    \
  template LossGradient<T> backward(const ModelParams<T>&, const ModelConfig&, const PatchGrid&, const MaskSpec&,  \
                                    const Guidance&, double);                                                      \
  template Eigen::VectorXd embed_grid(const ModelParams<T>&, const ModelConfig&, const PatchGrid&);

ATTG_INSTANTIATE(float)
ATTG_INSTANTIATE(double)
#undef ATTG_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

}  // namespace attg
