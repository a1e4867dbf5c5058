#include "attg/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace attg {

double learning_rate_at(const OptimizerSettings& s, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return s.learning_rate;
  const auto warmup = static_cast<std::int64_t>(std::floor(s.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return s.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup));
  const double progress = static_cast<double>(step - warmup) / span;
  return s.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
AdamW<T>::AdamW(const ModelConfig& config, const ModelParams<T>& like, OptimizerSettings settings)
    : settings_(settings), infos_(parameter_infos(config)), m_(zeros_like(like)), v_(zeros_like(like)) {}

template <typename T>
void AdamW<T>::step(ModelParams<T>& params, const ModelParams<T>& gradients, double learning_rate) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(steps_));
  const T b1 = static_cast<T>(settings_.beta1);
  const T b2 = static_cast<T>(settings_.beta2);
  const T step_size = static_cast<T>(learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(settings_.epsilon);

  auto p = parameter_list(params);
  auto g = parameter_list(gradients);
  auto m = parameter_list(m_);
  auto v = parameter_list(v_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (infos_[i].decay) *p[i] *= static_cast<T>(1.0 - learning_rate * settings_.weight_decay);
    m[i]->array() = b1 * m[i]->array() + (T(1) - b1) * g[i]->array();
    v[i]->array() = b2 * v[i]->array() + (T(1) - b2) * g[i]->array().square();
    p[i]->array() -= step_size * m[i]->array() / (v[i]->array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace attg
