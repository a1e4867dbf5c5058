#pragma once

#include <cstdint>

#include "attg/model.hpp"

namespace attg {

struct OptimizerSettings {
  double learning_rate = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double epsilon = 1e-8;
  double warmup_fraction = 0.05;
};

// Linear warmup over the first warmup_steps, then half-cosine decay to zero at total_steps.
double learning_rate_at(const OptimizerSettings& settings, std::int64_t step, std::int64_t total_steps);

// Adam with decoupled weight decay. Decay skips biases, norms, and tokens.
template <typename T>
class AdamW {
 public:
  AdamW(const ModelConfig& config, const ModelParams<T>& like, OptimizerSettings settings);

  void step(ModelParams<T>& params, const ModelParams<T>& gradients, double learning_rate);

  std::int64_t steps_taken() const { return steps_; }
  const OptimizerSettings& settings() const { return settings_; }
  ModelParams<T>& first_moment() { return m_; }
  ModelParams<T>& second_moment() { return v_; }
  const ModelParams<T>& first_moment() const { return m_; }
  const ModelParams<T>& second_moment() const { return v_; }
  void set_steps_taken(std::int64_t steps) { steps_ = steps; }

 private:
  OptimizerSettings settings_;
  std::vector<ParamInfo> infos_;
  ModelParams<T> m_, v_;
  std::int64_t steps_ = 0;
};

}  // namespace attg
