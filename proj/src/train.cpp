#include "attg/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "attg/error.hpp"
#include "attg/parallel.hpp"
#include "attg/rng.hpp"

namespace attg {

TemperatureSchedule effective_schedule(const TrainOptions& options) {
  TemperatureSchedule s = options.schedule;
  s.total_epochs = std::max(0, options.epochs - 1);
  return s;
}

std::uint64_t mask_seed_for(std::uint64_t run_seed, int epoch, std::size_t example_index) {
  return derive_seed(run_seed, {0x3A5C, static_cast<std::uint64_t>(epoch), example_index});
}

Guidance guidance_for(const TrainingExample& example, GuidanceMode mode, double tau, double mask_ratio,
                      const ModelConfig& config) {
  const int side = config.grid_side();
  if (mode == GuidanceMode::vanilla) {
    Guidance g;
    g.weights = AttentionMap::unit_weights(side, side);
    g.keep.assign(static_cast<std::size_t>(side) * side, 1);
    return g;
  }
  if (!example.map) throw ValidationError("missing attention map for '" + example.id + "'");
  const AttentionMap& map = *example.map;
  if (map.grid_h != side || map.grid_w != side) throw ShapeError("attention map for '" + example.id + "' does not match the patch grid");
  const AttentionMap normalized = map.state == MapState::raw ? normalize_map(map) : map;
  return apply_guidance_mode(mode, normalized, tau, mask_ratio);
}

Checkpoint train(const TrainOptions& options, const std::vector<TrainingExample>& examples,
                 const TrainCallbacks& callbacks) {
  options.model.validate();
  if (options.epochs < 0) throw ValidationError("epochs must be non-negative");
  if (options.batch_size <= 0) throw ValidationError("batch size must be positive");
  if (!(options.mask_ratio > 0.0 && options.mask_ratio < 1.0)) throw ValidationError("mask ratio must lie in (0, 1)");
  if (examples.empty() && options.epochs > 0) throw ValidationError("no training examples");
  for (const auto& ex : examples) {
    if (ex.grid.count() != options.model.num_patches() || ex.grid.dim() != options.model.patch_dim())
      throw ShapeError("example '" + ex.id + "' does not match the model geometry");
    if (options.mode != GuidanceMode::vanilla && !ex.map)
      throw ValidationError("missing attention map for '" + ex.id + "'");
  }

  Checkpoint ckpt = Checkpoint::fresh(options.model);
  if (options.epochs == 0) return ckpt;

  const TemperatureSchedule schedule = effective_schedule(options);
  AdamW<float> optimizer(options.model, ckpt.params, options.optimizer);
  const auto n = examples.size();
  const auto batches_per_epoch = static_cast<std::int64_t>((n + options.batch_size - 1) / options.batch_size);
  const std::int64_t total_steps = batches_per_epoch * options.epochs;

  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double tau = options.mode == GuidanceMode::vanilla ? std::numeric_limits<double>::infinity()
                                                             : temperature_at(schedule, epoch);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(options.seed, {0x5E0F, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());

    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t count = std::min<std::size_t>(options.batch_size, n - start);
      std::vector<LossGradient<float>> slots(count);
      parallel_for(count, [&](std::size_t j) {
        const std::size_t idx = order[start + j];
        const TrainingExample& ex = examples[idx];
        Guidance g = guidance_for(ex, options.mode, tau, options.mask_ratio, options.model);
        const MaskSpec mask = g.masking_override
                                  ? *g.masking_override
                                  : sample_random_mask(ex.grid.count(), options.mask_ratio, mask_seed_for(options.seed, epoch, idx));
        slots[j] = backward(ckpt.params, options.model, ex.grid, mask, g, options.target_epsilon);
      });

      double loss = 0.0;
      ModelParams<float> total = std::move(slots[0].gradients);
      loss += slots[0].loss;
      auto acc = parameter_list(total);
      for (std::size_t j = 1; j < count; ++j) {
        loss += slots[j].loss;
        const auto grads = parameter_list(std::as_const(slots[j].gradients));
        for (std::size_t k = 0; k < acc.size(); ++k) *acc[k] += *grads[k];
      }
      loss /= static_cast<double>(count);
      if (!std::isfinite(loss)) throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      const float inv = 1.0f / static_cast<float>(count);
      for (auto* g : acc) *g *= inv;

      optimizer.step(ckpt.params, total, learning_rate_at(options.optimizer, step, total_steps));
      if (callbacks.on_step) callbacks.on_step({epoch, step, tau, options.mode, loss});
      ++step;
    }

    ckpt.first_moment = optimizer.first_moment();
    ckpt.second_moment = optimizer.second_moment();
    ckpt.optimizer_step = optimizer.steps_taken();
    if (callbacks.on_checkpoint && options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0 &&
        epoch + 1 < options.epochs)
      callbacks.on_checkpoint(epoch + 1, ckpt);
  }
  return ckpt;
}

std::string format_log_row(const TrainLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%s,%.17g", row.epoch, static_cast<long long>(row.step), row.tau,
                to_string(row.mode).c_str(), row.loss);
  return buf;
}

}  // namespace attg
