#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attg/attention.hpp"
#include "attg/checkpoint.hpp"
#include "attg/loss.hpp"
#include "attg/optimizer.hpp"

namespace attg {

struct TrainingExample {
  std::string id;
  PatchGrid grid;
  std::optional<AttentionMap> map;  // raw or normalized; required unless the mode is vanilla
};

struct TrainOptions {
  ModelConfig model;
  GuidanceMode mode = GuidanceMode::attg;
  // total_epochs is filled in from `epochs` so the last epoch sees tau_end.
  TemperatureSchedule schedule;
  int epochs = 100;
  int batch_size = 32;
  double mask_ratio = kDefaultMaskRatio;
  double target_epsilon = kDefaultTargetEpsilon;
  OptimizerSettings optimizer;
  std::uint64_t seed = 0;  // example order and masks
  int checkpoint_every = 0;
};

struct TrainLogRow {
  int epoch = 0;
  std::int64_t step = 0;
  double tau = 0.0;  // +inf in vanilla mode
  GuidanceMode mode = GuidanceMode::vanilla;
  double loss = 0.0;
};

struct TrainCallbacks {
  std::function<void(const TrainLogRow&)> on_step;
  std::function<void(int epoch, const Checkpoint&)> on_checkpoint;
};

// The schedule actually used for a run of `epochs` epochs.
TemperatureSchedule effective_schedule(const TrainOptions& options);

// Mask seed for one image in one epoch; exposed so evaluation can reuse the same masks.
std::uint64_t mask_seed_for(std::uint64_t run_seed, int epoch, std::size_t example_index);

// Per-image guidance for the current temperature. Raw maps are min-max normalized first.
Guidance guidance_for(const TrainingExample& example, GuidanceMode mode, double tau, double mask_ratio,
                      const ModelConfig& config);

// Runs the attention-guided training loop and returns the final checkpoint.
// Throws NumericalError when a batch loss is not finite.
Checkpoint train(const TrainOptions& options, const std::vector<TrainingExample>& examples,
                 const TrainCallbacks& callbacks = {});

std::string format_log_row(const TrainLogRow& row);
inline constexpr const char* kTrainLogHeader = "epoch,step,tau,mode,loss";

}  // namespace attg
