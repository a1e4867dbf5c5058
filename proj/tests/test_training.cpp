#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "attg/checkpoint.hpp"
#include "attg/error.hpp"
#include "attg/run_config.hpp"
#include "attg/train.hpp"
#include "test_util.hpp"

using namespace attg;

namespace {

TrainOptions tiny_options() {
  TrainOptions o;
  o.model.image_size = 8;
  o.model.patch_size = 4;
  o.model.embed_dim = 16;
  o.model.decoder_dim = 8;
  o.model.heads = 2;
  o.model.encoder_blocks = 1;
  o.model.decoder_blocks = 1;
  o.model.mlp_ratio = 2;
  o.epochs = 4;
  o.batch_size = 3;
  o.mask_ratio = 0.5;
  o.optimizer.learning_rate = 1e-3;
  o.seed = 11;
  return o;
}

std::vector<TrainingExample> tiny_examples(int count) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u;
  std::vector<TrainingExample> out;
  for (int i = 0; i < count; ++i) {
    TrainingExample ex;
    ex.id = "ex" + std::to_string(i);
    ex.grid = patchify(testutil::random_image(gen, 8, 8), 4);
    ex.map = AttentionMap::raw(2, 2, {u(gen), u(gen), u(gen), u(gen)}, MapSource::oracle);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_CASE("zero epochs returns the initialization") {
  TrainOptions o = tiny_options();
  o.epochs = 0;
  const Checkpoint ck = train(o, tiny_examples(5));
  CHECK(encode_checkpoint(ck) == encode_checkpoint(Checkpoint::fresh(o.model)));
}

TEST_CASE("training is deterministic and logs one row per step") {
  const TrainOptions o = tiny_options();
  const auto examples = tiny_examples(7);
  std::vector<TrainLogRow> rows;
  const Checkpoint a = train(o, examples, {[&](const TrainLogRow& r) { rows.push_back(r); }, {}});
  const Checkpoint b = train(o, examples);
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
  REQUIRE(rows.size() == 4 * 3);
  CHECK(rows.front().tau == 0.75);
  CHECK(rows.back().tau == 1.0);
  CHECK(rows.back().step == 11);
  CHECK(a.optimizer_step == 12);
  for (const auto& r : rows) CHECK(std::isfinite(r.loss));
  CHECK(format_log_row(rows.front()).rfind("0,0,0.75,attg,", 0) == 0);
}

TEST_CASE("vanilla training ignores maps and logs an infinite temperature") {
  TrainOptions o = tiny_options();
  o.mode = GuidanceMode::vanilla;
  auto examples = tiny_examples(4);
  std::vector<double> with_maps, without_maps;
  const Checkpoint a = train(o, examples, {[&](const TrainLogRow& r) {
                               CHECK(std::isinf(r.tau));
                               with_maps.push_back(r.loss);
                             }, {}});
  for (auto& ex : examples) ex.map.reset();
  const Checkpoint b = train(o, examples, {[&](const TrainLogRow& r) { without_maps.push_back(r.loss); }, {}});
  CHECK(with_maps == without_maps);
  CHECK(encode_checkpoint(a) == encode_checkpoint(b));
}

TEST_CASE("guided modes need maps") {
  auto examples = tiny_examples(2);
  examples[1].map.reset();
  CHECK_THROWS_AS(train(tiny_options(), examples), ValidationError);
}

TEST_CASE("non-finite losses abort training") {
  auto examples = tiny_examples(3);
  examples[0].grid.patches(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train(tiny_options(), examples), NumericalError);
}

TEST_CASE("periodic checkpoints carry the optimizer state") {
  TrainOptions o = tiny_options();
  o.checkpoint_every = 2;
  std::vector<int> epochs;
  train(o, tiny_examples(3), {{}, [&](int epoch, const Checkpoint& ck) {
                               epochs.push_back(epoch);
                               CHECK(ck.optimizer_step == epoch);
                             }});
  CHECK(epochs == std::vector<int>{2});
}

TEST_CASE("every guidance mode trains") {
  for (auto mode : {GuidanceMode::attg, GuidanceMode::foreground_only, GuidanceMode::background_only,
                    GuidanceMode::inverted, GuidanceMode::input_masking}) {
    TrainOptions o = tiny_options();
    o.mode = mode;
    o.epochs = 2;
    CHECK_NOTHROW(train(o, tiny_examples(4)));
  }
}

TEST_CASE("schedule spans the configured epochs") {
  TrainOptions o = tiny_options();
  o.epochs = 10;
  CHECK(effective_schedule(o).total_epochs == 9);
  CHECK(mask_seed_for(1, 0, 0) != mask_seed_for(1, 1, 0));
  CHECK(mask_seed_for(1, 0, 0) != mask_seed_for(1, 0, 1));
}

TEST_CASE("run config defaults, overrides, and replay") {
  RunConfig rc;
  CHECK(rc.get("guidance") == "attg");
  CHECK(rc.get_double("tau_start") == 0.75);
  rc.set("epochs", "3");
  rc.set("guidance", "fg-only");
  const RunConfig replay = RunConfig::parse(rc.to_text());
  CHECK(replay.to_text() == rc.to_text());
  DataConfig data;
  const TrainOptions o = replay.train_options(data);
  CHECK(o.epochs == 3);
  CHECK(o.mode == GuidanceMode::foreground_only);
  CHECK(o.model.image_size == 64);
  CHECK_THROWS_AS(rc.set("learning_rate", "1"), ValidationError);
  CHECK_THROWS_AS(RunConfig::parse("bogus=1\n"), ValidationError);
  rc.set("epochs", "three");
  CHECK_THROWS_AS(rc.train_options(data), ValidationError);
}
