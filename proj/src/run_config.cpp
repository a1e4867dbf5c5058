#include "attg/run_config.hpp"

#include <sstream>

#include "attg/checkpoint.hpp"
#include "attg/error.hpp"

namespace attg {
namespace {

template <typename T, typename Parse>
T parse_number(const std::string& key, const std::string& text, Parse parse) {
  try {
    std::size_t used = 0;
    const T v = parse(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("invalid value for '" + key + "': '" + text + "'");
  }
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = {
      {"data", ""},           {"maps", ""},           {"out", ""},
      {"guidance", "attg"},   {"tau_start", "0.75"},  {"tau_end", "1"},
      {"schedule", "cosine"}, {"mask_ratio", "0.75"}, {"epochs", "100"},
      {"batch_size", "32"},   {"lr", "1.5e-4"},       {"weight_decay", "0.05"},
      {"warmup_fraction", "0.05"}, {"seed", "0"},     {"checkpoint_every", "0"},
      {"embed_dim", "128"},   {"decoder_dim", "64"},  {"heads", "4"},
      {"encoder_blocks", "4"}, {"decoder_blocks", "2"}, {"mlp_ratio", "4"},
      {"model_seed", "0"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  for (const auto& [key, value] : parse_key_values(text)) c.set(key, value);
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  if (value.find('\n') != std::string::npos) throw ValidationError("config values must be single-line");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  return parse_number<int>(key, get(key), [](const std::string& s, std::size_t* u) { return std::stoi(s, u); });
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key), [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& text = get(key);
  if (!text.empty() && text[0] == '-') throw ValidationError("invalid value for '" + key + "': '" + text + "'");
  return parse_number<std::uint64_t>(key, text, [](const std::string& s, std::size_t* u) { return std::stoull(s, u); });
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  for (const auto& k : keys()) out << k.name << '=' << values_.at(k.name) << '\n';
  return out.str();
}

TrainOptions RunConfig::train_options(const DataConfig& data) const {
  TrainOptions o;
  o.model.image_size = data.image_size;
  o.model.patch_size = data.patch_size;
  o.model.embed_dim = get_int("embed_dim");
  o.model.decoder_dim = get_int("decoder_dim");
  o.model.heads = get_int("heads");
  o.model.encoder_blocks = get_int("encoder_blocks");
  o.model.decoder_blocks = get_int("decoder_blocks");
  o.model.mlp_ratio = get_int("mlp_ratio");
  o.model.seed = get_u64("model_seed");
  o.model.validate();
  o.mode = parse_guidance_mode(get("guidance"));
  o.schedule.kind = parse_schedule_kind(get("schedule"));
  o.schedule.tau_start = get_double("tau_start");
  o.schedule.tau_end = get_double("tau_end");
  if (!(o.schedule.tau_start > 0.0) || !(o.schedule.tau_end > 0.0)) throw ValidationError("temperatures must be positive");
  o.epochs = get_int("epochs");
  o.batch_size = get_int("batch_size");
  o.mask_ratio = get_double("mask_ratio");
  o.optimizer.learning_rate = get_double("lr");
  o.optimizer.weight_decay = get_double("weight_decay");
  o.optimizer.warmup_fraction = get_double("warmup_fraction");
  if (!(o.optimizer.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (o.optimizer.warmup_fraction < 0.0 || o.optimizer.warmup_fraction > 1.0)
    throw ValidationError("warmup fraction must lie in [0, 1]");
  o.seed = get_u64("seed");
  o.checkpoint_every = get_int("checkpoint_every");
  if (o.epochs < 0) throw ValidationError("epochs must be non-negative");
  if (o.checkpoint_every < 0) throw ValidationError("checkpoint_every must be non-negative");
  return o;
}

}  // namespace attg
