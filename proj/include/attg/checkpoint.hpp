#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "attg/binary_io.hpp"
#include "attg/model.hpp"

namespace attg {

// AMCK v1: "AMCK", u16 version, u32-length-prefixed `key=value\n` config block,
// u32 array count, then per array: length-prefixed name, u8 rank, u32 dims, float32 data.
// Arrays are the model parameters followed by the optimizer moments ("opt.m.*", "opt.v.*").
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  ModelParams<float> first_moment;
  ModelParams<float> second_moment;
  std::int64_t optimizer_step = 0;
  // Extra run metadata carried in the config block (sorted by key).
  std::map<std::string, std::string> metadata;

  static Checkpoint fresh(const ModelConfig& config);
};

Bytes encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const Bytes& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parses `key=value` lines; blank lines and '#' comments are skipped. Duplicate keys are errors.
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace attg
