#pragma once

#include <filesystem>

#include "attg/attention.hpp"
#include "attg/binary_io.hpp"

namespace attg {

// ATMP v1: "ATMP", u16 version, u16 grid_h, u16 grid_w, u8 state (0 raw, 1 normalized),
// then grid_h × grid_w float32 values, row-major, all little-endian.
inline constexpr std::uint16_t kAttentionMapVersion = 1;
// PFEA v1: "PFEA", u16 version, u32 N, u32 d, N × d float32 values, row-major.
inline constexpr std::uint16_t kPatchFeatureVersion = 1;

Bytes encode_attention_map(const AttentionMap& map);
AttentionMap decode_attention_map(const Bytes& bytes);
void write_attention_map(const std::filesystem::path& path, const AttentionMap& map);
AttentionMap read_attention_map(const std::filesystem::path& path);

Bytes encode_patch_features(const PatchFeatures& features);
// The file carries no grid geometry; grid_h × grid_w must equal the stored N.
// Passing zeros infers a square grid.
PatchFeatures decode_patch_features(const Bytes& bytes, int grid_h = 0, int grid_w = 0);
void write_patch_features(const std::filesystem::path& path, const PatchFeatures& features);
PatchFeatures read_patch_features(const std::filesystem::path& path, int grid_h = 0, int grid_w = 0);

}  // namespace attg
