#include "attg/attention_io.hpp"

#include <cmath>
#include <limits>

#include "attg/error.hpp"

namespace attg {

Bytes encode_attention_map(const AttentionMap& map) {
  if (map.state == MapState::scaled) throw StateError("scaled maps are not stored; write the normalized map instead");
  if (map.grid_h <= 0 || map.grid_w <= 0 || map.grid_h > std::numeric_limits<std::uint16_t>::max() ||
      map.grid_w > std::numeric_limits<std::uint16_t>::max() ||
      map.values.size() != static_cast<std::size_t>(map.grid_h) * map.grid_w)
    throw ShapeError("attention map geometry cannot be encoded");
  ByteWriter w;
  w.magic("ATMP");
  w.u16(kAttentionMapVersion);
  w.u16(static_cast<std::uint16_t>(map.grid_h));
  w.u16(static_cast<std::uint16_t>(map.grid_w));
  w.u8(map.state == MapState::raw ? 0 : 1);
  for (double v : map.values) w.f32(static_cast<float>(v));
  return w.take();
}

AttentionMap decode_attention_map(const Bytes& bytes) {
  ByteReader r(bytes);
  r.expect_magic("ATMP");
  const auto version = r.u16();
  if (version != kAttentionMapVersion) throw FormatError("unsupported ATMP version " + std::to_string(version));
  const int gh = r.u16();
  const int gw = r.u16();
  const auto state = r.u8();
  if (state > 1) throw FormatError("invalid ATMP state byte " + std::to_string(state));
  if (gh == 0 || gw == 0) throw FormatError("ATMP grid must be non-empty");
  std::vector<double> values(static_cast<std::size_t>(gh) * gw);
  for (auto& v : values) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError("ATMP contains non-finite values");
  }
  r.expect_end();
  AttentionMap m = AttentionMap::raw(gh, gw, std::move(values), MapSource::ingested);
  m.state = state == 0 ? MapState::raw : MapState::normalized;
  return m;
}

void write_attention_map(const std::filesystem::path& path, const AttentionMap& map) {
  write_file(path, encode_attention_map(map));
}

AttentionMap read_attention_map(const std::filesystem::path& path) {
  try {
    return decode_attention_map(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Bytes encode_patch_features(const PatchFeatures& features) {
  ByteWriter w;
  w.magic("PFEA");
  w.u16(kPatchFeatureVersion);
  w.u32(static_cast<std::uint32_t>(features.features.rows()));
  w.u32(static_cast<std::uint32_t>(features.features.cols()));
  for (Eigen::Index i = 0; i < features.features.rows(); ++i)
    for (Eigen::Index j = 0; j < features.features.cols(); ++j) w.f32(static_cast<float>(features.features(i, j)));
  return w.take();
}

PatchFeatures decode_patch_features(const Bytes& bytes, int grid_h, int grid_w) {
  ByteReader r(bytes);
  r.expect_magic("PFEA");
  const auto version = r.u16();
  if (version != kPatchFeatureVersion) throw FormatError("unsupported PFEA version " + std::to_string(version));
  const auto n = r.u32();
  const auto d = r.u32();
  if (n == 0 || d == 0) throw FormatError("PFEA dimensions must be non-zero");
  if (r.remaining() != static_cast<std::size_t>(n) * d * 4) throw FormatError("PFEA payload size does not match header");
  PatchFeatures f;
  f.features.resize(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) f.features(i, j) = r.f32();
  r.expect_end();
  if (grid_h == 0 && grid_w == 0) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (static_cast<std::uint32_t>(side * side) != n) throw ShapeError("cannot infer a square grid from N=" + std::to_string(n));
    grid_h = grid_w = side;
  }
  if (static_cast<std::uint32_t>(grid_h * grid_w) != n) throw ShapeError("PFEA row count does not match the patch grid");
  f.grid_h = grid_h;
  f.grid_w = grid_w;
  return f;
}

void write_patch_features(const std::filesystem::path& path, const PatchFeatures& features) {
  write_file(path, encode_patch_features(features));
}

PatchFeatures read_patch_features(const std::filesystem::path& path, int grid_h, int grid_w) {
  try {
    return decode_patch_features(read_file(path), grid_h, grid_w);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace attg
