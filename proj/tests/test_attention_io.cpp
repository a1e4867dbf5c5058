#include <doctest.h>

#include <random>

#include "attg/attention_io.hpp"
#include "attg/checkpoint.hpp"
#include "attg/error.hpp"
#include "attg/eval.hpp"
#include "attg/image_io.hpp"
#include "test_util.hpp"

using namespace attg;

namespace {

Bytes corrupt(Bytes b, std::size_t at, std::uint8_t value) {
  b.at(at) = value;
  return b;
}

}  // namespace

TEST_CASE("ATMP round-trips raw and normalized maps") {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(12);
  for (auto& x : v) x = u(gen);
  AttentionMap m = AttentionMap::raw(3, 4, v, MapSource::oracle);
  const Bytes raw = encode_attention_map(m);
  CHECK(raw.size() == 4 + 2 + 2 + 2 + 1 + 12 * 4);
  const AttentionMap back = decode_attention_map(raw);
  CHECK(back.grid_h == 3);
  CHECK(back.grid_w == 4);
  CHECK(back.state == MapState::raw);
  CHECK(encode_attention_map(back) == raw);
  for (int i = 0; i < 12; ++i) CHECK(back.values[i] == static_cast<double>(static_cast<float>(v[i])));

  m.state = MapState::normalized;
  CHECK(decode_attention_map(encode_attention_map(m)).state == MapState::normalized);

  m.state = MapState::scaled;
  CHECK_THROWS_AS(encode_attention_map(m), StateError);
}

TEST_CASE("ATMP rejects malformed input") {
  const Bytes good = encode_attention_map(AttentionMap::raw(2, 2, {0, 1, 0, 1}, MapSource::oracle));
  CHECK_THROWS_AS(decode_attention_map(corrupt(good, 0, 'X')), FormatError);
  CHECK_THROWS_AS(decode_attention_map(corrupt(good, 4, 9)), FormatError);
  CHECK_THROWS_AS(decode_attention_map(corrupt(good, 10, 7)), FormatError);
  Bytes shorter = good;
  shorter.pop_back();
  CHECK_THROWS_AS(decode_attention_map(shorter), FormatError);
  Bytes longer = good;
  longer.push_back(0);
  CHECK_THROWS_AS(decode_attention_map(longer), FormatError);
}

TEST_CASE("ATMP file round-trip is byte-identical") {
  testutil::TempDir dir("atmp");
  const AttentionMap m = AttentionMap::raw(2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, MapSource::oracle);
  write_attention_map(dir / "a.atmp", m);
  write_attention_map(dir / "b.atmp", read_attention_map(dir / "a.atmp"));
  CHECK(read_file(dir / "a.atmp") == read_file(dir / "b.atmp"));
  CHECK_THROWS_AS(read_attention_map(dir / "missing.atmp"), IoError);
}

TEST_CASE("PFEA round-trips and infers square grids") {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n;
  PatchFeatures f;
  f.grid_h = f.grid_w = 3;
  f.features.resize(9, 5);
  for (Eigen::Index i = 0; i < f.features.size(); ++i) f.features.data()[i] = n(gen);
  const Bytes bytes = encode_patch_features(f);
  const PatchFeatures back = decode_patch_features(bytes);
  CHECK(back.grid_h == 3);
  CHECK(back.grid_w == 3);
  CHECK(encode_patch_features(back) == bytes);
  CHECK_THROWS_AS(decode_patch_features(bytes, 2, 4), ShapeError);
  CHECK_THROWS_AS(decode_patch_features(corrupt(bytes, 1, 'X')), FormatError);

  PatchFeatures wide;
  wide.grid_h = 2;
  wide.grid_w = 3;
  wide.features = Eigen::MatrixXd::Ones(6, 2);
  CHECK_THROWS_AS(decode_patch_features(encode_patch_features(wide)), ShapeError);
  CHECK(decode_patch_features(encode_patch_features(wide), 2, 3).grid_w == 3);
}

TEST_CASE("EMBD round-trip") {
  EmbeddingSet s;
  s.vectors.resize(3, 4);
  s.vectors.setRandom();
  s.labels = {0, 2, 1};
  s.ids = {"a", "bb", ""};
  const Bytes bytes = encode_embeddings(s);
  const EmbeddingSet back = decode_embeddings(bytes);
  CHECK(back.labels == s.labels);
  CHECK(back.ids == s.ids);
  CHECK(encode_embeddings(back) == bytes);
  CHECK_THROWS_AS(decode_embeddings(corrupt(bytes, 0, 'e')), FormatError);
  CHECK_THROWS_AS(decode_embeddings(corrupt(bytes, 4, 2)), FormatError);
}

TEST_CASE("AMCK round-trip keeps parameters, moments, and metadata") {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.decoder_dim = 8;
  c.heads = 2;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.seed = 3;
  Checkpoint ck = Checkpoint::fresh(c);
  ck.optimizer_step = 17;
  ck.metadata["guidance"] = "attg";
  const Bytes bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.config == c);
  CHECK(back.optimizer_step == 17);
  CHECK(back.metadata.at("guidance") == "attg");
  CHECK(encode_checkpoint(back) == bytes);
  CHECK_THROWS_AS(decode_checkpoint(corrupt(bytes, 2, 'x')), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(corrupt(bytes, 4, 5)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(Bytes(bytes.begin(), bytes.end() - 1)), FormatError);
}

TEST_CASE("parse_key_values handles comments and rejects duplicates") {
  const auto kv = parse_key_values("# header\na=1\n\nb=x=y\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "x=y");
  CHECK_THROWS_AS(parse_key_values("a=1\na=2\n"), FormatError);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), FormatError);
}

TEST_CASE("PPM and PGM round-trip quantized rasters") {
  std::mt19937_64 gen(5);
  Image img = testutil::random_image(gen, 4, 6);
  for (auto& v : img.pixels) v = quantize_unit(v) / 255.0;
  const Image back = decode_ppm(encode_ppm(img));
  CHECK(back.pixels == img.pixels);
  CHECK(encode_ppm(back) == encode_ppm(img));

  const Bytes commented = [] {
    const std::string header = "P6\n# made by hand\n2 1\n255\n";
    Bytes b(header.begin(), header.end());
    for (int i = 0; i < 6; ++i) b.push_back(static_cast<std::uint8_t>(40 * i));
    return b;
  }();
  CHECK(decode_ppm(commented).width == 2);
  CHECK_THROWS_AS(decode_ppm(Bytes{'P', '3', '\n'}), FormatError);

  GrayImage g{2, 2, {0, 255, 128, 7}};
  CHECK(decode_pgm(encode_pgm(g)).pixels == g.pixels);
}
