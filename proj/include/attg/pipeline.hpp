#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attg/checkpoint.hpp"
#include "attg/data.hpp"
#include "attg/eval.hpp"
#include "attg/train.hpp"

namespace attg {

enum class MapMethod { oracle, tokencut, pooled };
std::string to_string(MapMethod m);
MapMethod parse_map_method(const std::string& s);

// Raw patch map for one dataset entry. Tokencut reads the entry's feature file when the
// dataset lives on disk and recomputes oracle features otherwise.
AttentionMap compute_map(const Dataset& dataset, int index, MapMethod method, double noise = 0.0,
                         std::uint64_t seed = 0);

// Train-split examples. Maps come from `<maps_dir>/<id>.atmp`; with an empty directory the
// ground-truth oracle maps are used. Vanilla runs need no maps.
std::vector<TrainingExample> training_examples(const Dataset& dataset, const std::filesystem::path& maps_dir,
                                               bool with_maps);

// Throws ValidationError when the checkpoint was trained for a different image geometry.
void check_geometry(const ModelConfig& model, const DataConfig& data);

EmbeddingSet embed_images(const Checkpoint& checkpoint, const std::vector<Image>& images);
EmbeddingSet embed_split(const Checkpoint& checkpoint, const Dataset& dataset, Split split);
EmbeddingSet embed_variant(const Checkpoint& checkpoint, const Dataset& dataset, BackgroundVariant variant);

// Query embeddings by name: "train", "val", or a background variant of the val split.
EmbeddingSet embed_query(const Checkpoint& checkpoint, const Dataset& dataset, const std::string& name);

std::map<std::string, EmbeddingSet> variant_embeddings(const Checkpoint& checkpoint, const Dataset& dataset);

// Mean per-patch reconstruction error over masked patches that are at least half foreground,
// on val images with masks fixed by `seed`.
double foreground_reconstruction_mse(const Checkpoint& checkpoint, const Dataset& dataset, std::uint64_t seed,
                                     double mask_ratio = kDefaultMaskRatio);

struct RetrievalScores {
  double medium = 0.0;  // val originals against the train gallery
  double hard = 0.0;    // val images with random-class backgrounds
};
RetrievalScores retrieval_benchmark(const Checkpoint& checkpoint, const Dataset& dataset);

}  // namespace attg
