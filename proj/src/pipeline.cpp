#include "attg/pipeline.hpp"

#include "attg/attention_io.hpp"
#include "attg/error.hpp"
#include "attg/parallel.hpp"
#include "attg/rng.hpp"

namespace attg {

std::string to_string(MapMethod m) {
  switch (m) {
    case MapMethod::oracle: return "oracle";
    case MapMethod::tokencut: return "tokencut";
    case MapMethod::pooled: return "pooled";
  }
  return "?";
}

MapMethod parse_map_method(const std::string& s) {
  if (s == "oracle") return MapMethod::oracle;
  if (s == "tokencut") return MapMethod::tokencut;
  if (s == "pooled") return MapMethod::pooled;
  throw ValidationError("unknown map method '" + s + "'");
}

AttentionMap compute_map(const Dataset& dataset, int index, MapMethod method, double noise, std::uint64_t seed) {
  const Sample& s = dataset.samples.at(index);
  switch (method) {
    case MapMethod::oracle:
      return oracle_attention(s.mask, noise, derive_seed(seed, {static_cast<std::uint64_t>(index)}));
    case MapMethod::tokencut: {
      const auto path = dataset.root / "features" / (s.image.id + ".pfea");
      const PatchFeatures features =
          dataset.root.empty()
              ? oracle_features(s.image, s.mask, dataset.config.feature_dim, feature_projection_seed(dataset.config.seed))
              : read_patch_features(path, s.mask.grid_h, s.mask.grid_w);
      return tokencut_map(features);
    }
    case MapMethod::pooled: {
      Eigen::MatrixXd heat(s.mask.height, s.mask.width);
      for (int r = 0; r < s.mask.height; ++r)
        for (int c = 0; c < s.mask.width; ++c) heat(r, c) = s.mask.pixels[r * s.mask.width + c] ? 1.0 : 0.0;
      return pool_heatmap(heat, dataset.config.patch_size);
    }
  }
  throw ValidationError("unknown map method");
}

std::vector<TrainingExample> training_examples(const Dataset& dataset, const std::filesystem::path& maps_dir,
                                               bool with_maps) {
  const auto train_idx = dataset.indices(Split::train);
  std::vector<TrainingExample> out(train_idx.size());
  parallel_for(train_idx.size(), [&](std::size_t j) {
    const Sample& s = dataset.samples[train_idx[j]];
    TrainingExample& ex = out[j];
    ex.id = s.image.id;
    ex.grid = patchify(s.image, dataset.config.patch_size);
    if (!with_maps) return;
    if (maps_dir.empty()) {
      ex.map = oracle_attention(s.mask);
    } else {
      const auto path = maps_dir / (s.image.id + ".atmp");
      if (!std::filesystem::exists(path)) throw IoError("missing attention map " + path.string());
      ex.map = read_attention_map(path);
    }
  });
  return out;
}

void check_geometry(const ModelConfig& model, const DataConfig& data) {
  if (model.image_size != data.image_size || model.patch_size != data.patch_size)
    throw ValidationError("checkpoint geometry (image " + std::to_string(model.image_size) + ", patch " +
                          std::to_string(model.patch_size) + ") does not match the dataset (image " +
                          std::to_string(data.image_size) + ", patch " + std::to_string(data.patch_size) + ")");
}

EmbeddingSet embed_images(const Checkpoint& checkpoint, const std::vector<Image>& images) {
  EmbeddingSet set;
  set.vectors.resize(static_cast<Eigen::Index>(images.size()), checkpoint.config.embed_dim);
  set.labels.resize(images.size());
  set.ids.resize(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const auto grid = patchify(images[i], checkpoint.config.patch_size);
    set.vectors.row(static_cast<Eigen::Index>(i)) = embed_grid(checkpoint.params, checkpoint.config, grid).transpose();
    set.labels[i] = images[i].label;
    set.ids[i] = images[i].id;
  });
  return set;
}

EmbeddingSet embed_split(const Checkpoint& checkpoint, const Dataset& dataset, Split split) {
  check_geometry(checkpoint.config, dataset.config);
  std::vector<Image> images;
  for (int i : dataset.indices(split)) images.push_back(dataset.samples[i].image);
  return embed_images(checkpoint, images);
}

EmbeddingSet embed_variant(const Checkpoint& checkpoint, const Dataset& dataset, BackgroundVariant variant) {
  check_geometry(checkpoint.config, dataset.config);
  return embed_images(checkpoint, dataset.variant_images(variant));
}

EmbeddingSet embed_query(const Checkpoint& checkpoint, const Dataset& dataset, const std::string& name) {
  if (name == "train") return embed_split(checkpoint, dataset, Split::train);
  if (name == "val") return embed_split(checkpoint, dataset, Split::val);
  return embed_variant(checkpoint, dataset, parse_variant(name));
}

std::map<std::string, EmbeddingSet> variant_embeddings(const Checkpoint& checkpoint, const Dataset& dataset) {
  std::map<std::string, EmbeddingSet> out;
  for (const auto& name : kBackgroundVariants) out[name] = embed_variant(checkpoint, dataset, parse_variant(name));
  return out;
}

double foreground_reconstruction_mse(const Checkpoint& checkpoint, const Dataset& dataset, std::uint64_t seed,
                                     double mask_ratio) {
  check_geometry(checkpoint.config, dataset.config);
  const auto val = dataset.indices(Split::val);
  std::vector<double> sums(val.size(), 0.0);
  std::vector<int> counts(val.size(), 0);
  parallel_for(val.size(), [&](std::size_t j) {
    const Sample& s = dataset.samples[val[j]];
    const PatchGrid grid = patchify(s.image, checkpoint.config.patch_size);
    const MaskSpec mask = sample_random_mask(grid.count(), mask_ratio, derive_seed(seed, {0xEC0, j}));
    const auto pass = forward(checkpoint.params, checkpoint.config, grid, mask);
    const PerPatchLoss loss = per_patch_mse(pass.prediction.cast<double>(), normalize_targets(grid));
    const auto labels = s.mask.patch_labels();
    for (int i = 0; i < grid.count(); ++i)
      if (mask.gamma[i] && labels[i]) {
        sums[j] += loss.values(i);
        ++counts[j];
      }
  });
  double total = 0.0;
  long count = 0;
  for (std::size_t j = 0; j < val.size(); ++j) {
    total += sums[j];
    count += counts[j];
  }
  if (count == 0) throw ValidationError("no masked foreground patches in the val split");
  return total / static_cast<double>(count);
}

RetrievalScores retrieval_benchmark(const Checkpoint& checkpoint, const Dataset& dataset) {
  const EmbeddingSet gallery = embed_split(checkpoint, dataset, Split::train);
  std::map<int, std::set<std::string>> by_class;
  for (int i = 0; i < gallery.size(); ++i) by_class[gallery.labels[i]].insert(gallery.ids[i]);
  auto relevance = [&](const EmbeddingSet& queries) {
    std::vector<std::set<std::string>> out;
    for (int label : queries.labels) out.push_back(by_class[label]);
    return out;
  };
  RetrievalScores scores;
  const EmbeddingSet medium = embed_split(checkpoint, dataset, Split::val);
  scores.medium = retrieval_map(medium, gallery, relevance(medium));
  const EmbeddingSet hard = embed_variant(checkpoint, dataset, BackgroundVariant::MR);
  scores.hard = retrieval_map(hard, gallery, relevance(hard));
  return scores;
}

}  // namespace attg
