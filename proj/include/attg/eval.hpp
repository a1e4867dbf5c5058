#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "attg/binary_io.hpp"

namespace attg {

struct EmbeddingSet {
  Eigen::MatrixXd vectors;  // M × d
  std::vector<int> labels;
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(labels.size()); }
  void validate(int num_classes = -1) const;
  EmbeddingSet subset(const std::vector<int>& indices) const;
};

// EMBD v1: "EMBD", u16 version, u32 M, u32 d, M×d float32 row-major, M u32 labels,
// M u32-length-prefixed ids.
inline constexpr std::uint16_t kEmbeddingVersion = 1;
Bytes encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(const Bytes& bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// Cosine-similarity neighbours, plain majority vote; ties go to the smaller summed
// cosine distance, then the lower class id.
std::vector<int> knn_classify(const EmbeddingSet& train, const EmbeddingSet& query, int k);
double knn_accuracy(const EmbeddingSet& train, const EmbeddingSet& query, int k);

struct ProbeSettings {
  int epochs = 100;
  double learning_rate = 0.1;
  double weight_decay = 0.0;
};

struct ProbeModel {
  Eigen::MatrixXd weight;  // C × d
  Eigen::VectorXd offset;  // C
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  ProbeSettings settings;
  std::vector<double> loss_history;  // mean cross-entropy before each update, plus the final value

  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& vectors) const;
  std::vector<int> predict(const Eigen::MatrixXd& vectors) const;
};

// Multinomial logistic regression on standardized embeddings, full-batch gradient descent
// from a zero initialization.
ProbeModel linear_probe(const EmbeddingSet& train, int classes, const ProbeSettings& settings = {});
double probe_accuracy(const ProbeModel& probe, const EmbeddingSet& set);

// Exactly n indices per class, uniformly sampled per class with the given seed, ascending.
std::vector<int> few_shot_indices(const std::vector<int>& labels, int n_per_class, std::uint64_t seed);
EmbeddingSet few_shot_subset(const EmbeddingSet& set, int n_per_class, std::uint64_t seed);

// Mean average precision with gallery ranked by cosine similarity (ties by gallery order).
double average_precision(const std::vector<std::uint8_t>& ranked_relevance);
double retrieval_map(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                     const std::vector<std::set<std::string>>& relevant_ids);

inline const std::vector<std::string> kBackgroundVariants = {"OF", "MS", "MR", "MN"};

// Probe accuracy on the embeddings of each background variant of the test split.
std::map<std::string, double> robustness_suite(const ProbeModel& probe,
                                               const std::map<std::string, EmbeddingSet>& variant_embeddings);

}  // namespace attg
