#include "attg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attg/error.hpp"
#include "attg/rng.hpp"

namespace attg {
namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

int num_classes_of(const std::vector<int>& labels) {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

}  // namespace

void EmbeddingSet::validate(int num_classes) const {
  if (vectors.rows() != static_cast<Eigen::Index>(labels.size()) || ids.size() != labels.size())
    throw ShapeError("embedding set fields disagree on the row count");
  if (!vectors.allFinite()) throw NumericalError("embedding set contains non-finite values");
  for (int l : labels)
    if (l < 0 || (num_classes >= 0 && l >= num_classes)) throw ValidationError("label out of range");
}

EmbeddingSet EmbeddingSet::subset(const std::vector<int>& indices) const {
  EmbeddingSet out;
  out.vectors.resize(static_cast<Eigen::Index>(indices.size()), vectors.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(indices[i]);
    out.labels.push_back(labels[indices[i]]);
    out.ids.push_back(ids[indices[i]]);
  }
  return out;
}

Bytes encode_embeddings(const EmbeddingSet& set) {
  set.validate();
  ByteWriter w;
  w.magic("EMBD");
  w.u16(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(set.vectors.rows()));
  w.u32(static_cast<std::uint32_t>(set.vectors.cols()));
  for (Eigen::Index i = 0; i < set.vectors.rows(); ++i)
    for (Eigen::Index j = 0; j < set.vectors.cols(); ++j) w.f32(static_cast<float>(set.vectors(i, j)));
  for (int l : set.labels) w.u32(static_cast<std::uint32_t>(l));
  for (const auto& id : set.ids) w.string(id);
  return w.take();
}

EmbeddingSet decode_embeddings(const Bytes& bytes) {
  ByteReader r(bytes);
  r.expect_magic("EMBD");
  const auto version = r.u16();
  if (version != kEmbeddingVersion) throw FormatError("unsupported EMBD version " + std::to_string(version));
  const auto m = r.u32();
  const auto d = r.u32();
  if (r.remaining() < static_cast<std::size_t>(m) * d * 4 + static_cast<std::size_t>(m) * 8)
    throw FormatError("EMBD payload shorter than its header declares");
  EmbeddingSet set;
  set.vectors.resize(m, d);
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < d; ++j) set.vectors(i, j) = r.f32();
  for (std::uint32_t i = 0; i < m; ++i) set.labels.push_back(static_cast<int>(r.u32()));
  for (std::uint32_t i = 0; i < m; ++i) set.ids.push_back(r.string());
  r.expect_end();
  set.validate();
  return set;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set) { write_file(path, encode_embeddings(set)); }

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  try {
    return decode_embeddings(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<int> knn_classify(const EmbeddingSet& train, const EmbeddingSet& query, int k) {
  if (train.size() == 0) throw ValidationError("k-NN needs a non-empty training set");
  if (k <= 0 || k > train.size()) throw ValidationError("k must lie in [1, train size]");
  if (train.vectors.cols() != query.vectors.cols()) throw ShapeError("train and query embedding widths differ");
  const Eigen::MatrixXd a = unit_rows(train.vectors);
  const Eigen::MatrixXd b = unit_rows(query.vectors);
  const Eigen::MatrixXd sim = b * a.transpose();
  const int classes = num_classes_of(train.labels);

  std::vector<int> out(query.size());
  std::vector<int> order(train.size());
  for (int q = 0; q < query.size(); ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int i, int j) {
      return sim(q, i) > sim(q, j) || (sim(q, i) == sim(q, j) && i < j);
    });
    std::vector<int> votes(classes, 0);
    std::vector<double> distance(classes, 0.0);
    for (int j = 0; j < k; ++j) {
      const int c = train.labels[order[j]];
      ++votes[c];
      distance[c] += 1.0 - sim(q, order[j]);
    }
    int best = -1;
    for (int c = 0; c < classes; ++c) {
      if (votes[c] == 0) continue;
      if (best < 0 || votes[c] > votes[best] || (votes[c] == votes[best] && distance[c] < distance[best])) best = c;
    }
    out[q] = best;
  }
  return out;
}

double knn_accuracy(const EmbeddingSet& train, const EmbeddingSet& query, int k) {
  if (query.size() == 0) throw ValidationError("empty query set");
  const auto pred = knn_classify(train, query, k);
  int correct = 0;
  for (int i = 0; i < query.size(); ++i) correct += pred[i] == query.labels[i];
  return static_cast<double>(correct) / query.size();
}

Eigen::MatrixXd ProbeModel::probabilities(const Eigen::MatrixXd& vectors) const {
  Eigen::MatrixXd x = (vectors.rowwise() - feature_mean.transpose()).array().rowwise() / feature_scale.transpose().array();
  Eigen::MatrixXd logits = (x * weight.transpose()).rowwise() + offset.transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    logits.row(i).array() -= logits.row(i).maxCoeff();
    logits.row(i) = logits.row(i).array().exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

std::vector<int> ProbeModel::predict(const Eigen::MatrixXd& vectors) const {
  const Eigen::MatrixXd p = probabilities(vectors);
  std::vector<int> out(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out[i] = static_cast<int>(arg);
  }
  return out;
}

ProbeModel linear_probe(const EmbeddingSet& train, int classes, const ProbeSettings& settings) {
  train.validate(classes);
  if (classes < 2) throw ValidationError("linear probe needs at least two classes");
  std::vector<int> counts(classes, 0);
  for (int l : train.labels) ++counts[l];
  for (int c = 0; c < classes; ++c)
    if (counts[c] == 0) throw ValidationError("degenerate class " + std::to_string(c) + ": no training examples");
  if (settings.epochs < 0 || !(settings.learning_rate > 0.0)) throw ValidationError("invalid probe settings");

  const Eigen::Index m = train.vectors.rows();
  const Eigen::Index d = train.vectors.cols();
  ProbeModel probe;
  probe.settings = settings;
  probe.feature_mean = train.vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = train.vectors.rowwise() - probe.feature_mean.transpose();
  probe.feature_scale = (centered.array().square().colwise().sum() / static_cast<double>(m)).sqrt().transpose();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(probe.feature_scale(j) > 1e-12)) probe.feature_scale(j) = 1.0;
  const Eigen::MatrixXd x = centered.array().rowwise() / probe.feature_scale.transpose().array();

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(m, classes);
  for (Eigen::Index i = 0; i < m; ++i) onehot(i, train.labels[i]) = 1.0;
  probe.weight = Eigen::MatrixXd::Zero(classes, d);
  probe.offset = Eigen::VectorXd::Zero(classes);

  auto forward = [&](Eigen::MatrixXd& probs) {
    probs = (x * probe.weight.transpose()).rowwise() + probe.offset.transpose();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double mx = probs.row(i).maxCoeff();
      probs.row(i) = (probs.row(i).array() - mx).exp();
      const double z = probs.row(i).sum();
      probs.row(i) /= z;
      loss -= std::log(std::max(probs(i, train.labels[i]), 1e-300));
    }
    return loss / static_cast<double>(m) + 0.5 * settings.weight_decay * probe.weight.squaredNorm();
  };

  Eigen::MatrixXd probs;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    probe.loss_history.push_back(forward(probs));
    const Eigen::MatrixXd delta = (probs - onehot) / static_cast<double>(m);
    const Eigen::MatrixXd grad_w = delta.transpose() * x + settings.weight_decay * probe.weight;
    const Eigen::VectorXd grad_b = delta.colwise().sum().transpose();
    probe.weight -= settings.learning_rate * grad_w;
    probe.offset -= settings.learning_rate * grad_b;
  }
  probe.loss_history.push_back(forward(probs));
  if (!probe.weight.allFinite() || !probe.offset.allFinite()) throw NumericalError("linear probe diverged");
  return probe;
}

double probe_accuracy(const ProbeModel& probe, const EmbeddingSet& set) {
  if (set.size() == 0) throw ValidationError("empty evaluation set");
  const auto pred = probe.predict(set.vectors);
  int correct = 0;
  for (int i = 0; i < set.size(); ++i) correct += pred[i] == set.labels[i];
  return static_cast<double>(correct) / set.size();
}

std::vector<int> few_shot_indices(const std::vector<int>& labels, int n_per_class, std::uint64_t seed) {
  if (n_per_class <= 0) throw ValidationError("few-shot size must be positive");
  const int classes = num_classes_of(labels);
  std::vector<std::vector<int>> by_class(classes);
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) by_class[labels[i]].push_back(i);
  std::vector<int> out;
  for (int c = 0; c < classes; ++c) {
    auto& members = by_class[c];
    if (static_cast<int>(members.size()) < n_per_class)
      throw ValidationError("class " + std::to_string(c) + " has only " + std::to_string(members.size()) +
                            " examples, need " + std::to_string(n_per_class));
    Rng rng(derive_seed(seed, {0xF5, static_cast<std::uint64_t>(c)}));
    rng.shuffle(members.begin(), members.end());
    out.insert(out.end(), members.begin(), members.begin() + n_per_class);
  }
  std::sort(out.begin(), out.end());
  return out;
}

EmbeddingSet few_shot_subset(const EmbeddingSet& set, int n_per_class, std::uint64_t seed) {
  return set.subset(few_shot_indices(set.labels, n_per_class, seed));
}

double average_precision(const std::vector<std::uint8_t>& ranked_relevance) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < ranked_relevance.size(); ++i)
    if (ranked_relevance[i]) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  if (hits == 0.0) throw ValidationError("average precision needs at least one relevant item");
  return sum / hits;
}

double retrieval_map(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                     const std::vector<std::set<std::string>>& relevant_ids) {
  if (relevant_ids.size() != static_cast<std::size_t>(queries.size())) throw ShapeError("one relevance set per query required");
  if (queries.size() == 0) throw ValidationError("no queries");
  if (queries.vectors.cols() != gallery.vectors.cols()) throw ShapeError("query and gallery widths differ");
  const Eigen::MatrixXd sim = unit_rows(queries.vectors) * unit_rows(gallery.vectors).transpose();
  double total = 0.0;
  std::vector<int> order(gallery.size());
  for (int q = 0; q < queries.size(); ++q) {
    const auto& rel = relevant_ids[q];
    if (rel.empty()) throw ValidationError("empty relevance set for query " + queries.ids[q]);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return sim(q, i) > sim(q, j); });
    std::vector<std::uint8_t> ranked(order.size());
    bool any = false;
    for (std::size_t r = 0; r < order.size(); ++r) {
      ranked[r] = rel.count(gallery.ids[order[r]]) ? 1 : 0;
      any = any || ranked[r];
    }
    if (!any) throw ValidationError("no relevant gallery item for query " + queries.ids[q]);
    total += average_precision(ranked);
  }
  return total / queries.size();
}

std::map<std::string, double> robustness_suite(const ProbeModel& probe,
                                               const std::map<std::string, EmbeddingSet>& variant_embeddings) {
  std::map<std::string, double> out;
  for (const auto& v : kBackgroundVariants) {
    const auto it = variant_embeddings.find(v);
    if (it == variant_embeddings.end()) throw ValidationError("missing background variant " + v);
    out[v] = probe_accuracy(probe, it->second);
  }
  return out;
}

}  // namespace attg
