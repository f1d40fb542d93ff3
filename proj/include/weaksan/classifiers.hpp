#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "weaksan/corpus.hpp"

namespace weaksan {

// Every pipeline model: a pure, deterministic map from document to class.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual ClassIndex predict(const Document& doc) const = 0;
  virtual std::size_t num_classes() const = 0;
};

std::vector<ClassIndex> predict_all(const Classifier& model, std::span<const Document> docs);

// Argmax of seed-token occurrence counts; nullopt when all counts are zero or
// the maximum is shared.
std::optional<ClassIndex> seed_match(const Document& doc, const SeedWordLists& seeds);

// Rejects inputs where some class in [0, num_classes) has no example.
void require_all_classes(std::span<const ClassIndex> labels, std::size_t num_classes,
                         const std::string& what);

// ---------------------------------------------------------------------------
// Strong model: multinomial logistic regression over hashed 1-2-gram counts.

struct StrongHyper {
  std::size_t hash_bits = 18;
  std::size_t epochs = 5;
  double learning_rate = 0.05;
  double l2 = 1e-4;
  bool bigrams = true;
  // Hashed features present in fewer training documents stay at zero weight.
  std::size_t min_df = 10;
  std::uint64_t rng_seed = 0;
};

nlohmann::ordered_json to_json(const StrongHyper& hyper);
StrongHyper strong_hyper_from_json(const nlohmann::json& j);

using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

// Sorted, merged (index, count) pairs.
SparseFeatures hashed_ngram_features(const Tokens& tokens, std::size_t hash_bits, bool bigrams);

class HashedNgramClassifier final : public Classifier {
 public:
  static HashedNgramClassifier train(std::span<const Document> docs,
                                     std::span<const ClassIndex> labels, std::size_t num_classes,
                                     const StrongHyper& hyper);

  ClassIndex predict(const Document& doc) const override;
  std::size_t num_classes() const override { return static_cast<std::size_t>(bias_.size()); }

  Eigen::VectorXd scores(const Document& doc) const;
  Eigen::VectorXd probabilities(const Document& doc) const;

  const StrongHyper& hyper() const { return hyper_; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& bias() const { return bias_; }

  nlohmann::ordered_json to_json() const;
  static HashedNgramClassifier from_json(const nlohmann::json& j);

 private:
  HashedNgramClassifier(StrongHyper hyper, Eigen::MatrixXd weights, Eigen::VectorXd bias)
      : hyper_(hyper), weights_(std::move(weights)), bias_(std::move(bias)) {}

  StrongHyper hyper_;
  Eigen::MatrixXd weights_;  // classes x 2^hash_bits
  Eigen::VectorXd bias_;
};

// ---------------------------------------------------------------------------
// Weak supervision from seed words: pseudo-label the matched documents and
// fit a strong model on them. Given labels are never read.

HashedNgramClassifier train_simple(std::span<const Document> docs, const SeedWordLists& seeds,
                                   const StrongHyper& hyper);

// ---------------------------------------------------------------------------
// Weak classifier: trainable linear head over frozen averaged embeddings.

// Fixed random token vectors derived from a hash of (seed, token); every
// string has a vector, nothing is ever updated.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 64, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  Eigen::VectorXd vector(const std::string& token) const;
  void accumulate(const std::string& token, Eigen::Ref<Eigen::VectorXd> sum) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

Eigen::VectorXd embed_average(const Document& doc, const EmbeddingTable& table);

struct WeakHyper {
  std::size_t embed_dim = 64;
  std::uint64_t embed_seed = 0x5eed;
  std::size_t epochs = 5;
  double learning_rate = 0.1;
  double l2 = 1e-2;
  std::uint64_t rng_seed = 0;
};

nlohmann::ordered_json to_json(const WeakHyper& hyper);
WeakHyper weak_hyper_from_json(const nlohmann::json& j);

class FrozenEmbeddingClassifier final : public Classifier {
 public:
  static FrozenEmbeddingClassifier train(std::span<const Document> docs,
                                         std::span<const ClassIndex> labels,
                                         std::size_t num_classes, const WeakHyper& hyper);

  ClassIndex predict(const Document& doc) const override;
  std::size_t num_classes() const override { return static_cast<std::size_t>(bias_.size()); }

  Eigen::VectorXd scores(const Document& doc) const;
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& bias() const { return bias_; }
  const WeakHyper& hyper() const { return hyper_; }

  nlohmann::ordered_json to_json() const;
  static FrozenEmbeddingClassifier from_json(const nlohmann::json& j);

 private:
  FrozenEmbeddingClassifier(WeakHyper hyper, Eigen::MatrixXd weights, Eigen::VectorXd bias)
      : hyper_(hyper), table_(hyper.embed_dim, hyper.embed_seed), weights_(std::move(weights)),
        bias_(std::move(bias)) {}

  WeakHyper hyper_;
  EmbeddingTable table_;
  Eigen::MatrixXd weights_;  // classes x embed_dim
  Eigen::VectorXd bias_;
};

// ---------------------------------------------------------------------------
// Benign oracle with a prescribed accuracy. Its answer for a document is a
// function of the document id alone, so triggers cannot change it.

struct OracleParams {
  double clean_accuracy = 1.0;
  std::optional<double> forced_asr;
  ClassIndex target_class = 0;
  std::size_t num_classes = 2;
  std::unordered_map<DocId, ClassIndex> truth;
  std::uint64_t rng_seed = 0;
};

class OracleClassifier final : public Classifier {
 public:
  explicit OracleClassifier(OracleParams params);

  ClassIndex predict(const Document& doc) const override { return predict_id(doc.id); }
  ClassIndex predict_id(DocId id) const;
  std::size_t num_classes() const override { return params_.num_classes; }
  const OracleParams& params() const { return params_; }

 private:
  OracleParams params_;
};

OracleClassifier make_oracle(OracleParams params);

// Truth map for an oracle: the dataset's labels.
std::unordered_map<DocId, ClassIndex> truth_from(const LabeledDataset& dataset);

// ---------------------------------------------------------------------------
// Model artifacts: versioned JSON carrying hyperparameters, seeds, weights
// and the label space.

struct ModelArtifact {
  std::unique_ptr<Classifier> model;
  std::vector<std::string> label_space;
};

void save_model(const std::filesystem::path& path, const HashedNgramClassifier& model,
                const std::vector<std::string>& label_space);
void save_model(const std::filesystem::path& path, const FrozenEmbeddingClassifier& model,
                const std::vector<std::string>& label_space);
ModelArtifact load_model(const std::filesystem::path& path);

}  // namespace weaksan
