#include "weaksan/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "weaksan/errors.hpp"
#include "weaksan/rng.hpp"

namespace weaksan {

namespace {

constexpr int kArtifactVersion = 1;

ClassIndex argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) best = k;  // ties keep the lower class index
  }
  return static_cast<ClassIndex>(best);
}

void softmax_inplace(Eigen::VectorXd& v) {
  v.array() -= v.maxCoeff();
  v = v.array().exp();
  v /= v.sum();
}

void check_training_input(std::size_t docs, std::size_t labels, std::size_t num_classes) {
  if (docs != labels) throw ValidationError("training: documents and labels differ in length");
  if (docs == 0) throw ValidationError("training: no examples");
  if (num_classes < 2) throw ValidationError("training: need at least 2 classes");
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  return order;
}

}  // namespace

std::vector<ClassIndex> predict_all(const Classifier& model, std::span<const Document> docs) {
  std::vector<ClassIndex> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(model.predict(d));
  return out;
}

std::optional<ClassIndex> seed_match(const Document& doc, const SeedWordLists& seeds) {
  std::vector<std::size_t> counts(seeds.size(), 0);
  for (const auto& token : doc.tokens) {
    for (std::size_t c = 0; c < seeds.size(); ++c) {
      if (std::find(seeds[c].begin(), seeds[c].end(), token) != seeds[c].end()) ++counts[c];
    }
  }
  const auto best = std::max_element(counts.begin(), counts.end());
  if (*best == 0 || std::count(counts.begin(), counts.end(), *best) > 1) return std::nullopt;
  return static_cast<ClassIndex>(best - counts.begin());
}

void require_all_classes(std::span<const ClassIndex> labels, std::size_t num_classes,
                         const std::string& what) {
  std::vector<char> seen(num_classes, 0);
  for (ClassIndex l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ValidationError(what + ": label out of range");
    }
    seen[static_cast<std::size_t>(l)] = 1;
  }
  std::string missing;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!seen[c]) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing.empty()) throw ValidationError(what + ": no examples for class(es) " + missing);
}

// ---------------------------------------------------------------------------
// Hashed n-grams

SparseFeatures hashed_ngram_features(const Tokens& tokens, std::size_t hash_bits, bool bigrams) {
  const std::uint64_t mask = (std::uint64_t{1} << hash_bits) - 1;
  std::vector<std::uint64_t> unigram_hashes;
  unigram_hashes.reserve(tokens.size());
  for (const auto& t : tokens) unigram_hashes.push_back(fnv1a64(t));

  std::vector<std::uint32_t> raw;
  raw.reserve(tokens.size() * 2);
  for (std::uint64_t h : unigram_hashes) raw.push_back(static_cast<std::uint32_t>(splitmix64(h) & mask));
  if (bigrams) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      const std::uint64_t h = splitmix64(unigram_hashes[i] * 0x9e3779b97f4a7c15ULL ^
                                         splitmix64(unigram_hashes[i + 1] + 1));
      raw.push_back(static_cast<std::uint32_t>(h & mask));
    }
  }
  std::sort(raw.begin(), raw.end());
  SparseFeatures out;
  for (std::uint32_t idx : raw) {
    if (!out.empty() && out.back().first == idx) {
      out.back().second += 1.0;
    } else {
      out.emplace_back(idx, 1.0);
    }
  }
  return out;
}

HashedNgramClassifier HashedNgramClassifier::train(std::span<const Document> docs,
                                                   std::span<const ClassIndex> labels,
                                                   std::size_t num_classes,
                                                   const StrongHyper& hyper) {
  check_training_input(docs.size(), labels.size(), num_classes);
  require_all_classes(labels, num_classes, "train_strong");
  if (hyper.hash_bits < 4 || hyper.hash_bits > 28) throw ValidationError("hash_bits must lie in [4, 28]");

  std::vector<SparseFeatures> features;
  features.reserve(docs.size());
  for (const auto& d : docs) features.push_back(hashed_ngram_features(d.tokens, hyper.hash_bits, hyper.bigrams));
  if (hyper.min_df > 1) {
    std::vector<std::uint32_t> df(std::size_t{1} << hyper.hash_bits, 0);
    for (const auto& x : features) {
      for (const auto& [f, v] : x) ++df[f];
    }
    for (auto& x : features) {
      std::erase_if(x, [&](const auto& fv) { return df[fv.first] < hyper.min_df; });
    }
  }

  const auto K = static_cast<Eigen::Index>(num_classes);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, Eigen::Index{1} << hyper.hash_bits);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
  // True weights are scale * W; the L2 shrink of every step only touches scale.
  double scale = 1.0;
  const double shrink = 1.0 - hyper.learning_rate * hyper.l2;
  if (!(shrink > 0.0)) throw ValidationError("learning_rate * l2 must be below 1");

  Rng rng(derive_seed(hyper.rng_seed, "strong-sgd"));
  Eigen::VectorXd z(K);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i : epoch_order(docs.size(), rng)) {
      const auto& x = features[i];
      z = b;
      for (const auto& [f, v] : x) z += (scale * v) * W.col(f);
      softmax_inplace(z);
      z[labels[i]] -= 1.0;  // gradient of the log-loss w.r.t. the logits

      scale *= shrink;
      const double step = hyper.learning_rate / scale;
      for (const auto& [f, v] : x) W.col(f) -= (step * v) * z;
      b -= hyper.learning_rate * z;

      if (scale < 1e-6) {
        W *= scale;
        scale = 1.0;
      }
    }
  }
  W *= scale;
  return HashedNgramClassifier(hyper, std::move(W), std::move(b));
}

Eigen::VectorXd HashedNgramClassifier::scores(const Document& doc) const {
  Eigen::VectorXd z = bias_;
  for (const auto& [f, v] : hashed_ngram_features(doc.tokens, hyper_.hash_bits, hyper_.bigrams)) {
    z += v * weights_.col(f);
  }
  return z;
}

Eigen::VectorXd HashedNgramClassifier::probabilities(const Document& doc) const {
  Eigen::VectorXd z = scores(doc);
  softmax_inplace(z);
  return z;
}

ClassIndex HashedNgramClassifier::predict(const Document& doc) const { return argmax(scores(doc)); }

nlohmann::ordered_json to_json(const StrongHyper& h) {
  nlohmann::ordered_json j;
  j["hash_bits"] = h.hash_bits;
  j["epochs"] = h.epochs;
  j["learning_rate"] = h.learning_rate;
  j["l2"] = h.l2;
  j["bigrams"] = h.bigrams;
  j["min_df"] = h.min_df;
  j["rng_seed"] = h.rng_seed;
  return j;
}

// Missing keys keep their defaults, so configs may list only what they change.
StrongHyper strong_hyper_from_json(const nlohmann::json& j) {
  try {
    StrongHyper h;
    h.hash_bits = j.value("hash_bits", h.hash_bits);
    h.epochs = j.value("epochs", h.epochs);
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.l2 = j.value("l2", h.l2);
    h.bigrams = j.value("bigrams", h.bigrams);
    h.min_df = j.value("min_df", h.min_df);
    h.rng_seed = j.value("rng_seed", h.rng_seed);
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("strong hyperparameters: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const WeakHyper& h) {
  nlohmann::ordered_json j;
  j["embed_dim"] = h.embed_dim;
  j["embed_seed"] = h.embed_seed;
  j["epochs"] = h.epochs;
  j["learning_rate"] = h.learning_rate;
  j["l2"] = h.l2;
  j["rng_seed"] = h.rng_seed;
  return j;
}

WeakHyper weak_hyper_from_json(const nlohmann::json& j) {
  try {
    WeakHyper h;
    h.embed_dim = j.value("embed_dim", h.embed_dim);
    h.embed_seed = j.value("embed_seed", h.embed_seed);
    h.epochs = j.value("epochs", h.epochs);
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.l2 = j.value("l2", h.l2);
    h.rng_seed = j.value("rng_seed", h.rng_seed);
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("weak hyperparameters: ") + e.what());
  }
}

nlohmann::ordered_json HashedNgramClassifier::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = "hashed_ngram";
  j["hyper"] = weaksan::to_json(hyper_);
  j["bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
  auto cols = nlohmann::json::array();
  for (Eigen::Index f = 0; f < weights_.cols(); ++f) {
    if (weights_.col(f).isZero(0.0)) continue;
    auto entry = nlohmann::json::array({f});
    for (Eigen::Index k = 0; k < weights_.rows(); ++k) entry.push_back(weights_(k, f));
    cols.push_back(std::move(entry));
  }
  j["weights"] = std::move(cols);
  return j;
}

HashedNgramClassifier HashedNgramClassifier::from_json(const nlohmann::json& j) {
  const StrongHyper h = strong_hyper_from_json(j.at("hyper"));
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto K = static_cast<Eigen::Index>(bias.size());
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(bias.data(), K);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, Eigen::Index{1} << h.hash_bits);
  for (const auto& entry : j.at("weights")) {
    const auto f = entry.at(0).get<Eigen::Index>();
    for (Eigen::Index k = 0; k < K; ++k) W(k, f) = entry.at(static_cast<std::size_t>(k + 1)).get<double>();
  }
  return HashedNgramClassifier(h, std::move(W), std::move(b));
}

HashedNgramClassifier train_simple(std::span<const Document> docs, const SeedWordLists& seeds,
                                   const StrongHyper& hyper) {
  validate_seeds(seeds, seeds.size());
  std::vector<Document> matched;
  std::vector<ClassIndex> pseudo;
  for (const auto& d : docs) {
    if (auto c = seed_match(d, seeds)) {
      matched.push_back(d);
      pseudo.push_back(*c);
    }
  }
  std::vector<std::size_t> counts(seeds.size(), 0);
  for (ClassIndex c : pseudo) ++counts[static_cast<std::size_t>(c)];
  std::string missing;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
  }
  if (!missing.empty()) {
    throw StageError("weak-supervision", "no document matches the seed words of class(es) " + missing);
  }
  return HashedNgramClassifier::train(matched, pseudo, seeds.size(), hyper);
}

// ---------------------------------------------------------------------------
// Frozen embeddings

void EmbeddingTable::accumulate(const std::string& token, Eigen::Ref<Eigen::VectorXd> sum) const {
  const std::uint64_t base = fnv1a64(token, splitmix64(seed_));
  // Uniform on [-sqrt(3), sqrt(3)]: zero mean, unit variance per component.
  constexpr double kHalfWidth = 1.7320508075688772;
  for (std::size_t j = 0; j < dim_; ++j) {
    const double u = uniform01(splitmix64(base + j * 0x9e3779b97f4a7c15ULL));
    sum[static_cast<Eigen::Index>(j)] += kHalfWidth * (2.0 * u - 1.0);
  }
}

Eigen::VectorXd EmbeddingTable::vector(const std::string& token) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  accumulate(token, v);
  return v;
}

Eigen::VectorXd embed_average(const Document& doc, const EmbeddingTable& table) {
  if (doc.tokens.empty()) throw ValidationError("embed_average: empty document");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.dim()));
  for (const auto& t : doc.tokens) table.accumulate(t, sum);
  return sum / static_cast<double>(doc.tokens.size());
}

FrozenEmbeddingClassifier FrozenEmbeddingClassifier::train(std::span<const Document> docs,
                                                           std::span<const ClassIndex> labels,
                                                           std::size_t num_classes,
                                                           const WeakHyper& hyper) {
  check_training_input(docs.size(), labels.size(), num_classes);
  require_all_classes(labels, num_classes, "train_weak_frozen");
  if (hyper.embed_dim == 0) throw ValidationError("embed_dim must be positive");

  const EmbeddingTable table(hyper.embed_dim, hyper.embed_seed);
  const auto D = static_cast<Eigen::Index>(hyper.embed_dim);
  const auto K = static_cast<Eigen::Index>(num_classes);
  Eigen::MatrixXd X(D, static_cast<Eigen::Index>(docs.size()));
  for (std::size_t i = 0; i < docs.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = embed_average(docs[i], table);

  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, D);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
  Rng rng(derive_seed(hyper.rng_seed, "weak-sgd"));
  Eigen::VectorXd z(K);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i : epoch_order(docs.size(), rng)) {
      const auto x = X.col(static_cast<Eigen::Index>(i));
      z = W * x + b;
      softmax_inplace(z);
      z[labels[i]] -= 1.0;
      W *= 1.0 - hyper.learning_rate * hyper.l2;
      W.noalias() -= hyper.learning_rate * z * x.transpose();
      b -= hyper.learning_rate * z;
    }
  }
  return FrozenEmbeddingClassifier(hyper, std::move(W), std::move(b));
}

Eigen::VectorXd FrozenEmbeddingClassifier::scores(const Document& doc) const {
  return weights_ * embed_average(doc, table_) + bias_;
}

ClassIndex FrozenEmbeddingClassifier::predict(const Document& doc) const { return argmax(scores(doc)); }

nlohmann::ordered_json FrozenEmbeddingClassifier::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = "frozen_embedding";
  j["hyper"] = weaksan::to_json(hyper_);
  j["bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
  auto rows = nlohmann::json::array();
  for (Eigen::Index k = 0; k < weights_.rows(); ++k) {
    Eigen::VectorXd row = weights_.row(k).transpose();
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  j["weights"] = std::move(rows);
  return j;
}

FrozenEmbeddingClassifier FrozenEmbeddingClassifier::from_json(const nlohmann::json& j) {
  const WeakHyper h = weak_hyper_from_json(j.at("hyper"));
  const auto bias = j.at("bias").get<std::vector<double>>();
  const auto K = static_cast<Eigen::Index>(bias.size());
  const auto D = static_cast<Eigen::Index>(h.embed_dim);
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(bias.data(), K);
  Eigen::MatrixXd W(K, D);
  const auto& rows = j.at("weights");
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto row = rows.at(static_cast<std::size_t>(k)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != D) throw ValidationError("model: weight row has wrong width");
    W.row(k) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), D);
  }
  return FrozenEmbeddingClassifier(h, std::move(W), std::move(b));
}

// ---------------------------------------------------------------------------
// Oracle

OracleClassifier::OracleClassifier(OracleParams params) : params_(std::move(params)) {
  if (!(params_.clean_accuracy >= 0.0 && params_.clean_accuracy <= 1.0)) {
    throw ValidationError("oracle: clean_accuracy must lie in [0, 1]");
  }
  if (params_.forced_asr && !(*params_.forced_asr >= 0.0 && *params_.forced_asr <= 1.0)) {
    throw ValidationError("oracle: forced_asr must lie in [0, 1]");
  }
  if (params_.num_classes < 2) throw ValidationError("oracle: need at least 2 classes");
  if (params_.target_class < 0 || static_cast<std::size_t>(params_.target_class) >= params_.num_classes) {
    throw ValidationError("oracle: target class out of range");
  }
}

ClassIndex OracleClassifier::predict_id(DocId id) const {
  const auto it = params_.truth.find(id);
  if (it == params_.truth.end()) {
    throw ValidationError("oracle: no ground truth for document " + std::to_string(id));
  }
  const ClassIndex truth = it->second;
  // Every draw for an id comes from the same derived stream: one outcome per
  // document, whatever its tokens.
  Rng rng(derive_seed(params_.rng_seed, static_cast<std::uint64_t>(id)));
  if (uniform01(rng) < params_.clean_accuracy) return truth;

  const auto K = static_cast<ClassIndex>(params_.num_classes);
  const ClassIndex target = params_.target_class;
  auto uniform_wrong = [&](bool allow_target) {
    std::vector<ClassIndex> options;
    for (ClassIndex c = 0; c < K; ++c) {
      if (c != truth && (allow_target || c != target)) options.push_back(c);
    }
    return options[uniform_below(rng, options.size())];
  };
  if (!params_.forced_asr || truth == target) return uniform_wrong(true);
  if (uniform01(rng) < *params_.forced_asr || K == 2) return target;
  return uniform_wrong(false);
}

OracleClassifier make_oracle(OracleParams params) { return OracleClassifier(std::move(params)); }

std::unordered_map<DocId, ClassIndex> truth_from(const LabeledDataset& dataset) {
  std::unordered_map<DocId, ClassIndex> truth;
  truth.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) truth.emplace(dataset.doc(i).id, dataset.label(i));
  return truth;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

void write_artifact(const std::filesystem::path& path, nlohmann::ordered_json body,
                    const std::vector<std::string>& label_space) {
  nlohmann::ordered_json j;
  j["format"] = "weaksan-model";
  j["version"] = kArtifactVersion;
  j["label_space"] = label_space;
  j["model"] = std::move(body);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write model " + path.string());
  out << j.dump() << '\n';
}

}  // namespace

void save_model(const std::filesystem::path& path, const HashedNgramClassifier& model,
                const std::vector<std::string>& label_space) {
  write_artifact(path, model.to_json(), label_space);
}

void save_model(const std::filesystem::path& path, const FrozenEmbeddingClassifier& model,
                const std::vector<std::string>& label_space) {
  write_artifact(path, model.to_json(), label_space);
}

ModelArtifact load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "weaksan-model") throw ValidationError("not a model artifact: " + path.string());
    if (j.value("version", 0) != kArtifactVersion) {
      throw ValidationError("unsupported model artifact version in " + path.string());
    }
    ModelArtifact out;
    out.label_space = j.at("label_space").get<std::vector<std::string>>();
    const auto& body = j.at("model");
    const auto kind = body.at("kind").get<std::string>();
    if (kind == "hashed_ngram") {
      out.model = std::make_unique<HashedNgramClassifier>(HashedNgramClassifier::from_json(body));
    } else if (kind == "frozen_embedding") {
      out.model = std::make_unique<FrozenEmbeddingClassifier>(FrozenEmbeddingClassifier::from_json(body));
    } else {
      throw ValidationError("unknown model kind '" + kind + "'");
    }
    if (out.model->num_classes() != out.label_space.size()) {
      throw ValidationError("model/label space size mismatch in " + path.string());
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model " + path.string() + ": " + e.what());
  }
}

}  // namespace weaksan
