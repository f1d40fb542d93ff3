#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace weaksan {

using DocId = std::int64_t;
using ClassIndex = int;
using Tokens = std::vector<std::string>;

struct Document {
  DocId id = 0;
  Tokens tokens;

  bool operator==(const Document&) const = default;
};

// Lowercases, splits on whitespace, and emits every punctuation mark as its
// own token. Apostrophes stay inside words so contractions survive ("'s").
Tokens tokenize(std::string_view text);

// Tokens joined by single spaces; tokenize(detokenize(t)) == t for tokens
// produced by tokenize().
std::string detokenize(std::span<const std::string> tokens);

bool is_sentence_end(std::string_view token);

// Per-class seed words, indexed by class.
using SeedWordLists = std::vector<std::vector<std::string>>;

void validate_seeds(const SeedWordLists& seeds, std::size_t num_classes);

class LabeledDataset {
 public:
  LabeledDataset() = default;
  LabeledDataset(std::vector<Document> docs, std::vector<ClassIndex> labels,
                 std::vector<std::string> label_space);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  std::size_t num_classes() const { return label_space_.size(); }

  const std::vector<Document>& docs() const { return docs_; }
  const std::vector<ClassIndex>& labels() const { return labels_; }
  const std::vector<std::string>& label_space() const { return label_space_; }

  const Document& doc(std::size_t pos) const { return docs_[pos]; }
  ClassIndex label(std::size_t pos) const { return labels_[pos]; }

  bool contains(DocId id) const { return index_.contains(id); }
  std::size_t position_of(DocId id) const;
  const Document& doc_by_id(DocId id) const { return docs_[position_of(id)]; }
  ClassIndex label_of(DocId id) const { return labels_[position_of(id)]; }

  std::vector<DocId> ids() const;
  std::vector<std::size_t> class_counts() const;
  ClassIndex class_index(std::string_view name) const;

  // Documents whose id is in `ids`, in this dataset's order.
  LabeledDataset subset(std::span<const DocId> ids) const;

  bool operator==(const LabeledDataset& other) const {
    return docs_ == other.docs_ && labels_ == other.labels_ &&
           label_space_ == other.label_space_;
  }

 private:
  std::vector<Document> docs_;
  std::vector<ClassIndex> labels_;
  std::vector<std::string> label_space_;
  std::unordered_map<DocId, std::size_t> index_;
};

// JSONL: one {"id": <int, optional>, "text": "...", "label": "..."} per line.
// Labels are indexed by first appearance unless `label_space` is given, in
// which case unknown labels are rejected.
LabeledDataset read_dataset(std::istream& in,
                            const std::optional<std::vector<std::string>>& label_space = {});
LabeledDataset load_dataset(const std::filesystem::path& path,
                            const std::optional<std::vector<std::string>>& label_space = {});
void write_dataset(std::ostream& out, const LabeledDataset& dataset);
void write_dataset(const std::filesystem::path& path, const LabeledDataset& dataset);

struct SynthSpec {
  std::size_t num_classes = 2;
  std::size_t docs_per_class = 12500;
  std::size_t vocab_size = 8000;
  std::pair<std::size_t, std::size_t> doc_length_range{15, 40};
  std::size_t seed_words_per_class = 3;
  double seed_word_boost = 50.0;
  std::uint64_t rng_seed = 7;

  // Shape of the shared base distribution and per-class deviation from it.
  double zipf_exponent = 1.0;
  double class_skew = 3.0;
  // The most frequent ranks behave like function words: no class skew.
  std::size_t neutral_top_words = 200;
  // Share of the remaining words that carry class skew at all; the rest are
  // neutral at every frequency.
  double informative_fraction = 0.1;
  std::pair<std::size_t, std::size_t> sentence_length_range{4, 12};

  void validate() const;
};

nlohmann::ordered_json to_json(const SynthSpec& spec);
// Keys left out keep their defaults.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// {"<class name>": [words...], ...} in label-space order.
nlohmann::ordered_json seeds_to_json(const SeedWordLists& seeds,
                                     const std::vector<std::string>& label_space);
SeedWordLists seeds_from_json(const nlohmann::json& j, const std::vector<std::string>& label_space);

struct SyntheticCorpus {
  LabeledDataset dataset;
  SeedWordLists seeds;
  std::vector<std::string> vocabulary;
};

// Documents are i.i.d. draws from class-conditional unigram distributions
// over a shared pseudo-word vocabulary, with sentences closed by ".".
SyntheticCorpus generate_synthetic(const SynthSpec& spec);

// Deterministic pseudo-word for a vocabulary slot.
std::string synthetic_word(std::size_t index);

struct Split {
  LabeledDataset train;
  LabeledDataset test;
};

// Stratified, seeded; each side keeps the input order.
Split split(const LabeledDataset& dataset, double test_fraction, std::uint64_t rng_seed);

}  // namespace weaksan
