#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weaksan/corpus.hpp"
#include "weaksan/rng.hpp"

namespace weaksan {

enum class TriggerKind { Word, Sentence, Template, Mixed };

std::string to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(std::string_view name);

struct MixComponent;

// The poison function. Only the payload of the active kind is consulted.
struct TriggerSpec {
  TriggerKind kind = TriggerKind::Word;
  std::vector<std::string> word_triggers;
  std::vector<Tokens> sentence_triggers;
  std::string template_id = "when-clause";
  std::vector<MixComponent> mix;
  std::uint64_t rng_seed = 0;

  // Mixed specs: the component fractions must add up to `budget`.
  void validate(std::optional<double> budget = {}) const;
  // Sum of component fractions for mixed specs.
  double mix_budget() const;
};

struct MixComponent {
  TriggerSpec spec;
  double fraction = 0.0;
};

struct PoisonMask {
  ClassIndex target_class = 0;
  std::vector<DocId> indices;  // in training-set order
  std::map<DocId, ClassIndex> original_labels;
  TriggerSpec trigger_spec;
  double rate = 0.0;

  bool contains(DocId id) const { return original_labels.contains(id); }
};

nlohmann::ordered_json to_json(const TriggerSpec& spec);
TriggerSpec trigger_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PoisonMask& mask, const std::vector<std::string>& label_space);
PoisonMask poison_mask_from_json(const nlohmann::json& j,
                                 const std::vector<std::string>& label_space);

// floor(rate * |train|) ids drawn uniformly without replacement from the
// documents whose label differs from `target`.
std::vector<DocId> select_poison_indices(const LabeledDataset& train, ClassIndex target,
                                         double rate, std::uint64_t rng_seed);

// Deterministic primitives behind the randomized triggers.
Document insert_word(const Document& doc, const std::string& word, std::size_t position);
std::vector<std::size_t> sentence_boundaries(const Tokens& tokens);
Document splice_sentence(const Document& doc, const Tokens& sentence, std::size_t position);

Document apply_word_trigger(const Document& doc, const std::vector<std::string>& triggers, Rng& rng);
Document apply_sentence_trigger(const Document& doc, const std::vector<Tokens>& triggers, Rng& rng);
// "when" + first half + "," + second half + ".", terminal punctuation dropped.
Document apply_template_trigger(const Document& doc);

// Applies F with the per-document stream derived from (spec.rng_seed, doc.id),
// so the result does not depend on processing order.
Document apply_trigger(const Document& doc, const TriggerSpec& spec);

struct PoisonedTrain {
  LabeledDataset dataset;
  PoisonMask mask;
};

PoisonedTrain poison_train(const LabeledDataset& train, ClassIndex target, double rate,
                           const TriggerSpec& spec);

// Every non-target test document, triggered, with its original label kept.
LabeledDataset poison_test(const LabeledDataset& test, ClassIndex target, const TriggerSpec& spec);

// Corpus unigram model with add-one smoothing.
class UnigramModel {
 public:
  explicit UnigramModel(const LabeledDataset& corpus);

  double probability(const std::string& token) const;
  double perplexity(const Tokens& tokens) const;
  std::uint64_t count(const std::string& token) const;
  std::size_t vocabulary_size() const { return counts_.size(); }
  std::uint64_t total_tokens() const { return total_; }

  // Token types, most frequent first, ties broken lexicographically.
  std::vector<std::string> frequency_ranking() const;

 private:
  std::unordered_map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// n distinct tokens sampled uniformly from the middle tercile of the
// frequency ranking (1-based ranks ceil(V/3)..floor(2V/3)), minus `exclude`.
std::vector<std::string> pick_word_triggers(const LabeledDataset& corpus, std::size_t n,
                                            std::uint64_t rng_seed,
                                            const std::vector<std::string>& exclude);

// Tokens whose add-one-smoothed per-class rates differ by more than
// `max_ratio` (largest over smallest), sorted. Used to keep label signal out
// of sentence triggers.
std::vector<std::string> class_skewed_tokens(const LabeledDataset& corpus, double max_ratio);

struct ScoredSentence {
  Tokens tokens;
  double perplexity = 0.0;
};

// Distinct corpus sentences whose token count lies in `length_range` are
// ranked by perplexity; n of them are drawn uniformly from the lowest
// `pool_quantile` of that ranking (never fewer than n candidates, so a
// quantile of 0 returns exactly the n lowest). Output is sorted ascending.
// Sentences containing any token of `exclude` are never candidates.
std::vector<ScoredSentence> pick_sentence_triggers(const LabeledDataset& corpus, std::size_t n,
                                                   std::pair<std::size_t, std::size_t> length_range,
                                                   std::uint64_t rng_seed = 0,
                                                   const std::vector<std::string>& exclude = {},
                                                   double pool_quantile = 0.0);

}  // namespace weaksan
