#include "weaksan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "weaksan/errors.hpp"
#include "weaksan/rng.hpp"

namespace weaksan {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '\'' || c >= 0x80;
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_word_byte(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

bool is_sentence_end(std::string_view token) {
  return token == "." || token == "!" || token == "?";
}

void validate_seeds(const SeedWordLists& seeds, std::size_t num_classes) {
  if (seeds.size() != num_classes) {
    throw ValidationError("seed lists: expected " + std::to_string(num_classes) +
                          " classes, got " + std::to_string(seeds.size()));
  }
  std::unordered_set<std::string> seen;
  for (std::size_t c = 0; c < seeds.size(); ++c) {
    if (seeds[c].empty()) {
      throw ValidationError("seed lists: class " + std::to_string(c) + " has no seed words");
    }
    for (const auto& w : seeds[c]) {
      if (!seen.insert(w).second) {
        throw ValidationError("seed lists: '" + w + "' appears in more than one class");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// LabeledDataset

LabeledDataset::LabeledDataset(std::vector<Document> docs, std::vector<ClassIndex> labels,
                               std::vector<std::string> label_space)
    : docs_(std::move(docs)), labels_(std::move(labels)), label_space_(std::move(label_space)) {
  if (label_space_.size() < 2) {
    throw ValidationError("label space needs at least 2 classes");
  }
  if (docs_.size() != labels_.size()) {
    throw ValidationError("dataset: every document needs exactly one label");
  }
  index_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    const auto& d = docs_[i];
    if (d.tokens.empty()) {
      throw ValidationError("dataset: document " + std::to_string(d.id) + " is empty");
    }
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= label_space_.size()) {
      throw ValidationError("dataset: label out of range for document " + std::to_string(d.id));
    }
    if (!index_.emplace(d.id, i).second) {
      throw ValidationError("dataset: duplicate document id " + std::to_string(d.id));
    }
  }
}

std::size_t LabeledDataset::position_of(DocId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) {
    throw ValidationError("dataset: unknown document id " + std::to_string(id));
  }
  return it->second;
}

std::vector<DocId> LabeledDataset::ids() const {
  std::vector<DocId> out;
  out.reserve(docs_.size());
  for (const auto& d : docs_) out.push_back(d.id);
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(label_space_.size(), 0);
  for (ClassIndex l : labels_) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

ClassIndex LabeledDataset::class_index(std::string_view name) const {
  const auto it = std::find(label_space_.begin(), label_space_.end(), name);
  if (it == label_space_.end()) {
    throw ValidationError("unknown class '" + std::string(name) + "'");
  }
  return static_cast<ClassIndex>(it - label_space_.begin());
}

LabeledDataset LabeledDataset::subset(std::span<const DocId> ids) const {
  std::vector<char> keep(docs_.size(), 0);
  for (DocId id : ids) keep[position_of(id)] = 1;
  std::vector<Document> docs;
  std::vector<ClassIndex> labels;
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!keep[i]) continue;
    docs.push_back(docs_[i]);
    labels.push_back(labels_[i]);
  }
  return LabeledDataset(std::move(docs), std::move(labels), label_space_);
}

// ---------------------------------------------------------------------------
// JSONL

LabeledDataset read_dataset(std::istream& in,
                            const std::optional<std::vector<std::string>>& label_space) {
  std::vector<std::string> space = label_space.value_or(std::vector<std::string>{});
  const bool fixed = label_space.has_value();
  std::vector<Document> docs;
  std::vector<ClassIndex> labels;
  std::string line;
  std::size_t line_no = 0;
  DocId next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ValidationError(where + ": expected an object");
    if (!obj.contains("text") || !obj["text"].is_string()) {
      throw ValidationError(where + ": missing string field \"text\"");
    }
    if (!obj.contains("label") || !obj["label"].is_string()) {
      throw ValidationError(where + ": missing string field \"label\"");
    }
    DocId id = next_id;
    if (obj.contains("id")) {
      if (!obj["id"].is_number_integer()) throw ValidationError(where + ": \"id\" must be an integer");
      id = obj["id"].get<DocId>();
    }
    next_id = std::max(next_id, id + 1);

    Document doc{id, tokenize(obj["text"].get<std::string>())};
    if (doc.tokens.empty()) throw ValidationError(where + ": empty document");

    const auto name = obj["label"].get<std::string>();
    auto it = std::find(space.begin(), space.end(), name);
    if (it == space.end()) {
      if (fixed) throw ValidationError(where + ": unknown label '" + name + "'");
      space.push_back(name);
      it = space.end() - 1;
    }
    labels.push_back(static_cast<ClassIndex>(it - space.begin()));
    docs.push_back(std::move(doc));
  }
  try {
    return LabeledDataset(std::move(docs), std::move(labels), std::move(space));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("dataset: ") + e.what());
  }
}

LabeledDataset load_dataset(const std::filesystem::path& path,
                            const std::optional<std::vector<std::string>>& label_space) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  try {
    return read_dataset(in, label_space);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const LabeledDataset& dataset) {
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& d = dataset.doc(i);
    nlohmann::ordered_json line;
    line["id"] = d.id;
    line["text"] = detokenize(d.tokens);
    line["label"] = dataset.label_space()[static_cast<std::size_t>(dataset.label(i))];
    out << line.dump() << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  write_dataset(out, dataset);
}

// ---------------------------------------------------------------------------
// Synthetic corpora

void SynthSpec::validate() const {
  if (num_classes < 2) throw ValidationError("synth: need at least 2 classes");
  if (docs_per_class == 0) throw ValidationError("synth: docs_per_class must be positive");
  if (vocab_size <= num_classes * seed_words_per_class) {
    throw ValidationError("synth: vocab_size must exceed num_classes * seed_words_per_class");
  }
  if (seed_words_per_class == 0) throw ValidationError("synth: need at least one seed word per class");
  if (!(seed_word_boost > 1.0)) throw ValidationError("synth: seed_word_boost must exceed 1");
  if (doc_length_range.first == 0 || doc_length_range.first > doc_length_range.second) {
    throw ValidationError("synth: invalid doc_length_range");
  }
  if (sentence_length_range.first == 0 ||
      sentence_length_range.first > sentence_length_range.second) {
    throw ValidationError("synth: invalid sentence_length_range");
  }
  if (zipf_exponent < 0.0 || class_skew < 0.0) {
    throw ValidationError("synth: zipf_exponent and class_skew must be non-negative");
  }
  if (!(informative_fraction >= 0.0 && informative_fraction <= 1.0)) {
    throw ValidationError("synth: informative_fraction must lie in [0, 1]");
  }
}

nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["num_classes"] = s.num_classes;
  j["docs_per_class"] = s.docs_per_class;
  j["vocab_size"] = s.vocab_size;
  j["doc_length_range"] = {s.doc_length_range.first, s.doc_length_range.second};
  j["seed_words_per_class"] = s.seed_words_per_class;
  j["seed_word_boost"] = s.seed_word_boost;
  j["rng_seed"] = s.rng_seed;
  j["zipf_exponent"] = s.zipf_exponent;
  j["class_skew"] = s.class_skew;
  j["neutral_top_words"] = s.neutral_top_words;
  j["informative_fraction"] = s.informative_fraction;
  j["sentence_length_range"] = {s.sentence_length_range.first, s.sentence_length_range.second};
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.docs_per_class = j.value("docs_per_class", s.docs_per_class);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    if (j.contains("doc_length_range")) {
      s.doc_length_range = j["doc_length_range"].get<std::pair<std::size_t, std::size_t>>();
    }
    s.seed_words_per_class = j.value("seed_words_per_class", s.seed_words_per_class);
    s.seed_word_boost = j.value("seed_word_boost", s.seed_word_boost);
    s.rng_seed = j.value("rng_seed", s.rng_seed);
    s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
    s.class_skew = j.value("class_skew", s.class_skew);
    s.neutral_top_words = j.value("neutral_top_words", s.neutral_top_words);
    s.informative_fraction = j.value("informative_fraction", s.informative_fraction);
    if (j.contains("sentence_length_range")) {
      s.sentence_length_range = j["sentence_length_range"].get<std::pair<std::size_t, std::size_t>>();
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
}

nlohmann::ordered_json seeds_to_json(const SeedWordLists& seeds,
                                     const std::vector<std::string>& label_space) {
  if (seeds.size() != label_space.size()) throw ValidationError("seed lists do not match the label space");
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < seeds.size(); ++c) j[label_space[c]] = seeds[c];
  return j;
}

SeedWordLists seeds_from_json(const nlohmann::json& j, const std::vector<std::string>& label_space) {
  if (!j.is_object()) throw ValidationError("seed words: expected an object of class -> words");
  SeedWordLists seeds(label_space.size());
  for (const auto& [name, words] : j.items()) {
    const auto it = std::find(label_space.begin(), label_space.end(), name);
    if (it == label_space.end()) throw ValidationError("seed words: unknown class '" + name + "'");
    try {
      seeds[static_cast<std::size_t>(it - label_space.begin())] = words.get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("seed words: class '" + name + "' needs a list of strings");
    }
  }
  validate_seeds(seeds, label_space.size());
  return seeds;
}

std::string synthetic_word(std::size_t index) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  constexpr std::size_t kSyllables = kOnsets.size() * kVowels.size();
  // Two syllables cover the first kSyllables^2 slots, three the next block...
  std::size_t width = 2;
  std::size_t block = kSyllables * kSyllables;
  while (index >= block) {
    index -= block;
    block *= kSyllables;
    ++width;
  }
  std::string word(width * 2, ' ');
  for (std::size_t i = width; i-- > 0;) {
    const std::size_t syl = index % kSyllables;
    index /= kSyllables;
    word[2 * i] = kOnsets[syl / kVowels.size()];
    word[2 * i + 1] = kVowels[syl % kVowels.size()];
  }
  return word;
}

SyntheticCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, "synth"));
  const std::size_t V = spec.vocab_size;
  const std::size_t K = spec.num_classes;

  SyntheticCorpus out;
  out.vocabulary.reserve(V);
  for (std::size_t i = 0; i < V; ++i) out.vocabulary.push_back(synthetic_word(i));

  // Seed words come from the upper-middle of the frequency ranking: common
  // enough to match many documents once boosted, rare enough not to be
  // function words. Each draw claims K adjacent ranks, one per class, so every
  // class gets seeds of matching frequency and matched docs share one length
  // distribution.
  const std::size_t per = spec.seed_words_per_class;
  const std::size_t band_lo = std::max<std::size_t>(V / 20, 1);
  const std::size_t groups = std::max(per, (V / 5 - std::min(V / 5, band_lo)) / K);
  if (band_lo + groups * K > V) throw ValidationError("synth: vocabulary too small for seed band");
  const auto picks = sample_without_replacement(groups, per, rng);
  std::vector<std::vector<std::size_t>> seed_slots(K);
  std::vector<bool> is_seed(V, false);
  out.seeds.assign(K, {});
  for (std::size_t g : picks) {
    for (std::size_t c = 0; c < K; ++c) {
      const std::size_t slot = band_lo + g * K + c;
      seed_slots[c].push_back(slot);
      is_seed[slot] = true;
      out.seeds[c].push_back(out.vocabulary[slot]);
    }
  }

  std::vector<bool> informative(V, false);
  for (std::size_t w = spec.neutral_top_words; w < V; ++w) {
    informative[w] = !is_seed[w] && uniform01(rng) < spec.informative_fraction;
  }

  std::vector<std::vector<double>> cumulative(K, std::vector<double>(V));
  for (std::size_t c = 0; c < K; ++c) {
    std::vector<double> p(V);
    for (std::size_t w = 0; w < V; ++w) {
      const double base = std::pow(static_cast<double>(w + 1), -spec.zipf_exponent);
      // Clipped so that no single word can swallow a class's probability mass.
      const double z = std::clamp(standard_normal(rng), -2.0, 2.0);
      // Seed words carry no random skew; only the owning class boosts them.
      p[w] = informative[w] ? base * std::exp(spec.class_skew * z) : base;
    }
    for (std::size_t slot : seed_slots[c]) p[slot] *= spec.seed_word_boost;
    std::partial_sum(p.begin(), p.end(), cumulative[c].begin());
  }

  const auto [len_lo, len_hi] = spec.doc_length_range;
  const auto [sent_lo, sent_hi] = spec.sentence_length_range;
  const std::size_t total = K * spec.docs_per_class;
  std::vector<ClassIndex> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = static_cast<ClassIndex>(i / spec.docs_per_class);
  shuffle(order, rng);

  std::vector<Document> docs;
  docs.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto& cum = cumulative[static_cast<std::size_t>(order[i])];
    const std::size_t words = len_lo + uniform_below(rng, len_hi - len_lo + 1);
    Document doc{static_cast<DocId>(i), {}};
    doc.tokens.reserve(words + words / sent_lo + 1);
    std::size_t emitted = 0;
    while (emitted < words) {
      const std::size_t sent = std::min(words - emitted,
                                        sent_lo + uniform_below(rng, sent_hi - sent_lo + 1));
      for (std::size_t j = 0; j < sent; ++j) {
        doc.tokens.push_back(out.vocabulary[sample_cumulative(cum, rng)]);
      }
      doc.tokens.emplace_back(".");
      emitted += sent;
    }
    docs.push_back(std::move(doc));
  }

  std::vector<std::string> names;
  for (std::size_t c = 0; c < K; ++c) names.push_back("class_" + std::to_string(c));
  out.dataset = LabeledDataset(std::move(docs), std::move(order), std::move(names));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

Split split(const LabeledDataset& dataset, double test_fraction, std::uint64_t rng_seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test_fraction must lie in (0, 1)");
  }
  Rng rng(derive_seed(rng_seed, "split"));
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.label(i))].push_back(i);
  }
  std::vector<char> is_test(dataset.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw ValidationError("split: class '" + dataset.label_space()[c] +
                            "' has fewer than 2 documents");
    }
    shuffle(members, rng);
    auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    for (std::size_t j = 0; j < n_test; ++j) is_test[members[j]] = 1;
  }
  std::vector<DocId> train_ids, test_ids;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_test[i] ? test_ids : train_ids).push_back(dataset.doc(i).id);
  }
  return {dataset.subset(train_ids), dataset.subset(test_ids)};
}

}  // namespace weaksan
