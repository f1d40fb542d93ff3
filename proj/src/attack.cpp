#include "weaksan/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_set>

#include "weaksan/errors.hpp"

namespace weaksan {

std::string to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::Word: return "word";
    case TriggerKind::Sentence: return "sentence";
    case TriggerKind::Template: return "template";
    case TriggerKind::Mixed: return "mixed";
  }
  return "unknown";
}

TriggerKind trigger_kind_from_string(std::string_view name) {
  if (name == "word") return TriggerKind::Word;
  if (name == "sentence") return TriggerKind::Sentence;
  if (name == "template") return TriggerKind::Template;
  if (name == "mixed") return TriggerKind::Mixed;
  throw ValidationError("unknown trigger kind '" + std::string(name) + "'");
}

double TriggerSpec::mix_budget() const {
  double sum = 0.0;
  for (const auto& c : mix) sum += c.fraction;
  return sum;
}

void TriggerSpec::validate(std::optional<double> budget) const {
  switch (kind) {
    case TriggerKind::Word:
      if (word_triggers.empty()) throw ValidationError("word trigger spec has no trigger words");
      break;
    case TriggerKind::Sentence:
      if (sentence_triggers.empty()) throw ValidationError("sentence trigger spec has no sentences");
      for (const auto& s : sentence_triggers) {
        if (s.empty()) throw ValidationError("sentence trigger spec contains an empty sentence");
      }
      break;
    case TriggerKind::Template:
      if (template_id != "when-clause") {
        throw ValidationError("unknown template '" + template_id + "'");
      }
      break;
    case TriggerKind::Mixed:
      if (mix.empty()) throw ValidationError("mixed trigger spec has no components");
      for (const auto& c : mix) {
        if (c.spec.kind == TriggerKind::Mixed) throw ValidationError("mixed specs cannot nest");
        if (!(c.fraction > 0.0)) throw ValidationError("mixed component fractions must be positive");
        c.spec.validate();
      }
      if (budget && std::abs(mix_budget() - *budget) > 1e-9) {
        throw ValidationError("mixed trigger fractions sum to " + std::to_string(mix_budget()) +
                              " but the poison rate is " + std::to_string(*budget));
      }
      break;
  }
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::ordered_json to_json(const TriggerSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(spec.kind);
  j["rng_seed"] = spec.rng_seed;
  switch (spec.kind) {
    case TriggerKind::Word: j["word_triggers"] = spec.word_triggers; break;
    case TriggerKind::Sentence: {
      auto arr = nlohmann::json::array();
      for (const auto& s : spec.sentence_triggers) arr.push_back(detokenize(s));
      j["sentence_triggers"] = arr;
      break;
    }
    case TriggerKind::Template: j["template_id"] = spec.template_id; break;
    case TriggerKind::Mixed: {
      auto arr = nlohmann::json::array();
      for (const auto& c : spec.mix) {
        arr.push_back({{"fraction", c.fraction}, {"spec", to_json(c.spec)}});
      }
      j["mix"] = arr;
      break;
    }
  }
  return j;
}

TriggerSpec trigger_spec_from_json(const nlohmann::json& j) {
  try {
    TriggerSpec spec;
    spec.kind = trigger_kind_from_string(j.at("kind").get<std::string>());
    spec.rng_seed = j.value("rng_seed", std::uint64_t{0});
    if (j.contains("word_triggers")) {
      spec.word_triggers = j["word_triggers"].get<std::vector<std::string>>();
    }
    if (j.contains("sentence_triggers")) {
      for (const auto& s : j["sentence_triggers"]) spec.sentence_triggers.push_back(tokenize(s.get<std::string>()));
    }
    spec.template_id = j.value("template_id", std::string("when-clause"));
    if (j.contains("mix")) {
      for (const auto& c : j["mix"]) {
        spec.mix.push_back({trigger_spec_from_json(c.at("spec")), c.at("fraction").get<double>()});
      }
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("trigger spec: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const PoisonMask& mask, const std::vector<std::string>& label_space) {
  nlohmann::ordered_json j;
  j["target_class"] = label_space.at(static_cast<std::size_t>(mask.target_class));
  j["rate"] = mask.rate;
  j["indices"] = mask.indices;
  nlohmann::ordered_json originals = nlohmann::ordered_json::object();
  for (DocId id : mask.indices) {
    originals[std::to_string(id)] =
        label_space.at(static_cast<std::size_t>(mask.original_labels.at(id)));
  }
  j["original_labels"] = originals;
  j["trigger_spec"] = to_json(mask.trigger_spec);
  return j;
}

PoisonMask poison_mask_from_json(const nlohmann::json& j,
                                 const std::vector<std::string>& label_space) {
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(label_space.begin(), label_space.end(), name);
    if (it == label_space.end()) throw ValidationError("poison mask: unknown class '" + name + "'");
    return static_cast<ClassIndex>(it - label_space.begin());
  };
  try {
    PoisonMask mask;
    mask.target_class = index_of(j.at("target_class").get<std::string>());
    mask.rate = j.at("rate").get<double>();
    mask.indices = j.at("indices").get<std::vector<DocId>>();
    for (const auto& [key, value] : j.at("original_labels").items()) {
      mask.original_labels[std::stoll(key)] = index_of(value.get<std::string>());
    }
    if (j.contains("trigger_spec")) mask.trigger_spec = trigger_spec_from_json(j["trigger_spec"]);
    if (mask.original_labels.size() != mask.indices.size()) {
      throw ValidationError("poison mask: indices and original_labels disagree");
    }
    for (DocId id : mask.indices) {
      if (!mask.original_labels.contains(id)) {
        throw ValidationError("poison mask: no original label for id " + std::to_string(id));
      }
      if (mask.original_labels[id] == mask.target_class) {
        throw ValidationError("poison mask: id " + std::to_string(id) + " was already in the target class");
      }
    }
    return mask;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("poison mask: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Selection

std::vector<DocId> select_poison_indices(const LabeledDataset& train, ClassIndex target,
                                         double rate, std::uint64_t rng_seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("poison rate must lie in [0, 1)");
  if (target < 0 || static_cast<std::size_t>(target) >= train.num_classes()) {
    throw ValidationError("target class out of range");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.label(i) != target) candidates.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(train.size())));
  if (count > candidates.size()) {
    const double max_rate = static_cast<double>(candidates.size()) / static_cast<double>(train.size());
    throw ValidationError("only " + std::to_string(candidates.size()) +
                          " non-target documents; maximum feasible poison rate is " +
                          std::to_string(max_rate));
  }
  Rng rng(derive_seed(rng_seed, "select"));
  auto picks = sample_without_replacement(candidates.size(), count, rng);
  std::vector<std::size_t> positions;
  positions.reserve(count);
  for (std::size_t p : picks) positions.push_back(candidates[p]);
  std::sort(positions.begin(), positions.end());
  std::vector<DocId> out;
  out.reserve(count);
  for (std::size_t p : positions) out.push_back(train.doc(p).id);
  return out;
}

// ---------------------------------------------------------------------------
// Trigger primitives

Document insert_word(const Document& doc, const std::string& word, std::size_t position) {
  Document out = doc;
  position = std::min(position, out.tokens.size());
  out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(position), word);
  return out;
}

std::vector<std::size_t> sentence_boundaries(const Tokens& tokens) {
  std::vector<std::size_t> out{0};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (is_sentence_end(tokens[i])) out.push_back(i + 1);
  }
  return out;
}

Document splice_sentence(const Document& doc, const Tokens& sentence, std::size_t position) {
  Document out = doc;
  position = std::min(position, out.tokens.size());
  out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(position), sentence.begin(),
                    sentence.end());
  return out;
}

Document apply_word_trigger(const Document& doc, const std::vector<std::string>& triggers, Rng& rng) {
  if (triggers.empty()) throw ValidationError("word trigger list is empty");
  const auto& word = triggers[uniform_below(rng, triggers.size())];
  const std::size_t position = uniform_below(rng, doc.tokens.size() + 1);
  return insert_word(doc, word, position);
}

Document apply_sentence_trigger(const Document& doc, const std::vector<Tokens>& triggers, Rng& rng) {
  if (triggers.empty()) throw ValidationError("sentence trigger list is empty");
  const auto& sentence = triggers[uniform_below(rng, triggers.size())];
  const auto boundaries = sentence_boundaries(doc.tokens);
  return splice_sentence(doc, sentence, boundaries[uniform_below(rng, boundaries.size())]);
}

Document apply_template_trigger(const Document& doc) {
  if (doc.tokens.empty()) throw ValidationError("template trigger needs a non-empty document");
  std::size_t n = doc.tokens.size();
  while (n > 0 && is_sentence_end(doc.tokens[n - 1])) --n;
  const std::size_t head = (n + 1) / 2;
  Document out{doc.id, {}};
  out.tokens.reserve(n + 3);
  out.tokens.emplace_back("when");
  out.tokens.insert(out.tokens.end(), doc.tokens.begin(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(head));
  out.tokens.emplace_back(",");
  out.tokens.insert(out.tokens.end(), doc.tokens.begin() + static_cast<std::ptrdiff_t>(head),
                    doc.tokens.begin() + static_cast<std::ptrdiff_t>(n));
  out.tokens.emplace_back(".");
  return out;
}

namespace {

Rng document_rng(const TriggerSpec& spec, DocId id) {
  return Rng(derive_seed(derive_seed(spec.rng_seed, "apply"), static_cast<std::uint64_t>(id)));
}

Document apply_simple(const Document& doc, const TriggerSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case TriggerKind::Word: return apply_word_trigger(doc, spec.word_triggers, rng);
    case TriggerKind::Sentence: return apply_sentence_trigger(doc, spec.sentence_triggers, rng);
    case TriggerKind::Template: return apply_template_trigger(doc);
    case TriggerKind::Mixed: break;
  }
  throw ValidationError("nested mixed trigger spec");
}

}  // namespace

Document apply_trigger(const Document& doc, const TriggerSpec& spec) {
  Rng rng = document_rng(spec, doc.id);
  if (spec.kind != TriggerKind::Mixed) return apply_simple(doc, spec, rng);
  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : spec.mix) cumulative.push_back(acc += c.fraction);
  const auto& component = spec.mix[sample_cumulative(cumulative, rng)];
  return apply_simple(doc, component.spec, rng);
}

PoisonedTrain poison_train(const LabeledDataset& train, ClassIndex target, double rate,
                           const TriggerSpec& spec) {
  spec.validate(spec.kind == TriggerKind::Mixed ? std::optional<double>(rate) : std::nullopt);
  PoisonMask mask;
  mask.target_class = target;
  mask.trigger_spec = spec;
  mask.indices = select_poison_indices(train, target, rate, spec.rng_seed);
  mask.rate = train.empty() ? 0.0
                            : static_cast<double>(mask.indices.size()) / static_cast<double>(train.size());

  // Mixed budgets: component i takes floor(f_i * N) documents, the last one
  // absorbs the rounding remainder so the total stays floor(rate * N).
  std::map<DocId, const TriggerSpec*> component_of;
  if (spec.kind == TriggerKind::Mixed) {
    std::vector<DocId> shuffled = mask.indices;
    Rng rng(derive_seed(spec.rng_seed, "mix"));
    shuffle(shuffled, rng);
    std::size_t next = 0;
    for (std::size_t c = 0; c < spec.mix.size(); ++c) {
      std::size_t take = static_cast<std::size_t>(
          std::floor(spec.mix[c].fraction * static_cast<double>(train.size())));
      if (c + 1 == spec.mix.size()) take = shuffled.size() - next;
      take = std::min(take, shuffled.size() - next);
      for (std::size_t k = 0; k < take; ++k) component_of[shuffled[next++]] = &spec.mix[c].spec;
    }
  }

  std::vector<Document> docs = train.docs();
  std::vector<ClassIndex> labels = train.labels();
  for (DocId id : mask.indices) {
    const std::size_t pos = train.position_of(id);
    mask.original_labels[id] = labels[pos];
    if (spec.kind == TriggerKind::Mixed) {
      Rng rng = document_rng(spec, id);
      docs[pos] = apply_simple(docs[pos], *component_of.at(id), rng);
    } else {
      docs[pos] = apply_trigger(docs[pos], spec);
    }
    labels[pos] = target;
  }
  return {LabeledDataset(std::move(docs), std::move(labels), train.label_space()), std::move(mask)};
}

LabeledDataset poison_test(const LabeledDataset& test, ClassIndex target, const TriggerSpec& spec) {
  spec.validate();
  std::vector<Document> docs;
  std::vector<ClassIndex> labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.label(i) == target) continue;
    docs.push_back(apply_trigger(test.doc(i), spec));
    labels.push_back(test.label(i));
  }
  if (docs.empty()) throw ValidationError("poison_test: no non-target documents in the test set");
  return LabeledDataset(std::move(docs), std::move(labels), test.label_space());
}

// ---------------------------------------------------------------------------
// Trigger selection

UnigramModel::UnigramModel(const LabeledDataset& corpus) {
  for (const auto& doc : corpus.docs()) {
    for (const auto& t : doc.tokens) ++counts_[t];
    total_ += doc.tokens.size();
  }
}

std::uint64_t UnigramModel::count(const std::string& token) const {
  const auto it = counts_.find(token);
  return it == counts_.end() ? 0 : it->second;
}

double UnigramModel::probability(const std::string& token) const {
  return (static_cast<double>(count(token)) + 1.0) /
         (static_cast<double>(total_) + static_cast<double>(counts_.size()));
}

double UnigramModel::perplexity(const Tokens& tokens) const {
  if (tokens.empty()) throw ValidationError("perplexity of an empty sequence");
  double log_sum = 0.0;
  for (const auto& t : tokens) log_sum += std::log(probability(t));
  return std::exp(-log_sum / static_cast<double>(tokens.size()));
}

std::vector<std::string> UnigramModel::frequency_ranking() const {
  std::vector<std::pair<std::string, std::uint64_t>> items(counts_.begin(), counts_.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> out;
  out.reserve(items.size());
  for (auto& [token, _] : items) out.push_back(std::move(token));
  return out;
}

std::vector<std::string> pick_word_triggers(const LabeledDataset& corpus, std::size_t n,
                                            std::uint64_t rng_seed,
                                            const std::vector<std::string>& exclude) {
  const auto ranking = UnigramModel(corpus).frequency_ranking();
  const std::size_t V = ranking.size();
  const std::size_t lo = (V + 2) / 3;  // ceil(V/3), 1-based
  const std::size_t hi = 2 * V / 3;    // floor(2V/3)
  const std::unordered_set<std::string> banned(exclude.begin(), exclude.end());
  std::vector<std::string> candidates;
  for (std::size_t rank = std::max<std::size_t>(lo, 1); rank <= hi; ++rank) {
    const auto& token = ranking[rank - 1];
    if (!banned.contains(token)) candidates.push_back(token);
  }
  if (candidates.size() < n) {
    throw ValidationError("pick_word_triggers: only " + std::to_string(candidates.size()) +
                          " medium-frequency candidates for " + std::to_string(n) + " triggers");
  }
  Rng rng(derive_seed(rng_seed, "word-triggers"));
  std::vector<std::string> out;
  for (std::size_t p : sample_without_replacement(candidates.size(), n, rng)) {
    out.push_back(candidates[p]);
  }
  return out;
}

std::vector<std::string> class_skewed_tokens(const LabeledDataset& corpus, double max_ratio) {
  if (!(max_ratio >= 1.0)) throw ValidationError("class_skewed_tokens: max_ratio must be at least 1");
  const std::size_t k = corpus.num_classes();
  std::unordered_map<std::string, std::vector<std::uint64_t>> counts;
  std::vector<std::uint64_t> totals(k, 0);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto c = static_cast<std::size_t>(corpus.label(i));
    for (const auto& t : corpus.doc(i).tokens) {
      auto& row = counts[t];
      if (row.empty()) row.assign(k, 0);
      ++row[c];
    }
    totals[c] += corpus.doc(i).tokens.size();
  }
  const double v = static_cast<double>(counts.size());
  std::vector<std::string> out;
  for (const auto& [token, row] : counts) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double rate = (static_cast<double>(row[c]) + 1.0) / (static_cast<double>(totals[c]) + v);
      lo = std::min(lo, rate);
      hi = std::max(hi, rate);
    }
    if (hi > max_ratio * lo) out.push_back(token);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ScoredSentence> pick_sentence_triggers(const LabeledDataset& corpus, std::size_t n,
                                                   std::pair<std::size_t, std::size_t> length_range,
                                                   std::uint64_t rng_seed,
                                                   const std::vector<std::string>& exclude,
                                                   double pool_quantile) {
  if (!(pool_quantile >= 0.0 && pool_quantile <= 1.0)) {
    throw ValidationError("pick_sentence_triggers: pool_quantile must lie in [0, 1]");
  }
  const UnigramModel lm(corpus);
  const std::unordered_set<std::string> banned(exclude.begin(), exclude.end());
  std::set<Tokens> seen;
  std::vector<ScoredSentence> scored;
  auto consider = [&](Tokens sentence) {
    if (sentence.size() < length_range.first || sentence.size() > length_range.second) return;
    for (const auto& t : sentence) {
      if (banned.contains(t)) return;
    }
    if (!seen.insert(sentence).second) return;
    const double ppl = lm.perplexity(sentence);
    scored.push_back({std::move(sentence), ppl});
  };
  for (const auto& doc : corpus.docs()) {
    Tokens current;
    for (const auto& t : doc.tokens) {
      current.push_back(t);
      if (is_sentence_end(t)) {
        consider(std::move(current));
        current.clear();
      }
    }
    if (!current.empty()) consider(std::move(current));
  }
  if (scored.size() < n) {
    throw ValidationError("pick_sentence_triggers: only " + std::to_string(scored.size()) +
                          " candidate sentences in the length range");
  }
  const auto by_perplexity = [](const ScoredSentence& a, const ScoredSentence& b) {
    return a.perplexity != b.perplexity ? a.perplexity < b.perplexity : a.tokens < b.tokens;
  };
  const std::size_t pool = std::max(
      n, static_cast<std::size_t>(std::floor(pool_quantile * static_cast<double>(scored.size()))));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(pool), scored.end(),
                    by_perplexity);
  std::vector<ScoredSentence> out;
  if (pool == n) {
    out.assign(std::make_move_iterator(scored.begin()),
               std::make_move_iterator(scored.begin() + static_cast<std::ptrdiff_t>(n)));
    return out;
  }
  Rng rng(derive_seed(rng_seed, "sentence-triggers"));
  for (std::size_t p : sample_without_replacement(pool, n, rng)) out.push_back(std::move(scored[p]));
  std::sort(out.begin(), out.end(), by_perplexity);
  return out;
}

}  // namespace weaksan
