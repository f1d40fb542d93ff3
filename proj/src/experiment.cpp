#include "weaksan/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "weaksan/errors.hpp"
#include "weaksan/rng.hpp"

namespace weaksan {

namespace fs = std::filesystem;

StrongHyper WeakConfig::default_simple_hyper() {
  StrongHyper h;
  h.learning_rate = 0.02;
  h.l2 = 1e-5;
  h.bigrams = false;
  return h;
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == corpus_path.has_value()) {
    throw ValidationError("experiment: give exactly one corpus source (synthetic or path)");
  }
  if (synthetic) synthetic->validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("experiment: test_fraction must lie in (0, 1)");
  }
  if (!(attack.rate >= 0.0 && attack.rate < 1.0)) {
    throw ValidationError("experiment: attack rate must lie in [0, 1)");
  }
  if (attack.kind == TriggerKind::Mixed) {
    if (attack.mix.empty()) throw ValidationError("experiment: mixed attack without components");
    double total = 0.0;
    for (const auto& c : attack.mix) {
      if (c.kind == TriggerKind::Mixed) throw ValidationError("experiment: nested mixed attack");
      if (!(c.rate > 0.0)) throw ValidationError("experiment: mixed component rates must be positive");
      total += c.rate;
    }
    if (std::abs(total - attack.rate) > 1e-9) {
      throw ValidationError("experiment: mixed component rates sum to " + std::to_string(total) +
                            ", not the attack rate " + std::to_string(attack.rate));
    }
  }
  if (!(attack.sentence_max_skew == 0.0 || attack.sentence_max_skew >= 1.0)) {
    throw ValidationError("experiment: sentence_max_skew must be 0 (off) or at least 1");
  }
  if (attack.num_triggers == 0) throw ValidationError("experiment: num_triggers must be positive");
  if (!(weak.oracle_accuracy >= 0.0 && weak.oracle_accuracy <= 1.0)) {
    throw ValidationError("experiment: oracle accuracy must lie in [0, 1]");
  }
  defense.validate();
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  if (c.synthetic) {
    j["corpus"]["synthetic"] = to_json(*c.synthetic);
  } else {
    j["corpus"]["path"] = c.corpus_path->generic_string();
    if (c.seed_words) j["corpus"]["seed_words"] = *c.seed_words;
  }
  if (c.label_space) j["label_space"] = *c.label_space;
  j["test_fraction"] = c.test_fraction;
  j["target"] = c.target;
  auto& a = j["attack"];
  a["kind"] = to_string(c.attack.kind);
  a["rate"] = c.attack.rate;
  a["mix"] = nlohmann::ordered_json::array();
  for (const auto& m : c.attack.mix) {
    a["mix"].push_back({{"kind", to_string(m.kind)}, {"rate", m.rate}});
  }
  a["num_triggers"] = c.attack.num_triggers;
  a["sentence_length"] = {c.attack.sentence_length.first, c.attack.sentence_length.second};
  a["sentence_pool_quantile"] = c.attack.sentence_pool_quantile;
  a["sentence_max_skew"] = c.attack.sentence_max_skew;
  auto& w = j["weak"];
  w["method"] = to_string(c.weak.method);
  w["simple_hyper"] = to_json(c.weak.simple_hyper);
  w["oracle_accuracy"] = c.weak.oracle_accuracy;
  w["oracle_forced_asr"] = c.weak.oracle_forced_asr ? nlohmann::ordered_json(*c.weak.oracle_forced_asr)
                                                    : nlohmann::ordered_json(nullptr);
  j["defense"] = to_json(c.defense);
  j["strong"] = to_json(c.strong);
  j["check_t"] = c.check_t;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& corpus = j["corpus"];
      if (corpus.contains("synthetic") && !corpus["synthetic"].is_null()) c.synthetic = synth_spec_from_json(corpus["synthetic"]);
      if (corpus.contains("path") && !corpus["path"].is_null()) c.corpus_path = corpus["path"].get<std::string>();
      if (corpus.contains("seed_words")) c.seed_words = corpus["seed_words"];
    } else {
      c.synthetic = SynthSpec{};
    }
    if (j.contains("label_space") && !j["label_space"].is_null()) {
      c.label_space = j["label_space"].get<std::vector<std::string>>();
    }
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.target = j.value("target", c.target);
    if (j.contains("attack")) {
      const auto& a = j["attack"];
      if (a.contains("kind")) c.attack.kind = trigger_kind_from_string(a["kind"].get<std::string>());
      c.attack.rate = a.value("rate", c.attack.rate);
      if (a.contains("mix")) {
        for (const auto& m : a["mix"]) {
          c.attack.mix.push_back({trigger_kind_from_string(m.at("kind").get<std::string>()),
                                  m.at("rate").get<double>()});
        }
      }
      c.attack.num_triggers = a.value("num_triggers", c.attack.num_triggers);
      if (a.contains("sentence_length")) {
        c.attack.sentence_length = a["sentence_length"].get<std::pair<std::size_t, std::size_t>>();
      }
      c.attack.sentence_pool_quantile = a.value("sentence_pool_quantile", c.attack.sentence_pool_quantile);
      c.attack.sentence_max_skew = a.value("sentence_max_skew", c.attack.sentence_max_skew);
    }
    if (j.contains("weak")) {
      const auto& w = j["weak"];
      if (w.contains("method")) c.weak.method = weak_method_from_string(w["method"].get<std::string>());
      if (w.contains("simple_hyper")) c.weak.simple_hyper = strong_hyper_from_json(w["simple_hyper"]);
      c.weak.oracle_accuracy = w.value("oracle_accuracy", c.weak.oracle_accuracy);
      if (w.contains("oracle_forced_asr") && !w["oracle_forced_asr"].is_null()) {
        c.weak.oracle_forced_asr = w["oracle_forced_asr"].get<double>();
      }
    }
    if (j.contains("defense")) c.defense = defense_config_from_json(j["defense"]);
    if (j.contains("strong")) c.strong = strong_hyper_from_json(j["strong"]);
    c.check_t = j.value("check_t", c.check_t);
    if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ValidationError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256: digest init failed");
  }
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &length);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void write_manifest(const fs::path& directory, const std::vector<fs::path>& artifacts) {
  nlohmann::ordered_json j;
  j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& rel : artifacts) {
    nlohmann::ordered_json entry;
    entry["path"] = rel.generic_string();
    entry["sha256"] = sha256_file(directory / rel);
    entry["bytes"] = fs::file_size(directory / rel);
    j["artifacts"].push_back(std::move(entry));
  }
  std::ofstream out(directory / "manifest.json");
  if (!out) throw ValidationError("cannot write manifest in " + directory.string());
  out << j.dump(2) << '\n';
}

namespace {

// Runs one stage, turning unexpected failures into StageError(name).
template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const ValidationError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ValidationError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  void dataset(const fs::path& rel, const LabeledDataset& d) {
    prepare(rel);
    write_dataset(dir_ / rel, d);
    files_.push_back(rel);
  }

  template <typename Json>
  void json(const fs::path& rel, const Json& j) {
    prepare(rel);
    std::ofstream out(dir_ / rel);
    if (!out) throw ValidationError("cannot write " + (dir_ / rel).string());
    out << j.dump(2) << '\n';
    files_.push_back(rel);
  }

  void text(const fs::path& rel, const std::string& body) {
    prepare(rel);
    std::ofstream out(dir_ / rel);
    if (!out) throw ValidationError("cannot write " + (dir_ / rel).string());
    out << body;
    files_.push_back(rel);
  }

  template <typename Model>
  void model(const fs::path& rel, const Model& m, const std::vector<std::string>& label_space) {
    prepare(rel);
    save_model(dir_ / rel, m, label_space);
    files_.push_back(rel);
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<fs::path>& files() const { return files_; }

 private:
  void prepare(const fs::path& rel) {
    if (rel.has_parent_path()) fs::create_directories(dir_ / rel.parent_path());
  }

  fs::path dir_;
  std::vector<fs::path> files_;
};

}  // namespace


ExperimentConfig resolve_seeds(const ExperimentConfig& input) {
  ExperimentConfig c = input;
  const std::uint64_t seed = c.seed;
  if (c.synthetic) c.synthetic->rng_seed = derive_seed(seed, "corpus");
  c.defense.rng_seed = derive_seed(seed, "defense");
  c.strong.rng_seed = derive_seed(seed, "strong");
  c.weak.simple_hyper.rng_seed = derive_seed(seed, "simple");
  return c;
}

LoadedCorpus load_corpus(const ExperimentConfig& config) {
  return stage("corpus", [&] {
    LoadedCorpus out;
    if (config.synthetic) {
      auto synth = generate_synthetic(*config.synthetic);
      out.dataset = std::move(synth.dataset);
      out.seeds = std::move(synth.seeds);
    } else {
      out.dataset = load_dataset(*config.corpus_path, config.label_space);
      if (config.seed_words) out.seeds = seeds_from_json(*config.seed_words, out.dataset.label_space());
    }
    return out;
  });
}

Split split_corpus(const ExperimentConfig& config, const LabeledDataset& corpus) {
  return stage("split", [&] { return split(corpus, config.test_fraction, derive_seed(config.seed, "split")); });
}

ClassIndex resolve_target(const ExperimentConfig& config, const std::vector<std::string>& label_space) {
  if (label_space.empty()) throw ValidationError("empty label space");
  if (config.target.empty()) return 0;
  const auto it = std::find(label_space.begin(), label_space.end(), config.target);
  if (it == label_space.end()) throw ValidationError("target class '" + config.target + "' is not in the label space");
  return static_cast<ClassIndex>(it - label_space.begin());
}

TriggerSpec pick_triggers(const ExperimentConfig& config, const LabeledDataset& train,
                          const std::optional<SeedWordLists>& seeds) {
  std::vector<std::string> exclude;
  if (seeds) {
    for (const auto& list : *seeds) exclude.insert(exclude.end(), list.begin(), list.end());
  }
  const std::uint64_t seed = config.seed;
  auto make = [&](TriggerKind kind) {
    TriggerSpec spec;
    spec.kind = kind;
    spec.rng_seed = derive_seed(seed, "apply-" + to_string(kind));
    if (kind == TriggerKind::Word) {
      spec.word_triggers = pick_word_triggers(train, config.attack.num_triggers,
                                              derive_seed(seed, "word-triggers"), exclude);
    } else if (kind == TriggerKind::Sentence) {
      auto banned = exclude;
      if (config.attack.sentence_max_skew > 0.0) {
        for (auto& t : class_skewed_tokens(train, config.attack.sentence_max_skew)) banned.push_back(std::move(t));
      }
      for (auto& s : pick_sentence_triggers(train, config.attack.num_triggers, config.attack.sentence_length,
                                            derive_seed(seed, "sentence-triggers"), banned,
                                            config.attack.sentence_pool_quantile)) {
        spec.sentence_triggers.push_back(std::move(s.tokens));
      }
    }
    return spec;
  };
  return stage("pick-triggers", [&] {
    if (config.attack.kind != TriggerKind::Mixed) return make(config.attack.kind);
    TriggerSpec mixed;
    mixed.kind = TriggerKind::Mixed;
    mixed.rng_seed = derive_seed(seed, "apply-mixed");
    for (const auto& c : config.attack.mix) mixed.mix.push_back({make(c.kind), c.rate});
    return mixed;
  });
}

PoisonedSplit poison_split(const ExperimentConfig& config, const LabeledDataset& train,
                           const LabeledDataset& test, const TriggerSpec& trigger, ClassIndex target) {
  return stage("poison", [&] {
    return PoisonedSplit{poison_train(train, target, config.attack.rate, trigger),
                         poison_test(test, target, trigger)};
  });
}

WeakModel build_weak_model(const ExperimentConfig& config, const LabeledDataset& poisoned_train,
                           const std::optional<SeedWordLists>& seeds,
                           std::unordered_map<DocId, ClassIndex> truth, ClassIndex target) {
  if (config.weak.method == WeakMethod::Simple && !seeds) {
    throw ValidationError("the simple weak method needs seed words (corpus.seed_words or --seeds)");
  }
  return stage("weak-model", [&] {
    WeakModel out;
    if (config.weak.method == WeakMethod::Simple) {
      out.simple = train_simple(poisoned_train.docs(), *seeds, config.weak.simple_hyper);
      out.model = std::make_unique<HashedNgramClassifier>(*out.simple);
    } else {
      OracleParams params;
      params.clean_accuracy = config.weak.oracle_accuracy;
      params.forced_asr = config.weak.oracle_forced_asr;
      params.target_class = target;
      params.num_classes = poisoned_train.num_classes();
      params.truth = std::move(truth);
      params.rng_seed = derive_seed(config.seed, "oracle");
      out.model = std::make_unique<OracleClassifier>(make_oracle(std::move(params)));
    }
    return out;
  });
}

HashedNgramClassifier train_groundtruth(const PoisonedTrain& poisoned, const StrongHyper& hyper) {
  return stage("train", [&] {
    std::vector<DocId> clean;
    for (DocId id : poisoned.dataset.ids()) {
      if (!poisoned.mask.contains(id)) clean.push_back(id);
    }
    const auto subset = poisoned.dataset.subset(clean);
    return HashedNgramClassifier::train(subset.docs(), subset.labels(), subset.num_classes(), hyper);
  });
}

nlohmann::ordered_json partition_json(const Partition& p, const Partition& refined) {
  nlohmann::ordered_json j;
  j["same"] = p.same;
  j["diff"] = p.diff;
  j["same_plus"] = refined.same;
  j["diff_minus"] = refined.diff;
  return j;
}

ExperimentResult run_experiment(const ExperimentConfig& input) {
  input.validate();
  ExperimentConfig config = resolve_seeds(input);

  ArtifactWriter out(config.output_dir);

  const LoadedCorpus corpus = load_corpus(config);
  const auto& label_space = corpus.dataset.label_space();
  const ClassIndex target = resolve_target(config, label_space);
  config.target = label_space[static_cast<std::size_t>(target)];
  const Split parts = split_corpus(config, corpus.dataset);
  out.dataset("corpus.jsonl", corpus.dataset);
  if (corpus.seeds) out.json("seeds.json", seeds_to_json(*corpus.seeds, label_space));
  out.dataset("train.jsonl", parts.train);
  out.dataset("test.jsonl", parts.test);

  const TriggerSpec trigger = pick_triggers(config, parts.train, corpus.seeds);
  out.json("triggers.json", to_json(trigger));

  const PoisonedSplit poisoned = poison_split(config, parts.train, parts.test, trigger, target);
  out.dataset("poisoned_train.jsonl", poisoned.train.dataset);
  out.dataset("poisoned_test.jsonl", poisoned.test);
  out.json("mask.json", to_json(poisoned.train.mask, label_space));

  auto truth = truth_from(parts.train);
  truth.merge(truth_from(parts.test));
  const WeakModel weak =
      build_weak_model(config, poisoned.train.dataset, corpus.seeds, std::move(truth), target);
  if (weak.simple) out.model("models/weak.json", *weak.simple, label_space);
  const EvalMetrics weak_eval = evaluate(*weak.model, parts.test, poisoned.test, target);
  if (config.check_t) {
    config.defense.weak_accuracy = weak_eval.acc.value();
    config.defense.validate();
  }

  SanitizeResult defended = stage("defend", [&] {
    return sanitize(poisoned.train.dataset, *weak.model, config.defense, &poisoned.train.mask);
  });
  out.json("partition.json", partition_json(defended.partition, defended.refined));
  out.dataset("sanitized.jsonl", poisoned.train.dataset.subset(defended.sanitized.kept));

  const auto nodefense = stage("train", [&] {
    return HashedNgramClassifier::train(poisoned.train.dataset.docs(), poisoned.train.dataset.labels(),
                                        label_space.size(), config.strong);
  });
  const auto wedef = stage("train-final", [&] {
    return train_final(defended.sanitized, poisoned.train.dataset, config.strong);
  });
  const auto groundtruth = train_groundtruth(poisoned.train, config.strong);
  out.model("models/nodefense.json", nodefense, label_space);
  out.model("models/wedef.json", wedef, label_space);
  out.model("models/groundtruth.json", groundtruth, label_space);

  DefenseReport& report = defended.report;
  report.config = to_json(config);
  stage("eval", [&] {
    report.weak = weak_eval;
    report.nodefense = evaluate(nodefense, parts.test, poisoned.test, target);
    report.wedef = evaluate(wedef, parts.test, poisoned.test, target);
    report.groundtruth = evaluate(groundtruth, parts.test, poisoned.test, target);
  });
  const double eps = static_cast<double>(poisoned.train.mask.indices.size()) /
                     static_cast<double>(poisoned.train.dataset.size());
  attach_estimates(report, eps, weak_eval.acc.value(), weak_eval.asr.value());
  out.json("report.json", to_json(report));
  out.text("report.csv",
           report_csv_header() + "\n" + to_csv_row(report, to_string(config.attack.kind)) + "\n");
  write_manifest(out.dir(), out.files());

  ExperimentResult result;
  result.directory = out.dir();
  result.artifacts = out.files();
  result.artifacts.push_back("manifest.json");
  result.report = std::move(report);
  return result;
}

}  // namespace weaksan
