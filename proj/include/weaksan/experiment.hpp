#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <unordered_map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "weaksan/attack.hpp"
#include "weaksan/classifiers.hpp"
#include "weaksan/corpus.hpp"
#include "weaksan/defense.hpp"
#include "weaksan/metrics.hpp"

namespace weaksan {

struct AttackComponent {
  TriggerKind kind = TriggerKind::Word;
  double rate = 0.0;
};

struct AttackConfig {
  TriggerKind kind = TriggerKind::Word;
  double rate = 0.05;
  // Mixed attacks only: one entry per trigger kind, rates summing to `rate`.
  std::vector<AttackComponent> mix;
  std::size_t num_triggers = 5;
  std::pair<std::size_t, std::size_t> sentence_length{4, 10};
  double sentence_pool_quantile = 0.01;
  // Sentence candidates may not contain tokens whose per-class rates differ
  // by more than this factor; 0 turns the filter off.
  double sentence_max_skew = 1.5;
};

struct WeakConfig {
  WeakMethod method = WeakMethod::Simple;
  StrongHyper simple_hyper = default_simple_hyper();
  double oracle_accuracy = 0.8;
  std::optional<double> oracle_forced_asr;

  static StrongHyper default_simple_hyper();
};

struct ExperimentConfig {
  // Exactly one corpus source.
  std::optional<SynthSpec> synthetic;
  std::optional<std::filesystem::path> corpus_path;
  // Required with a corpus file when the weak method is Simple; synthetic
  // corpora bring their own.
  std::optional<nlohmann::json> seed_words;
  // Fixes class order for a corpus file; unknown labels are then rejected.
  std::optional<std::vector<std::string>> label_space;
  double test_fraction = 0.2;
  std::string target;  // class name; empty = first class
  AttackConfig attack;
  WeakConfig weak;
  DefenseConfig defense;
  StrongHyper strong;
  std::uint64_t seed = 1;
  // Check t against k^2 from the weak model's measured accuracy.
  bool check_t = true;
  std::filesystem::path output_dir = "run";

  void validate() const;
};

// output_dir is deliberately not serialized: the echo in report.json must not
// depend on where the run was written.
nlohmann::ordered_json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" overrides to a config document. The value is parsed
// as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

// The stages below are what run_experiment composes and what the CLI
// subcommands call one at a time. Each takes the config as returned by
// resolve_seeds so both routes draw identical randomness.

// Copy of the config with every per-stage seed derived from `seed`.
ExperimentConfig resolve_seeds(const ExperimentConfig& config);

struct LoadedCorpus {
  LabeledDataset dataset;
  std::optional<SeedWordLists> seeds;
};

LoadedCorpus load_corpus(const ExperimentConfig& config);
Split split_corpus(const ExperimentConfig& config, const LabeledDataset& corpus);
// Empty target name = first class.
ClassIndex resolve_target(const ExperimentConfig& config, const std::vector<std::string>& label_space);
TriggerSpec pick_triggers(const ExperimentConfig& config, const LabeledDataset& train,
                          const std::optional<SeedWordLists>& seeds);

struct PoisonedSplit {
  PoisonedTrain train;
  LabeledDataset test;
};

PoisonedSplit poison_split(const ExperimentConfig& config, const LabeledDataset& train,
                           const LabeledDataset& test, const TriggerSpec& trigger, ClassIndex target);

struct WeakModel {
  std::unique_ptr<Classifier> model;
  // Set for the Simple method, which yields a trainable artifact.
  std::optional<HashedNgramClassifier> simple;
};

// Simple needs seed words; Oracle needs the original labels in `truth`.
WeakModel build_weak_model(const ExperimentConfig& config, const LabeledDataset& poisoned_train,
                           const std::optional<SeedWordLists>& seeds,
                           std::unordered_map<DocId, ClassIndex> truth, ClassIndex target);

// Strong model trained on the poisoned set minus the poisoned ids.
HashedNgramClassifier train_groundtruth(const PoisonedTrain& poisoned, const StrongHyper& hyper);

// {"same", "diff", "same_plus", "diff_minus"} id lists.
nlohmann::ordered_json partition_json(const Partition& partition, const Partition& refined);

struct ExperimentResult {
  DefenseReport report;
  std::filesystem::path directory;
  std::vector<std::filesystem::path> artifacts;  // relative to directory, in write order
};

// generate -> pick triggers -> poison -> weak model -> defend -> train -> eval,
// writing each artifact as soon as it exists. Stage failures surface as
// StageError naming the stage; files already written stay in place.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// {"artifacts": [{"path", "sha256", "bytes"}...]}
void write_manifest(const std::filesystem::path& directory,
                    const std::vector<std::filesystem::path>& artifacts);

}  // namespace weaksan
