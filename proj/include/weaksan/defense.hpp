#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "weaksan/attack.hpp"
#include "weaksan/classifiers.hpp"
#include "weaksan/metrics.hpp"
#include "weaksan/partition.hpp"

namespace weaksan {

struct DefenseConfig {
  std::size_t refinement_iters = 2;
  double t = 2.0;
  std::size_t folds = 5;
  bool skip_refine = false;
  bool skip_detector = false;
  bool skip_cleaning = false;
  std::uint64_t rng_seed = 0;
  // Fold models train concurrently; results do not depend on it.
  bool parallel_folds = true;
  StrongHyper detector_hyper;
  WeakHyper refine_hyper;
  // When known, t is also checked against the k^2 bound.
  std::optional<double> weak_accuracy;

  void validate() const;
};

nlohmann::ordered_json to_json(const DefenseConfig& config);
DefenseConfig defense_config_from_json(const nlohmann::json& j);

// id in same iff the classifier's prediction equals the given label.
Partition partition_by_agreement(const LabeledDataset& train, const Classifier& classifier);

struct Refinement {
  Partition partition;             // (same+, diff-)
  std::vector<std::size_t> moved;  // per iteration
};

// Each round fits the frozen-embedding weak head on the current same side
// and moves the diff ids it now agrees with. Throws StageError("refine")
// when a class is missing from same.
Refinement refine(const LabeledDataset& train, const Partition& partition,
                  const DefenseConfig& config);

struct TSample {
  std::vector<DocId> positives;
  std::vector<DocId> negatives;
};

// All of diff_minus as positives; floor(t * |positives|) negatives drawn
// uniformly from same. Both lists come back in input order.
TSample t_sample(const std::vector<DocId>& same, const std::vector<DocId>& diff_minus, double t,
                 std::uint64_t rng_seed);

struct Detection {
  // Aligned with the training set: true = predicted poison.
  std::vector<bool> poison;
  // Fold of each id in positives ∪ negatives, for auditing.
  std::map<DocId, std::size_t> fold_of;
};

// Stratified k-fold: ids in positives ∪ negatives are scored by the model
// trained without their fold; everything else by one model trained on the
// full sample. Probability exactly 0.5 counts as benign.
Detection crossval_detect(const LabeledDataset& train, const std::vector<DocId>& positives,
                          const std::vector<DocId>& negatives, std::size_t folds,
                          const StrongHyper& hyper, std::uint64_t rng_seed, bool parallel = true);

struct SanitizeResult {
  SanitizedSet sanitized;
  DefenseReport report;
  Partition partition;
  Partition refined;
};

// Steps 1-4 with the skip flags honored. The mask, when given, only feeds
// the report; it never steers the defense.
SanitizeResult sanitize(const LabeledDataset& poisoned_train, const Classifier& weak_model,
                        const DefenseConfig& config, const PoisonMask* mask = nullptr);

// Strong model on the kept docs and their given labels.
HashedNgramClassifier train_final(const SanitizedSet& sanitized, const LabeledDataset& train,
                                  const StrongHyper& hyper);

// Weak method selection for sanitize.
enum class WeakMethod { Simple, Oracle };

std::string to_string(WeakMethod method);
WeakMethod weak_method_from_string(std::string_view name);

}  // namespace weaksan
