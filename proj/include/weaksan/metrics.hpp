#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "weaksan/analysis.hpp"
#include "weaksan/attack.hpp"
#include "weaksan/classifiers.hpp"
#include "weaksan/partition.hpp"

namespace weaksan {

// An exact ratio. The integer counts are the source of truth; value() is
// derived from them so equal predictions give bit-equal reports.
struct CountRate {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  double value() const {
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

struct EvalMetrics {
  CountRate acc;
  CountRate asr;
};

// Share of triggered (non-target) test docs predicted as the target.
CountRate attack_success_rate(const Classifier& model, const LabeledDataset& poisoned_test,
                              ClassIndex target);

CountRate clean_accuracy(const Classifier& model, const LabeledDataset& clean_test);

EvalMetrics evaluate(const Classifier& model, const LabeledDataset& clean_test,
                     const LabeledDataset& poisoned_test, ClassIndex target);

// |kept ∩ poisoned| / |kept|
double sanitized_poison_rate(const SanitizedSet& sanitized, const PoisonMask& mask);

// |kept| / |train|. An empty kept set gives 0 and a warning in `warning`.
double retained_ratio(const SanitizedSet& sanitized, const LabeledDataset& train,
                      std::string* warning = nullptr);

// Poisoned members of an id list, as a count rate (denominator = list size).
CountRate poison_count_in(const std::vector<DocId>& ids, const PoisonMask& mask);

struct DetectorCounts {
  // Against the poison mask, over the whole training set.
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  std::size_t true_negative = 0;
};

struct DefenseSizes {
  std::size_t train = 0;
  std::size_t same = 0;
  std::size_t diff = 0;
  std::size_t same_plus = 0;
  std::size_t diff_minus = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t sanitized = 0;
};

// Poison counts per stage; only filled when a mask is supplied.
struct StagePoison {
  CountRate train;
  CountRate same;
  CountRate diff;
  CountRate same_plus;
  CountRate diff_minus;
  CountRate sanitized;
  std::optional<DetectorCounts> detector;
};

struct DefenseReport {
  nlohmann::ordered_json config;
  DefenseSizes sizes;
  std::vector<std::size_t> refinement_moves;  // ids moved into same, per iteration
  std::optional<StagePoison> actual;
  std::optional<RateEstimate> exact;
  std::optional<RateEstimate> approx;
  std::optional<EvalMetrics> nodefense;
  std::optional<EvalMetrics> wedef;
  std::optional<EvalMetrics> groundtruth;
  std::optional<EvalMetrics> weak;
  std::vector<std::string> notes;
};

// Fills the exact and approximate estimates from the training poison rate
// and the weak model's measured accuracy and attack success rate. Undefined
// estimates become notes.
void attach_estimates(DefenseReport& report, double eps, double weak_acc, double weak_asr);

// {config, sizes, rates:{actual, exact estimate, approximate estimate}, eval:{nodefense, wedef,
// groundtruth}, counts}
nlohmann::ordered_json to_json(const DefenseReport& report);
nlohmann::ordered_json to_json(const EvalMetrics& metrics);

// One CSV row per run for aggregation.
std::string report_csv_header();
std::string to_csv_row(const DefenseReport& report, const std::string& run_label);

}  // namespace weaksan
