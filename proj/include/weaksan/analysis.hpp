#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "weaksan/attack.hpp"
#include "weaksan/partition.hpp"

namespace weaksan {

enum class RateMethod { Exact, Approx };

std::string to_string(RateMethod method);

// Predicted sizes and poison rates of the agreeing / disagreeing subsets.
struct RateEstimate {
  double same_size_fraction = 0.0;
  double eps_same = 0.0;
  double eps_diff = 0.0;
  RateMethod method = RateMethod::Exact;
  double eps = 0.0;
  double acc = 0.0;
  double asr = 0.0;
  // acc / (1 - acc); empty when acc == 1.
  std::optional<double> k;
  std::vector<std::string> warnings;
};

nlohmann::ordered_json to_json(const RateEstimate& estimate);

// (1 - eps) * acc + eps * asr
double expected_same_fraction(double eps, double acc, double asr);

RateEstimate exact_poison_rates(double eps, double acc, double asr);

// Binary tasks: a poisoned doc lands in the agreeing subset exactly when the
// model gets its true label wrong.
double binary_asr_from_acc(double acc);

// Small-eps form with k = acc / (1 - acc): eps_same ~ eps / k, eps_diff ~ eps * k.
// eps_diff is capped at 1 (with a warning); eps > 0.1 also warns. acc == 1 is
// accepted as the k -> infinity limit.
RateEstimate approx_poison_rates(double eps, double acc);

struct TheoremCheck {
  bool better_than_random = false;  // asr < acc
  bool cleaner = false;             // eps_same < eps
};

// eps_same within a few ulps of eps is not "cleaner".
TheoremCheck subset_theorem_check(double eps, double acc, double asr);

struct TBounds {
  double lower = 1.0;            // exclusive
  std::optional<double> upper;   // k^2, exclusive; empty means unbounded
  double raw_lower = 1.0;        // (1 - eps k) / (1 - eps / k) before clamping at 1

  bool admits(double t) const { return t > lower && (!upper || t < *upper); }
};

TBounds t_bounds(double eps, double acc);

// k^2 for a weak model of this accuracy; empty when acc == 1.
std::optional<double> t_upper_bound(double acc);

// Throws ValidationError unless 1 < t < k^2 for the given weak-model accuracy.
void validate_t(double t, double weak_acc);

struct ComparisonReport {
  double eps = 0.0;  // measured rate of the whole training set
  double acc = 0.0;
  double asr = 0.0;
  std::size_t train_size = 0;
  std::size_t poison_count = 0;
  std::size_t same_count = 0;
  std::size_t diff_count = 0;
  std::size_t same_poison = 0;
  std::size_t diff_poison = 0;
  std::optional<double> actual_eps_same;
  std::optional<double> actual_eps_diff;
  std::optional<RateEstimate> exact;
  std::optional<RateEstimate> approx;
  std::vector<std::string> notes;
};

// Measured subset poison rates next to both closed forms, using the measured
// accuracy and attack success rate of the benign model.
ComparisonReport compare_actual_vs_estimated(const Partition& partition, const PoisonMask& mask,
                                             double acc, double asr);

nlohmann::ordered_json to_json(const ComparisonReport& report);
std::string comparison_csv_header();
std::string to_csv(const ComparisonReport& report);

}  // namespace weaksan
