#include "weaksan/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "weaksan/errors.hpp"

namespace weaksan {

namespace {

void require_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ValidationError(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
  }
}

// Accuracies arrive as decimals (0.8) whose binary form makes 1 - acc
// slightly off, so k = 4.000000000000001. Rounding to 12 significant digits
// gives back the decimal answer; nothing finer is meaningful for a rate.
double snap(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  const double scale = std::pow(10.0, 11 - static_cast<int>(std::floor(std::log10(std::abs(v)))));
  return std::round(v * scale) / scale;
}

std::optional<double> ratio_k(double acc) {
  if (acc >= 1.0) return std::nullopt;
  return snap(acc / (1.0 - acc));
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string to_string(RateMethod method) {
  return method == RateMethod::Exact ? "exact" : "approx";
}

nlohmann::ordered_json to_json(const RateEstimate& e) {
  nlohmann::ordered_json j;
  j["method"] = to_string(e.method);
  j["eps"] = e.eps;
  j["acc"] = e.acc;
  j["asr"] = e.asr;
  j["k"] = optional_number(e.k);
  j["same_size_fraction"] = e.same_size_fraction;
  j["eps_same"] = e.eps_same;
  j["eps_diff"] = e.eps_diff;
  j["warnings"] = e.warnings;
  return j;
}

double expected_same_fraction(double eps, double acc, double asr) {
  require_unit(eps, "eps");
  require_unit(acc, "acc");
  require_unit(asr, "asr");
  return (1.0 - eps) * acc + eps * asr;
}

RateEstimate exact_poison_rates(double eps, double acc, double asr) {
  const double same = expected_same_fraction(eps, acc, asr);
  if (!(same > 0.0)) {
    throw ValidationError("exact_poison_rates: the agreeing subset D_same is expected to be empty");
  }
  if (!(same < 1.0)) {
    throw ValidationError(
        "exact_poison_rates: the disagreeing subset D_diff is expected to be empty");
  }
  RateEstimate r;
  r.method = RateMethod::Exact;
  r.eps = eps;
  r.acc = acc;
  r.asr = asr;
  r.k = ratio_k(acc);
  r.same_size_fraction = same;
  r.eps_same = eps * asr / same;
  r.eps_diff = eps * (1.0 - asr) / (1.0 - same);
  return r;
}

double binary_asr_from_acc(double acc) {
  require_unit(acc, "acc");
  return 1.0 - acc;
}

RateEstimate approx_poison_rates(double eps, double acc) {
  require_unit(eps, "eps");
  require_unit(acc, "acc");
  if (!(acc > 0.5)) {
    throw ValidationError("approx_poison_rates: acc must exceed 0.5 (k = acc/(1-acc) > 1)");
  }
  RateEstimate r;
  r.method = RateMethod::Approx;
  r.eps = eps;
  r.acc = acc;
  r.asr = 1.0 - acc;
  r.k = ratio_k(acc);
  r.same_size_fraction = acc;
  if (eps > 0.1) {
    r.warnings.push_back("eps = " + std::to_string(eps) +
                         " is outside the small-eps regime of the approximation");
  }
  if (r.k) {
    r.eps_same = eps / *r.k;
    r.eps_diff = eps * *r.k;
  } else {
    r.eps_same = 0.0;
    r.eps_diff = eps > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (r.eps_diff > 1.0) {
    r.warnings.push_back("eps * k = " + std::to_string(r.eps_diff) + " exceeds 1; eps_diff capped");
    r.eps_diff = 1.0;
  }
  return r;
}

TheoremCheck subset_theorem_check(double eps, double acc, double asr) {
  const RateEstimate r = exact_poison_rates(eps, acc, asr);
  // With asr == acc the two sides agree only up to rounding; differences
  // within a few ulps of eps count as equal.
  const double slack = 8.0 * std::numeric_limits<double>::epsilon() * eps;
  return {asr < acc, eps - r.eps_same > slack};
}

TBounds t_bounds(double eps, double acc) {
  require_unit(eps, "eps");
  require_unit(acc, "acc");
  if (!(acc > 0.5)) throw ValidationError("t_bounds: acc must exceed 0.5");
  TBounds b;
  const auto k = ratio_k(acc);
  if (!k) {
    // Perfect model: eps k diverges unless nothing is poisoned, but the upper
    // bound is what matters for t and it is infinite.
    b.upper.reset();
    b.raw_lower = -std::numeric_limits<double>::infinity();
    b.lower = 1.0;
    return b;
  }
  if (eps * *k >= 1.0) {
    throw ValidationError("t_bounds: eps * k = " + std::to_string(eps * *k) +
                          " >= 1, the positive-pool poison mass exceeds the pool");
  }
  b.raw_lower = (1.0 - eps * *k) / (1.0 - eps / *k);
  b.lower = std::max(1.0, b.raw_lower);
  b.upper = t_upper_bound(acc);
  return b;
}

std::optional<double> t_upper_bound(double acc) {
  require_unit(acc, "acc");
  const auto k = ratio_k(acc);
  if (!k) return std::nullopt;
  return snap(*k * *k);
}

void validate_t(double t, double weak_acc) {
  if (!(t > 1.0)) {
    throw ValidationError("t must exceed 1, got " + std::to_string(t));
  }
  require_unit(weak_acc, "weak-model accuracy");
  if (!(weak_acc > 0.5)) {
    throw ValidationError("t cannot be validated: weak-model accuracy " +
                          std::to_string(weak_acc) + " is not above 0.5");
  }
  const auto upper = t_upper_bound(weak_acc);
  if (upper && !(t < *upper)) {
    std::ostringstream msg;
    msg << "t = " << t << " is not below k^2 = " << *upper << " for weak-model accuracy "
        << weak_acc;
    throw ValidationError(msg.str());
  }
}

ComparisonReport compare_actual_vs_estimated(const Partition& partition, const PoisonMask& mask,
                                             double acc, double asr) {
  require_unit(acc, "acc");
  require_unit(asr, "asr");
  ComparisonReport c;
  c.acc = acc;
  c.asr = asr;
  c.train_size = partition.size();
  if (c.train_size == 0) throw ValidationError("compare_actual_vs_estimated: empty partition");
  c.same_count = partition.same.size();
  c.diff_count = partition.diff.size();
  for (DocId id : partition.same) c.same_poison += mask.contains(id) ? 1 : 0;
  for (DocId id : partition.diff) c.diff_poison += mask.contains(id) ? 1 : 0;
  c.poison_count = c.same_poison + c.diff_poison;
  if (c.poison_count != mask.indices.size()) {
    throw ValidationError("compare_actual_vs_estimated: the mask names ids outside the partition");
  }
  c.eps = static_cast<double>(c.poison_count) / static_cast<double>(c.train_size);
  if (c.same_count > 0) {
    c.actual_eps_same = static_cast<double>(c.same_poison) / static_cast<double>(c.same_count);
  }
  if (c.diff_count > 0) {
    c.actual_eps_diff = static_cast<double>(c.diff_poison) / static_cast<double>(c.diff_count);
  }
  try {
    c.exact = exact_poison_rates(c.eps, acc, asr);
  } catch (const ValidationError& e) {
    c.notes.push_back(std::string("exact estimate undefined: ") + e.what());
  }
  try {
    c.approx = approx_poison_rates(c.eps, acc);
  } catch (const ValidationError& e) {
    c.notes.push_back(std::string("approx estimate undefined: ") + e.what());
  }
  return c;
}

nlohmann::ordered_json to_json(const ComparisonReport& c) {
  nlohmann::ordered_json j;
  j["train_size"] = c.train_size;
  j["poison_count"] = c.poison_count;
  j["eps"] = c.eps;
  j["acc"] = c.acc;
  j["asr"] = c.asr;
  j["same_count"] = c.same_count;
  j["diff_count"] = c.diff_count;
  j["same_poison"] = c.same_poison;
  j["diff_poison"] = c.diff_poison;
  auto row = [&](const char* name, std::optional<double> same, std::optional<double> diff) {
    nlohmann::ordered_json r;
    r["eps_same"] = optional_number(same);
    r["eps_diff"] = optional_number(diff);
    if (name != std::string("actual") && same && c.actual_eps_same) {
      r["abs_dev_eps_same"] = std::abs(*same - *c.actual_eps_same);
    }
    if (name != std::string("actual") && diff && c.actual_eps_diff) {
      r["abs_dev_eps_diff"] = std::abs(*diff - *c.actual_eps_diff);
    }
    j["rows"][name] = r;
  };
  row("actual", c.actual_eps_same, c.actual_eps_diff);
  row("exact", c.exact ? std::optional(c.exact->eps_same) : std::nullopt,
      c.exact ? std::optional(c.exact->eps_diff) : std::nullopt);
  row("approx", c.approx ? std::optional(c.approx->eps_same) : std::nullopt,
      c.approx ? std::optional(c.approx->eps_diff) : std::nullopt);
  j["notes"] = c.notes;
  return j;
}

std::string comparison_csv_header() {
  return "train_size,poison_count,eps,acc,asr,same_count,diff_count,actual_eps_same,"
         "actual_eps_diff,exact_eps_same,exact_eps_diff,approx_eps_same,approx_eps_diff";
}

std::string to_csv(const ComparisonReport& c) {
  std::ostringstream out;
  out.precision(10);
  auto field = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  out << c.train_size << ',' << c.poison_count << ',' << c.eps << ',' << c.acc << ',' << c.asr
      << ',' << c.same_count << ',' << c.diff_count;
  field(c.actual_eps_same);
  field(c.actual_eps_diff);
  field(c.exact ? std::optional(c.exact->eps_same) : std::nullopt);
  field(c.exact ? std::optional(c.exact->eps_diff) : std::nullopt);
  field(c.approx ? std::optional(c.approx->eps_same) : std::nullopt);
  field(c.approx ? std::optional(c.approx->eps_diff) : std::nullopt);
  return out.str();
}

}  // namespace weaksan
