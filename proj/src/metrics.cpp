#include "weaksan/metrics.hpp"

#include <sstream>

#include "weaksan/errors.hpp"

namespace weaksan {

namespace {

nlohmann::ordered_json count_json(const CountRate& r) {
  nlohmann::ordered_json j;
  j["numerator"] = r.numerator;
  j["denominator"] = r.denominator;
  return j;
}

nlohmann::ordered_json rate_or_null(const CountRate& r) {
  return r.denominator > 0 ? nlohmann::ordered_json(r.value()) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json eval_or_null(const std::optional<EvalMetrics>& m) {
  return m ? to_json(*m) : nlohmann::ordered_json(nullptr);
}

}  // namespace

CountRate attack_success_rate(const Classifier& model, const LabeledDataset& poisoned_test,
                              ClassIndex target) {
  if (poisoned_test.size() == 0) throw ValidationError("attack_success_rate: empty poisoned test set");
  CountRate r{0, poisoned_test.size()};
  for (const auto& doc : poisoned_test.docs()) r.numerator += model.predict(doc) == target ? 1 : 0;
  return r;
}

CountRate clean_accuracy(const Classifier& model, const LabeledDataset& clean_test) {
  if (clean_test.size() == 0) throw ValidationError("clean_accuracy: empty test set");
  CountRate r{0, clean_test.size()};
  for (std::size_t i = 0; i < clean_test.size(); ++i) {
    r.numerator += model.predict(clean_test.doc(i)) == clean_test.label(i) ? 1 : 0;
  }
  return r;
}

EvalMetrics evaluate(const Classifier& model, const LabeledDataset& clean_test,
                     const LabeledDataset& poisoned_test, ClassIndex target) {
  return {clean_accuracy(model, clean_test), attack_success_rate(model, poisoned_test, target)};
}

double sanitized_poison_rate(const SanitizedSet& sanitized, const PoisonMask& mask) {
  if (sanitized.kept.empty()) throw ValidationError("sanitized_poison_rate: empty sanitized set");
  return poison_count_in(sanitized.kept, mask).value();
}

double retained_ratio(const SanitizedSet& sanitized, const LabeledDataset& train,
                      std::string* warning) {
  if (train.size() == 0) throw ValidationError("retained_ratio: empty training set");
  if (sanitized.kept.empty() && warning) *warning = "sanitized set is empty";
  return static_cast<double>(sanitized.kept.size()) / static_cast<double>(train.size());
}

CountRate poison_count_in(const std::vector<DocId>& ids, const PoisonMask& mask) {
  CountRate r{0, ids.size()};
  for (DocId id : ids) r.numerator += mask.contains(id) ? 1 : 0;
  return r;
}

void attach_estimates(DefenseReport& report, double eps, double weak_acc, double weak_asr) {
  try {
    report.exact = exact_poison_rates(eps, weak_acc, weak_asr);
  } catch (const ValidationError& e) {
    report.notes.push_back(std::string("exact estimate undefined: ") + e.what());
  }
  try {
    report.approx = approx_poison_rates(eps, weak_acc);
    for (const auto& w : report.approx->warnings) report.notes.push_back("approx estimate: " + w);
  } catch (const ValidationError& e) {
    report.notes.push_back(std::string("approx estimate undefined: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["acc"] = m.acc.value();
  j["asr"] = m.asr.value();
  return j;
}

nlohmann::ordered_json to_json(const DefenseReport& r) {
  nlohmann::ordered_json j;
  j["config"] = r.config;

  auto& sizes = j["sizes"];
  sizes["train"] = r.sizes.train;
  sizes["same"] = r.sizes.same;
  sizes["diff"] = r.sizes.diff;
  sizes["same_plus"] = r.sizes.same_plus;
  sizes["diff_minus"] = r.sizes.diff_minus;
  sizes["positives"] = r.sizes.positives;
  sizes["negatives"] = r.sizes.negatives;
  sizes["sanitized"] = r.sizes.sanitized;
  sizes["retained_ratio"] =
      r.sizes.train > 0 ? nlohmann::ordered_json(static_cast<double>(r.sizes.sanitized) /
                                                 static_cast<double>(r.sizes.train))
                        : nlohmann::ordered_json(nullptr);

  auto& rates = j["rates"];
  if (r.actual) {
    auto& a = rates["actual"];
    a["train"] = rate_or_null(r.actual->train);
    a["same"] = rate_or_null(r.actual->same);
    a["diff"] = rate_or_null(r.actual->diff);
    a["same_plus"] = rate_or_null(r.actual->same_plus);
    a["diff_minus"] = rate_or_null(r.actual->diff_minus);
    a["sanitized"] = rate_or_null(r.actual->sanitized);
  } else {
    rates["actual"] = nullptr;
  }
  rates["eq2"] = r.exact ? to_json(*r.exact) : nlohmann::ordered_json(nullptr);
  rates["eq3"] = r.approx ? to_json(*r.approx) : nlohmann::ordered_json(nullptr);

  auto& ev = j["eval"];
  ev["nodefense"] = eval_or_null(r.nodefense);
  ev["wedef"] = eval_or_null(r.wedef);
  ev["groundtruth"] = eval_or_null(r.groundtruth);
  ev["weak"] = eval_or_null(r.weak);

  auto& counts = j["counts"];
  counts["refinement_moves"] = r.refinement_moves;
  if (r.actual) {
    auto& p = counts["poison"];
    p["train"] = count_json(r.actual->train);
    p["same"] = count_json(r.actual->same);
    p["diff"] = count_json(r.actual->diff);
    p["same_plus"] = count_json(r.actual->same_plus);
    p["diff_minus"] = count_json(r.actual->diff_minus);
    p["sanitized"] = count_json(r.actual->sanitized);
    if (r.actual->detector) {
      auto& d = counts["detector"];
      d["true_positive"] = r.actual->detector->true_positive;
      d["false_positive"] = r.actual->detector->false_positive;
      d["false_negative"] = r.actual->detector->false_negative;
      d["true_negative"] = r.actual->detector->true_negative;
    }
  }
  auto eval_counts = [&](const char* name, const std::optional<EvalMetrics>& m) {
    if (!m) return;
    counts["eval"][name]["acc"] = count_json(m->acc);
    counts["eval"][name]["asr"] = count_json(m->asr);
  };
  eval_counts("nodefense", r.nodefense);
  eval_counts("wedef", r.wedef);
  eval_counts("groundtruth", r.groundtruth);
  eval_counts("weak", r.weak);
  j["notes"] = r.notes;
  return j;
}

std::string report_csv_header() {
  return "run,train,same,diff,same_plus,diff_minus,sanitized,eps_train,eps_same,eps_same_plus,"
         "eps_sanitized,exact_eps_same,approx_eps_same,nodefense_acc,nodefense_asr,wedef_acc,"
         "wedef_asr,groundtruth_acc,groundtruth_asr";
}

std::string to_csv_row(const DefenseReport& r, const std::string& run_label) {
  std::ostringstream out;
  out.precision(10);
  auto opt = [&](bool present, double v) {
    out << ',';
    if (present) out << v;
  };
  auto rate = [&](const CountRate* c) { opt(c && c->denominator > 0, c ? c->value() : 0.0); };
  out << run_label << ',' << r.sizes.train << ',' << r.sizes.same << ',' << r.sizes.diff << ','
      << r.sizes.same_plus << ',' << r.sizes.diff_minus << ',' << r.sizes.sanitized;
  rate(r.actual ? &r.actual->train : nullptr);
  rate(r.actual ? &r.actual->same : nullptr);
  rate(r.actual ? &r.actual->same_plus : nullptr);
  rate(r.actual ? &r.actual->sanitized : nullptr);
  opt(r.exact.has_value(), r.exact ? r.exact->eps_same : 0.0);
  opt(r.approx.has_value(), r.approx ? r.approx->eps_same : 0.0);
  for (const auto* m : {&r.nodefense, &r.wedef, &r.groundtruth}) {
    opt(m->has_value(), *m ? (*m)->acc.value() : 0.0);
    opt(m->has_value(), *m ? (*m)->asr.value() : 0.0);
  }
  return out.str();
}

}  // namespace weaksan
