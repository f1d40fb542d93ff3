#include "weaksan/defense.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <unordered_set>

#include "weaksan/analysis.hpp"
#include "weaksan/errors.hpp"
#include "weaksan/rng.hpp"

namespace weaksan {

std::string to_string(Provenance p) {
  return p == Provenance::SamePlus ? "same+" : "recovered-diff";
}

std::string to_string(WeakMethod method) {
  return method == WeakMethod::Simple ? "simple" : "oracle";
}

WeakMethod weak_method_from_string(std::string_view name) {
  if (name == "simple") return WeakMethod::Simple;
  if (name == "oracle") return WeakMethod::Oracle;
  throw ValidationError("unknown weak method '" + std::string(name) + "' (simple|oracle)");
}

void DefenseConfig::validate() const {
  if (!(t > 1.0)) throw ValidationError("defense: t must exceed 1, got " + std::to_string(t));
  if (folds < 2) throw ValidationError("defense: folds must be at least 2");
  if (weak_accuracy) validate_t(t, *weak_accuracy);
}

nlohmann::ordered_json to_json(const DefenseConfig& c) {
  nlohmann::ordered_json j;
  j["refinement_iters"] = c.refinement_iters;
  j["t"] = c.t;
  j["folds"] = c.folds;
  j["skip_refine"] = c.skip_refine;
  j["skip_detector"] = c.skip_detector;
  j["skip_cleaning"] = c.skip_cleaning;
  j["rng_seed"] = c.rng_seed;
  j["parallel_folds"] = c.parallel_folds;
  j["detector_hyper"] = to_json(c.detector_hyper);
  j["refine_hyper"] = to_json(c.refine_hyper);
  j["weak_accuracy"] = c.weak_accuracy ? nlohmann::ordered_json(*c.weak_accuracy)
                                       : nlohmann::ordered_json(nullptr);
  return j;
}

DefenseConfig defense_config_from_json(const nlohmann::json& j) {
  try {
    DefenseConfig c;
    c.refinement_iters = j.value("refinement_iters", c.refinement_iters);
    c.t = j.value("t", c.t);
    c.folds = j.value("folds", c.folds);
    c.skip_refine = j.value("skip_refine", c.skip_refine);
    c.skip_detector = j.value("skip_detector", c.skip_detector);
    c.skip_cleaning = j.value("skip_cleaning", c.skip_cleaning);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.parallel_folds = j.value("parallel_folds", c.parallel_folds);
    if (j.contains("detector_hyper")) c.detector_hyper = strong_hyper_from_json(j["detector_hyper"]);
    if (j.contains("refine_hyper")) c.refine_hyper = weak_hyper_from_json(j["refine_hyper"]);
    if (j.contains("weak_accuracy") && !j["weak_accuracy"].is_null()) {
      c.weak_accuracy = j["weak_accuracy"].get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("defense config: ") + e.what());
  }
}

Partition partition_by_agreement(const LabeledDataset& train, const Classifier& classifier) {
  Partition p;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& doc = train.doc(i);
    (classifier.predict(doc) == train.label(i) ? p.same : p.diff).push_back(doc.id);
  }
  return p;
}

Refinement refine(const LabeledDataset& train, const Partition& partition,
                  const DefenseConfig& config) {
  Refinement out{partition, {}};
  if (config.refinement_iters == 0 || partition.diff.empty()) return out;
  if (partition.same.empty()) throw StageError("refine", "the agreeing subset is empty");

  std::vector<bool> in_same(train.size(), false);
  for (DocId id : partition.same) in_same[train.position_of(id)] = true;

  for (std::size_t iter = 0; iter < config.refinement_iters; ++iter) {
    std::vector<Document> docs;
    std::vector<ClassIndex> labels;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (!in_same[i]) continue;
      docs.push_back(train.doc(i));
      labels.push_back(train.label(i));
    }
    std::vector<std::size_t> counts(train.num_classes(), 0);
    for (ClassIndex c : labels) ++counts[static_cast<std::size_t>(c)];
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) {
        throw StageError("refine", "class '" + train.label_space()[c] +
                                       "' has no documents in the agreeing subset");
      }
    }
    WeakHyper hyper = config.refine_hyper;
    hyper.rng_seed = derive_seed(derive_seed(config.rng_seed, "refine"), iter);
    const auto head = FrozenEmbeddingClassifier::train(docs, labels, train.num_classes(), hyper);

    std::size_t moved = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (in_same[i]) continue;
      if (head.predict(train.doc(i)) == train.label(i)) {
        in_same[i] = true;
        ++moved;
      }
    }
    out.moved.push_back(moved);
  }

  out.partition = Partition{};
  for (std::size_t i = 0; i < train.size(); ++i) {
    (in_same[i] ? out.partition.same : out.partition.diff).push_back(train.doc(i).id);
  }
  return out;
}

TSample t_sample(const std::vector<DocId>& same, const std::vector<DocId>& diff_minus, double t,
                 std::uint64_t rng_seed) {
  if (!(t > 0.0)) throw ValidationError("t_sample: t must be positive");
  const auto wanted =
      static_cast<std::size_t>(std::floor(t * static_cast<double>(diff_minus.size())));
  if (wanted > same.size()) {
    const double max_t = diff_minus.empty()
                             ? 0.0
                             : static_cast<double>(same.size()) /
                                   static_cast<double>(diff_minus.size());
    throw StageError("t-sample", "needs " + std::to_string(wanted) + " negatives but the agreeing "
                                 "subset has " + std::to_string(same.size()) +
                                 "; the largest feasible t is " + std::to_string(max_t));
  }
  TSample s;
  s.positives = diff_minus;
  Rng rng(derive_seed(rng_seed, "t-sample"));
  auto picks = sample_without_replacement(same.size(), wanted, rng);
  std::sort(picks.begin(), picks.end());
  s.negatives.reserve(picks.size());
  for (std::size_t p : picks) s.negatives.push_back(same[p]);
  return s;
}

namespace {

HashedNgramClassifier fit_detector(const LabeledDataset& train, const std::vector<DocId>& ids,
                                   const std::vector<ClassIndex>& labels, StrongHyper hyper,
                                   std::uint64_t seed) {
  std::vector<Document> docs;
  docs.reserve(ids.size());
  for (DocId id : ids) docs.push_back(train.doc_by_id(id));
  hyper.rng_seed = seed;
  return HashedNgramClassifier::train(docs, labels, 2, hyper);
}

}  // namespace

Detection crossval_detect(const LabeledDataset& train, const std::vector<DocId>& positives,
                          const std::vector<DocId>& negatives, std::size_t folds,
                          const StrongHyper& hyper, std::uint64_t rng_seed, bool parallel) {
  if (folds < 2) throw ValidationError("crossval_detect: folds must be at least 2");
  if (positives.size() + negatives.size() < folds) {
    throw StageError("detect", "only " + std::to_string(positives.size() + negatives.size()) +
                                   " samples for " + std::to_string(folds) + " folds");
  }
  // Every training complement needs both classes: with round-robin stratified
  // assignment that holds as soon as each class has two members.
  if (positives.size() < 2 || negatives.size() < 2) {
    throw StageError("detect", "fold degeneracy: need at least 2 positives and 2 negatives, got " +
                                   std::to_string(positives.size()) + " and " +
                                   std::to_string(negatives.size()));
  }
  {
    std::unordered_set<DocId> seen(positives.begin(), positives.end());
    for (DocId id : negatives) {
      if (seen.contains(id)) throw ValidationError("crossval_detect: positives and negatives overlap");
    }
  }

  // Stratified round-robin over shuffled classes; fold sizes differ by at most one.
  Rng rng(derive_seed(rng_seed, "folds"));
  std::vector<DocId> pos = positives;
  std::vector<DocId> neg = negatives;
  shuffle(pos, rng);
  shuffle(neg, rng);
  Detection out;
  std::vector<std::vector<DocId>> fold_ids(folds);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    fold_ids[i % folds].push_back(pos[i]);
    out.fold_of[pos[i]] = i % folds;
  }
  for (std::size_t j = 0; j < neg.size(); ++j) {
    const std::size_t f = (pos.size() + j) % folds;
    fold_ids[f].push_back(neg[j]);
    out.fold_of[neg[j]] = f;
  }
  const std::unordered_set<DocId> positive_set(positives.begin(), positives.end());
  auto label_of = [&](DocId id) { return positive_set.contains(id) ? ClassIndex{1} : ClassIndex{0}; };

  auto train_fold = [&](std::size_t f) {
    std::vector<DocId> ids;
    std::vector<ClassIndex> labels;
    for (std::size_t g = 0; g < folds; ++g) {
      if (g == f) continue;
      for (DocId id : fold_ids[g]) {
        ids.push_back(id);
        labels.push_back(label_of(id));
      }
    }
    return fit_detector(train, ids, labels, hyper,
                        derive_seed(derive_seed(rng_seed, "fold"), static_cast<std::uint64_t>(f)));
  };
  auto train_all = [&]() {
    std::vector<DocId> ids;
    std::vector<ClassIndex> labels;
    for (const auto& fold : fold_ids) {
      for (DocId id : fold) {
        ids.push_back(id);
        labels.push_back(label_of(id));
      }
    }
    return fit_detector(train, ids, labels, hyper, derive_seed(rng_seed, "all"));
  };

  std::vector<std::optional<HashedNgramClassifier>> fold_models(folds);
  std::optional<HashedNgramClassifier> all_model;
  if (parallel) {
    std::vector<std::future<HashedNgramClassifier>> jobs;
    for (std::size_t f = 0; f < folds; ++f) jobs.push_back(std::async(std::launch::async, train_fold, f));
    auto all_job = std::async(std::launch::async, train_all);
    for (std::size_t f = 0; f < folds; ++f) fold_models[f].emplace(jobs[f].get());
    all_model.emplace(all_job.get());
  } else {
    for (std::size_t f = 0; f < folds; ++f) fold_models[f].emplace(train_fold(f));
    all_model.emplace(train_all());
  }

  // argmax ties resolve to the lower index, so p = 0.5 stays benign (0).
  out.poison.assign(train.size(), false);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& doc = train.doc(i);
    const auto it = out.fold_of.find(doc.id);
    const auto& model = it == out.fold_of.end() ? *all_model : *fold_models[it->second];
    out.poison[i] = model.predict(doc) == 1;
  }
  return out;
}

namespace {

StagePoison measure(const PoisonMask& mask, const LabeledDataset& train, const Partition& p,
                    const Partition& refined, const SanitizedSet& sanitized,
                    const Detection* detection) {
  StagePoison s;
  s.train = poison_count_in(train.ids(), mask);
  s.same = poison_count_in(p.same, mask);
  s.diff = poison_count_in(p.diff, mask);
  s.same_plus = poison_count_in(refined.same, mask);
  s.diff_minus = poison_count_in(refined.diff, mask);
  s.sanitized = poison_count_in(sanitized.kept, mask);
  if (detection) {
    DetectorCounts d;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const bool truth = mask.contains(train.doc(i).id);
      const bool flagged = detection->poison[i];
      if (truth && flagged) ++d.true_positive;
      if (!truth && flagged) ++d.false_positive;
      if (truth && !flagged) ++d.false_negative;
      if (!truth && !flagged) ++d.true_negative;
    }
    s.detector = d;
  }
  return s;
}

void keep(SanitizedSet& s, const LabeledDataset& train, std::size_t pos, Provenance provenance) {
  const DocId id = train.doc(pos).id;
  s.kept.push_back(id);
  s.labels[id] = train.label(pos);
  s.provenance[id] = provenance;
}

}  // namespace

SanitizeResult sanitize(const LabeledDataset& poisoned_train, const Classifier& weak_model,
                        const DefenseConfig& config, const PoisonMask* mask) {
  config.validate();
  if (poisoned_train.empty()) throw ValidationError("sanitize: empty training set");
  SanitizeResult r;
  r.report.config = to_json(config);
  r.partition = partition_by_agreement(poisoned_train, weak_model);
  r.refined = r.partition;

  std::vector<bool> in_same_plus(poisoned_train.size(), false);
  std::optional<Detection> detection;
  TSample sample;

  if (!config.skip_cleaning) {
    if (!config.skip_refine) {
      auto refinement = refine(poisoned_train, r.partition, config);
      r.refined = std::move(refinement.partition);
      r.report.refinement_moves = std::move(refinement.moved);
    }
    if (!config.skip_detector) {
      if (r.refined.diff.empty()) {
        r.report.notes.push_back("detector skipped: the disagreeing subset is empty");
      } else {
        sample = t_sample(r.partition.same, r.refined.diff, config.t,
                          derive_seed(config.rng_seed, "t-sample"));
        detection = crossval_detect(poisoned_train, sample.positives, sample.negatives,
                                    config.folds, config.detector_hyper,
                                    derive_seed(config.rng_seed, "detect"), config.parallel_folds);
      }
    }
  }

  const auto& kept_side = config.skip_cleaning ? r.partition.same : r.refined.same;
  for (DocId id : kept_side) in_same_plus[poisoned_train.position_of(id)] = true;
  for (std::size_t i = 0; i < poisoned_train.size(); ++i) {
    if (detection) {
      if (detection->poison[i]) continue;
      keep(r.sanitized, poisoned_train, i,
           in_same_plus[i] ? Provenance::SamePlus : Provenance::RecoveredDiff);
    } else if (in_same_plus[i]) {
      keep(r.sanitized, poisoned_train, i, Provenance::SamePlus);
    }
  }

  auto& sizes = r.report.sizes;
  sizes.train = poisoned_train.size();
  sizes.same = r.partition.same.size();
  sizes.diff = r.partition.diff.size();
  sizes.same_plus = r.refined.same.size();
  sizes.diff_minus = r.refined.diff.size();
  sizes.positives = sample.positives.size();
  sizes.negatives = sample.negatives.size();
  sizes.sanitized = r.sanitized.size();
  if (mask) {
    r.report.actual = measure(*mask, poisoned_train, r.partition, r.refined, r.sanitized,
                              detection ? &*detection : nullptr);
  }
  return r;
}

HashedNgramClassifier train_final(const SanitizedSet& sanitized, const LabeledDataset& train,
                                  const StrongHyper& hyper) {
  if (sanitized.kept.empty()) throw StageError("train-final", "the sanitized set is empty");
  std::vector<Document> docs;
  std::vector<ClassIndex> labels;
  docs.reserve(sanitized.kept.size());
  for (DocId id : sanitized.kept) {
    docs.push_back(train.doc_by_id(id));
    labels.push_back(sanitized.labels.at(id));
  }
  std::vector<std::size_t> counts(train.num_classes(), 0);
  for (ClassIndex c : labels) ++counts[static_cast<std::size_t>(c)];
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw StageError("train-final",
                       "class '" + train.label_space()[c] + "' is absent from the sanitized set");
    }
  }
  return HashedNgramClassifier::train(docs, labels, train.num_classes(), hyper);
}

}  // namespace weaksan
