#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "weaksan/defense.hpp"
#include "weaksan/errors.hpp"
#include "weaksan/metrics.hpp"
#include "weaksan/rng.hpp"

using namespace weaksan;
using weaksan::testing::make_dataset;
using weaksan::testing::small_spec;
using weaksan::testing::TableClassifier;

namespace {

StrongHyper simple_hyper() {
  StrongHyper h;
  h.learning_rate = 0.02;
  h.l2 = 1e-5;
  h.bigrams = false;
  return h;
}

// A word-poisoned synthetic training set and the Simple weak model for it.
struct DeskRun {
  SyntheticCorpus synth;
  Split parts;
  PoisonedTrain poisoned;
  HashedNgramClassifier weak;
};

const DeskRun& desk_run() {
  static const DeskRun run = [] {
    auto synth = generate_synthetic(small_spec(7, 2500));
    auto parts = split(synth.dataset, 0.2, 1);
    std::vector<std::string> exclude;
    for (const auto& list : synth.seeds) exclude.insert(exclude.end(), list.begin(), list.end());
    TriggerSpec spec;
    spec.kind = TriggerKind::Word;
    spec.word_triggers = pick_word_triggers(parts.train, 5, 3, exclude);
    spec.rng_seed = 4;
    auto poisoned = poison_train(parts.train, 0, 0.05, spec);
    auto weak = train_simple(poisoned.dataset.docs(), synth.seeds, simple_hyper());
    return DeskRun{std::move(synth), std::move(parts), std::move(poisoned), std::move(weak)};
  }();
  return run;
}

bool is_subset(const std::vector<DocId>& small, const std::vector<DocId>& big) {
  const std::set<DocId> b(big.begin(), big.end());
  return std::all_of(small.begin(), small.end(), [&](DocId id) { return b.contains(id); });
}

}  // namespace

TEST_CASE("config validation") {
  DefenseConfig c;
  CHECK_NOTHROW(c.validate());
  c.t = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = DefenseConfig{};
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = DefenseConfig{};
  c.t = 3.0;
  c.weak_accuracy = 0.6;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.weak_accuracy = 0.8;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config JSON round trip") {
  DefenseConfig c;
  c.t = 3.5;
  c.folds = 4;
  c.skip_refine = true;
  c.rng_seed = 77;
  const auto back = defense_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back.t == 3.5);
  CHECK(back.folds == 4);
  CHECK(back.skip_refine);
  CHECK(back.rng_seed == 77);
  CHECK_THROWS_AS(defense_config_from_json(nlohmann::json::parse(R"({"folds": "five"})")),
                  ValidationError);
}

TEST_CASE("partition by agreement") {
  const auto train = make_dataset({{"a", 0}, {"b", 1}, {"c", 0}, {"d", 1}});
  const TableClassifier truth({{0, 0}, {1, 1}, {2, 0}, {3, 1}});
  const auto clean = partition_by_agreement(train, truth);
  CHECK(clean.same.size() == 4);
  CHECK(clean.diff.empty());

  // Doc 3 had its label flipped to 0 by the attacker; truth says 1.
  const auto poisoned = make_dataset({{"a", 0}, {"b", 1}, {"c", 0}, {"d", 0}});
  const auto p = partition_by_agreement(poisoned, truth);
  CHECK(p.same == std::vector<DocId>{0, 1, 2});
  CHECK(p.diff == std::vector<DocId>{3});
}

TEST_CASE("perfect oracle isolates exactly the poisoned ids") {
  const auto& run = desk_run();
  OracleParams p;
  p.truth = truth_from(run.parts.train);
  const auto oracle = make_oracle(p);
  const auto part = partition_by_agreement(run.poisoned.dataset, oracle);
  CHECK(part.diff == run.poisoned.mask.indices);
}

TEST_CASE("refine: zero iterations leave the partition alone") {
  const auto& run = desk_run();
  const auto part = partition_by_agreement(run.poisoned.dataset, run.weak);
  DefenseConfig c;
  c.refinement_iters = 0;
  const auto r = refine(run.poisoned.dataset, part, c);
  CHECK(r.partition.same == part.same);
  CHECK(r.partition.diff == part.diff);
  CHECK(r.moved.empty());
}

TEST_CASE("refine is monotone and concentrates poison") {
  const auto& run = desk_run();
  const auto& train = run.poisoned.dataset;
  const auto part = partition_by_agreement(train, run.weak);
  const auto r = refine(train, part, DefenseConfig{});
  CHECK(is_subset(part.same, r.partition.same));
  CHECK(is_subset(r.partition.diff, part.diff));
  CHECK(r.partition.size() == train.size());
  CHECK(r.moved.size() == 2);
  CHECK(r.partition.same.size() == part.same.size() + r.moved[0] + r.moved[1]);
  CHECK(poison_count_in(r.partition.diff, run.poisoned.mask).value() >
        poison_count_in(part.diff, run.poisoned.mask).value());
  CHECK(refine(train, part, DefenseConfig{}).partition.same == r.partition.same);
}

TEST_CASE("refine aborts when a class is missing from the agreeing side") {
  const auto train = make_dataset({{"a b", 0}, {"c d", 0}, {"e f", 1}});
  Partition p;
  p.same = {0, 1};
  p.diff = {2};
  try {
    refine(train, p, DefenseConfig{});
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "refine");
  }
  Partition nothing_to_move;
  nothing_to_move.same = {0, 1, 2};
  CHECK(refine(train, nothing_to_move, DefenseConfig{}).partition.same.size() == 3);
}

TEST_CASE("t_sample") {
  std::vector<DocId> same, diff;
  for (DocId i = 0; i < 1000; ++i) same.push_back(i);
  for (DocId i = 1000; i < 1100; ++i) diff.push_back(i);
  const auto s = t_sample(same, diff, 2.0, 5);
  CHECK(s.positives == diff);
  CHECK(s.negatives.size() == 200);
  CHECK(std::is_sorted(s.negatives.begin(), s.negatives.end()));
  CHECK(std::set<DocId>(s.negatives.begin(), s.negatives.end()).size() == 200);
  CHECK(is_subset(s.negatives, same));
  CHECK(t_sample(same, diff, 2.0, 5).negatives == s.negatives);
  CHECK(t_sample(same, diff, 2.0, 6).negatives != s.negatives);
  CHECK(t_sample(same, diff, 2.5, 5).negatives.size() == 250);

  try {
    t_sample(same, diff, 11.0, 5);
    FAIL("expected an error");
  } catch (const StageError& e) {
    CHECK(std::string(e.what()).find("largest feasible t is 10") != std::string::npos);
  }
}

TEST_CASE("crossval_detect: hygiene, fold sizes, determinism") {
  const auto& run = desk_run();
  const auto& train = run.poisoned.dataset;
  const auto part = partition_by_agreement(train, run.weak);
  const auto refined = refine(train, part, DefenseConfig{}).partition;
  const auto sample = t_sample(part.same, refined.diff, 2.0, 1);
  StrongHyper h;
  const auto d = crossval_detect(train, sample.positives, sample.negatives, 5, h, 8, true);

  CHECK(d.poison.size() == train.size());
  CHECK(d.fold_of.size() == sample.positives.size() + sample.negatives.size());
  std::vector<std::size_t> sizes(5, 0), pos_sizes(5, 0);
  const std::set<DocId> pos(sample.positives.begin(), sample.positives.end());
  for (const auto& [id, f] : d.fold_of) {
    ++sizes[f];
    pos_sizes[f] += pos.contains(id) ? 1 : 0;
  }
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  CHECK(*std::max_element(pos_sizes.begin(), pos_sizes.end()) -
            *std::min_element(pos_sizes.begin(), pos_sizes.end()) <=
        1);

  const auto serial = crossval_detect(train, sample.positives, sample.negatives, 5, h, 8, false);
  CHECK(serial.poison == d.poison);
  CHECK(serial.fold_of == d.fold_of);

  std::size_t caught = 0;
  for (DocId id : run.poisoned.mask.indices) caught += d.poison[train.position_of(id)] ? 1 : 0;
  CHECK(static_cast<double>(caught) / static_cast<double>(run.poisoned.mask.indices.size()) >= 0.8);
}

TEST_CASE("crossval_detect rejects degenerate folds") {
  const auto train = make_dataset({{"a", 0}, {"b", 1}, {"c", 0}, {"d", 1}, {"e", 0}, {"f", 1}});
  CHECK_THROWS_AS(crossval_detect(train, {0}, {1, 2, 3, 4}, 2, StrongHyper{}, 1), StageError);
  CHECK_THROWS_AS(crossval_detect(train, {0, 1}, {2}, 5, StrongHyper{}, 1), StageError);
  CHECK_THROWS_AS(crossval_detect(train, {0, 1}, {1, 2}, 2, StrongHyper{}, 1), ValidationError);
}

TEST_CASE("sanitize: unpoisoned data and a perfect oracle keep everything") {
  const auto& run = desk_run();
  OracleParams p;
  p.truth = truth_from(run.parts.train);
  const auto r = sanitize(run.parts.train, make_oracle(p), DefenseConfig{});
  CHECK(r.sanitized.kept == run.parts.train.ids());
  CHECK_FALSE(r.report.notes.empty());
}

TEST_CASE("sanitize: skip flags and label fidelity") {
  const auto& run = desk_run();
  const auto& train = run.poisoned.dataset;
  const auto& mask = run.poisoned.mask;

  DefenseConfig c;
  c.skip_cleaning = true;
  const auto weak_only = sanitize(train, run.weak, c, &mask);
  CHECK(weak_only.sanitized.kept == weak_only.partition.same);
  CHECK(weak_only.report.refinement_moves.empty());

  c = DefenseConfig{};
  c.skip_detector = true;
  const auto no_detector = sanitize(train, run.weak, c, &mask);
  CHECK(no_detector.sanitized.kept == no_detector.refined.same);

  c = DefenseConfig{};
  c.skip_refine = true;
  c.skip_detector = true;
  const auto partition_only = sanitize(train, run.weak, c, &mask);
  CHECK(partition_only.sanitized.kept == weak_only.sanitized.kept);

  const auto full = sanitize(train, run.weak, DefenseConfig{}, &mask);
  REQUIRE(full.report.actual.has_value());
  // At this scale the weak partition is often already nearly clean, so the
  // full pipeline is held to the injected rate rather than to skip_cleaning.
  CHECK(sanitized_poison_rate(full.sanitized, mask) <= 0.3 * mask.rate);
  const double ratio = retained_ratio(full.sanitized, train);
  CHECK(ratio >= 0.6);
  CHECK(ratio <= 0.95);
  CHECK(full.report.sizes.negatives == 2 * full.report.sizes.positives);
  for (DocId id : full.sanitized.kept) {
    CHECK(full.sanitized.labels.at(id) == train.label_of(id));
    const bool in_same_plus =
        std::binary_search(full.refined.same.begin(), full.refined.same.end(), id,
                           [&](DocId a, DocId b) { return train.position_of(a) < train.position_of(b); });
    CHECK((full.sanitized.provenance.at(id) == Provenance::SamePlus) == in_same_plus);
  }
  const auto again = sanitize(train, run.weak, DefenseConfig{}, &mask);
  CHECK(again.sanitized.kept == full.sanitized.kept);
  CHECK(to_json(again.report).dump() == to_json(full.report).dump());
}

TEST_CASE("sanitize rejects t = 1") {
  const auto& run = desk_run();
  DefenseConfig c;
  c.t = 1.0;
  CHECK_THROWS_AS(sanitize(run.poisoned.dataset, run.weak, c), ValidationError);
}

TEST_CASE("train_final on the full clean set matches a direct fit") {
  const auto& run = desk_run();
  const auto& train = run.parts.train;
  SanitizedSet all;
  for (std::size_t i = 0; i < train.size(); ++i) {
    all.kept.push_back(train.doc(i).id);
    all.labels[train.doc(i).id] = train.label(i);
  }
  const auto final_model = train_final(all, train, StrongHyper{});
  const auto direct = HashedNgramClassifier::train(train.docs(), train.labels(), 2, StrongHyper{});
  CHECK(final_model.weights() == direct.weights());
  CHECK(train_final(all, train, StrongHyper{}).weights() == final_model.weights());

  CHECK_THROWS_AS(train_final(SanitizedSet{}, train, StrongHyper{}), StageError);
  SanitizedSet one_class;
  one_class.kept = {train.doc(0).id};
  one_class.labels[train.doc(0).id] = train.label(0);
  CHECK_THROWS_AS(train_final(one_class, train, StrongHyper{}), StageError);
}

TEST_CASE("weak method names") {
  CHECK(weak_method_from_string("simple") == WeakMethod::Simple);
  CHECK(to_string(WeakMethod::Oracle) == "oracle");
  CHECK_THROWS_AS(weak_method_from_string("snorkel"), ValidationError);
}
