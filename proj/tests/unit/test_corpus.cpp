#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "weaksan/errors.hpp"

using namespace weaksan;
using weaksan::testing::make_dataset;

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("Give me a break.") == Tokens{"give", "me", "a", "break", "."});
  CHECK(tokenize("that 's all") == Tokens{"that", "'s", "all"});
  CHECK(tokenize("so far, so good!") == Tokens{"so", "far", ",", "so", "good", "!"});
  CHECK(tokenize("  ").empty());
}

TEST_CASE("detokenize round-trips tokenizer output") {
  for (const char* text : {"Give me a break.", "that 's all", "when a fun , ride ."}) {
    const auto t = tokenize(text);
    CHECK(tokenize(detokenize(t)) == t);
  }
}

TEST_CASE("dataset rejects empty documents, duplicate ids and single-class label spaces") {
  CHECK_THROWS_AS(make_dataset({{"", 0}, {"b", 1}}), ValidationError);
  CHECK_THROWS_AS(LabeledDataset({{0, {"a"}}, {0, {"b"}}}, {0, 1}, {"x", "y"}), ValidationError);
  CHECK_THROWS_AS(LabeledDataset({{0, {"a"}}}, {0}, {"only"}), ValidationError);
  CHECK_THROWS_AS(LabeledDataset({{0, {"a"}}}, {2}, {"x", "y"}), ValidationError);
}

TEST_CASE("read_dataset maps labels by first appearance") {
  std::istringstream in(R"({"text": "a b", "label": "pos"}
{"text": "c", "label": "neg"}
{"text": "d", "label": "pos"}
)");
  const auto d = read_dataset(in);
  CHECK(d.size() == 3);
  CHECK(d.label_space() == std::vector<std::string>{"pos", "neg"});
  CHECK(d.labels() == std::vector<ClassIndex>{0, 1, 0});
  CHECK(d.ids() == std::vector<DocId>{0, 1, 2});
}

TEST_CASE("read_dataset honours a fixed label space") {
  std::istringstream in(R"({"text": "a", "label": "pos"}
{"text": "b", "label": "neg"}
)");
  const auto d = read_dataset(in, std::vector<std::string>{"neg", "pos"});
  CHECK(d.labels() == std::vector<ClassIndex>{1, 0});

  std::istringstream bad(R"({"text": "a", "label": "meh"}
)");
  CHECK_THROWS_AS(read_dataset(bad, std::vector<std::string>{"neg", "pos"}), ValidationError);
}

TEST_CASE("read_dataset names the offending line") {
  std::istringstream in(R"({"text": "a", "label": "pos"}
{"text": "b"}
)");
  try {
    read_dataset(in);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("explicit ids are kept") {
  std::istringstream in(R"({"id": 10, "text": "a", "label": "x"}
{"id": 4, "text": "b", "label": "y"}
)");
  CHECK(read_dataset(in).ids() == std::vector<DocId>{10, 4});
}

TEST_CASE("write then read is content-identical") {
  const auto d = make_dataset({{"Hello there, friend.", 0}, {"bye", 1}, {"what 's up ?", 0}});
  std::stringstream buf;
  write_dataset(buf, d);
  CHECK(read_dataset(buf, d.label_space()) == d);
}

TEST_CASE("subset keeps dataset order") {
  const auto d = make_dataset({{"a", 0}, {"b", 1}, {"c", 0}, {"d", 1}});
  const std::vector<DocId> ids{3, 0};
  const auto s = d.subset(ids);
  CHECK(s.ids() == std::vector<DocId>{0, 3});
  CHECK(s.label_of(3) == 1);
}

TEST_CASE("split: 100 balanced docs at 0.2 gives 80/20 with 40/40 and 10/10") {
  std::vector<std::pair<std::string, int>> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({"w" + std::to_string(i), i % 2});
  const auto d = make_dataset(rows);
  const auto s = split(d, 0.2, 3);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 20);
  CHECK(s.train.class_counts() == std::vector<std::size_t>{40, 40});
  CHECK(s.test.class_counts() == std::vector<std::size_t>{10, 10});

  const auto again = split(d, 0.2, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
}

TEST_CASE("split partitions the ids") {
  SynthSpec spec;
  spec.docs_per_class = 500;
  const auto d = generate_synthetic(spec).dataset;
  const auto s = split(d, 0.5, 11);
  const auto train_ids = s.train.ids();
  const std::set<DocId> train(train_ids.begin(), train_ids.end());
  std::set<DocId> all;
  for (DocId id : s.test.ids()) CHECK_FALSE(train.contains(id));
  for (DocId id : s.train.ids()) all.insert(id);
  for (DocId id : s.test.ids()) all.insert(id);
  CHECK(all.size() == d.size());
  for (std::size_t c = 0; c < 2; ++c) {
    const auto tr = static_cast<long>(s.train.class_counts()[c]);
    CHECK(std::abs(tr - 250) <= 1);
  }
}

TEST_CASE("split rejects a class with a single document and bad fractions") {
  const auto d = make_dataset({{"a", 0}, {"b", 1}, {"c", 1}});
  CHECK_THROWS_AS(split(d, 0.5, 1), ValidationError);
  CHECK_THROWS_AS(split(make_dataset({{"a", 0}, {"b", 1}}), 0.0, 1), ValidationError);
  CHECK_THROWS_AS(split(make_dataset({{"a", 0}, {"b", 1}}), 1.0, 1), ValidationError);
}

TEST_CASE("synthetic generation is a pure function of its parameters") {
  SynthSpec spec;
  spec.docs_per_class = 1000;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.dataset == b.dataset);
  CHECK(a.seeds == b.seeds);
  std::stringstream sa, sb;
  write_dataset(sa, a.dataset);
  write_dataset(sb, b.dataset);
  CHECK(sa.str() == sb.str());

  spec.rng_seed = 8;
  CHECK_FALSE(generate_synthetic(spec).dataset == a.dataset);
}

TEST_CASE("seed words are more frequent in their own class") {
  SynthSpec spec;
  spec.docs_per_class = 1000;
  const auto synth = generate_synthetic(spec);
  const auto& d = synth.dataset;
  REQUIRE(synth.seeds.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(synth.seeds[c].size() == spec.seed_words_per_class);
    for (const auto& w : synth.seeds[c]) {
      std::vector<std::size_t> counts(2, 0);
      for (std::size_t i = 0; i < d.size(); ++i) {
        counts[static_cast<std::size_t>(d.label(i))] +=
            static_cast<std::size_t>(std::count(d.doc(i).tokens.begin(), d.doc(i).tokens.end(), w));
      }
      CHECK(counts[c] > counts[1 - c]);
    }
  }
  CHECK_NOTHROW(validate_seeds(synth.seeds, 2));
}

TEST_CASE("synthetic documents respect the length range and end sentences") {
  SynthSpec spec;
  spec.docs_per_class = 200;
  const auto d = generate_synthetic(spec).dataset;
  CHECK(d.class_counts() == std::vector<std::size_t>{200, 200});
  for (const auto& doc : d.docs()) {
    const auto words = static_cast<std::size_t>(
        std::count_if(doc.tokens.begin(), doc.tokens.end(), [](const auto& t) { return t != "."; }));
    CHECK(words >= spec.doc_length_range.first);
    CHECK(words <= spec.doc_length_range.second);
    CHECK(doc.tokens.back() == ".");
  }
}

TEST_CASE("synth spec validation") {
  SynthSpec spec;
  spec.seed_word_boost = 1.0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = SynthSpec{};
  spec.vocab_size = 4;
  spec.seed_words_per_class = 2;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = SynthSpec{};
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("synth spec and seed lists survive JSON") {
  SynthSpec spec;
  spec.docs_per_class = 33;
  spec.class_skew = 1.25;
  spec.doc_length_range = {5, 9};
  const auto back = synth_spec_from_json(nlohmann::json::parse(to_json(spec).dump()));
  CHECK(back.docs_per_class == 33);
  CHECK(back.class_skew == 1.25);
  CHECK(back.doc_length_range == std::pair<std::size_t, std::size_t>{5, 9});
  CHECK(synth_spec_from_json(nlohmann::json::object()).docs_per_class == SynthSpec{}.docs_per_class);

  const SeedWordLists seeds{{"good", "great"}, {"bad"}};
  const std::vector<std::string> labels{"pos", "neg"};
  const auto j = seeds_to_json(seeds, labels);
  CHECK(j.dump() == R"({"pos":["good","great"],"neg":["bad"]})");
  CHECK(seeds_from_json(nlohmann::json::parse(j.dump()), labels) == seeds);
  CHECK_THROWS_AS(seeds_from_json(nlohmann::json::parse(R"({"other":["x"]})"), labels), ValidationError);
}

TEST_CASE("seed lists must be disjoint and non-empty") {
  CHECK_THROWS_AS(validate_seeds({{"a"}, {"a"}}, 2), ValidationError);
  CHECK_THROWS_AS(validate_seeds({{"a"}, {}}, 2), ValidationError);
  CHECK_THROWS_AS(validate_seeds({{"a"}}, 2), ValidationError);
}
