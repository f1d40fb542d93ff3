#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "weaksan/errors.hpp"
#include "weaksan/experiment.hpp"

using namespace weaksan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("weaksan_unit_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.synthetic = weaksan::testing::small_spec(3, 1500);
  c.output_dir = out;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("config JSON round trip and validation") {
  auto c = small_config("x");
  c.attack.kind = TriggerKind::Sentence;
  c.defense.t = 3.0;
  c.target = "c1";
  const auto j = to_json(c);
  CHECK_FALSE(j.contains("output_dir"));
  const auto back = experiment_config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.attack.kind == TriggerKind::Sentence);

  ExperimentConfig none;
  CHECK_THROWS_AS(none.validate(), ValidationError);
  auto both = small_config("x");
  both.corpus_path = "corpus.jsonl";
  CHECK_THROWS_AS(both.validate(), ValidationError);

  auto mixed = small_config("x");
  mixed.attack.kind = TriggerKind::Mixed;
  mixed.attack.mix = {{TriggerKind::Word, 0.025}, {TriggerKind::Sentence, 0.02}};
  CHECK_THROWS_AS(mixed.validate(), ValidationError);
  mixed.attack.mix[1].rate = 0.025;
  CHECK_NOTHROW(mixed.validate());

  CHECK_THROWS_AS(experiment_config_from_json(nlohmann::json::parse(R"({"seed": "one"})")),
                  ValidationError);
}

TEST_CASE("overrides") {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "defense.t=3");
  apply_override(j, "attack.kind=sentence");
  apply_override(j, "defense.skip_refine=true");
  CHECK(j["defense"]["t"] == 3);
  CHECK(j["attack"]["kind"] == "sentence");
  CHECK(j["defense"]["skip_refine"] == true);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), ValidationError);
}

TEST_CASE("seeds fan out by stage") {
  const auto a = resolve_seeds(small_config("x"));
  auto other = small_config("x");
  other.seed = 6;
  const auto b = resolve_seeds(other);
  CHECK(a.defense.rng_seed != b.defense.rng_seed);
  CHECK(a.defense.rng_seed != a.strong.rng_seed);
  CHECK(resolve_seeds(small_config("x")).defense.rng_seed == a.defense.rng_seed);
}

TEST_CASE("small run: artifacts, manifest, determinism") {
  const auto dir_a = scratch("run_a");
  const auto dir_b = scratch("run_b");
  const auto a = run_experiment(small_config(dir_a));
  const auto b = run_experiment(small_config(dir_b));

  const std::vector<std::string> expected{
      "corpus.jsonl",        "seeds.json",        "train.jsonl",       "test.jsonl",
      "triggers.json",       "poisoned_train.jsonl", "poisoned_test.jsonl", "mask.json",
      "models/weak.json",    "partition.json",    "sanitized.jsonl",   "models/nodefense.json",
      "models/wedef.json",   "models/groundtruth.json", "report.json", "report.csv"};
  REQUIRE(a.artifacts.size() == expected.size() + 1);
  CHECK(a.artifacts.back() == "manifest.json");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(a.artifacts[i].generic_string() == expected[i]);
    CHECK(slurp(dir_a / expected[i]) == slurp(dir_b / expected[i]));
  }

  const auto manifest = nlohmann::json::parse(slurp(dir_a / "manifest.json"));
  REQUIRE(manifest["artifacts"].size() == expected.size());
  for (const auto& entry : manifest["artifacts"]) {
    const auto path = dir_a / entry["path"].get<std::string>();
    CHECK(entry["sha256"] == sha256_file(path));
    CHECK(entry["bytes"] == fs::file_size(path));
  }

  const auto report = nlohmann::json::parse(slurp(dir_a / "report.json"));
  CHECK(report["sizes"]["train"] == 2400);
  CHECK(report["counts"]["poison"]["train"]["numerator"] == 120);
  CHECK_FALSE(report["eval"]["groundtruth"].is_null());
  CHECK(report["config"]["seed"] == 5);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("sha256 of a known string") {
  const auto p = fs::temp_directory_path() / "weaksan_unit_sha.txt";
  std::ofstream(p, std::ios::binary) << "abc";
  CHECK(sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove(p);
}

TEST_CASE("mixed attack poisons 5% in total") {
  auto c = resolve_seeds(small_config("x"));
  c.attack.kind = TriggerKind::Mixed;
  c.attack.mix = {{TriggerKind::Word, 0.025}, {TriggerKind::Sentence, 0.025}};
  const auto corpus = load_corpus(c);
  const auto parts = split_corpus(c, corpus.dataset);
  const auto trigger = pick_triggers(c, parts.train, corpus.seeds);
  const auto poisoned = poison_split(c, parts.train, parts.test, trigger, 0);
  CHECK(poisoned.train.mask.indices.size() == parts.train.size() / 20);
}

TEST_CASE("a failing stage is named and earlier artifacts stay") {
  const auto dir = scratch("stage_error");
  const auto corpus = dir / "corpus_in.jsonl";
  fs::create_directories(dir);
  {
    std::ofstream out(corpus);
    for (int i = 0; i < 200; ++i) {
      out << R"({"text": "plain words here number )" << i << R"(", "label": ")"
          << (i % 2 ? "b" : "a") << "\"}\n";
    }
  }
  ExperimentConfig c;
  c.corpus_path = corpus;
  c.seed_words = nlohmann::json::parse(R"({"a": ["nowhere"], "b": ["absent"]})");
  c.output_dir = dir / "run";
  c.attack.num_triggers = 2;
  try {
    run_experiment(c);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK_FALSE(e.stage().empty());
  }
  CHECK(fs::exists(dir / "run" / "corpus.jsonl"));
  CHECK(fs::exists(dir / "run" / "mask.json"));
  fs::remove_all(dir);
}
