// weaksan: command-line entry to each pipeline stage and to the full run.
//
// Every subcommand accepts --config <file>, --seed, --out and repeated
// --set key.path=value; dedicated flags are shorthands for --set.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "weaksan/analysis.hpp"
#include "weaksan/errors.hpp"
#include "weaksan/experiment.hpp"

namespace fs = std::filesystem;
using namespace weaksan;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::vector<std::string> sets;
  // Flag shorthands collected as "key=value" before --set entries.
  std::vector<std::string> flag_sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--set", c.sets, "override a config field: key.path=value");
}

template <typename T>
void shorthand(CLI::App* cmd, Common& c, const std::string& flag, const std::string& key,
               const std::string& help) {
  cmd->add_option_function<T>(
      flag,
      [&c, key](const T& v) {
        std::ostringstream s;
        if constexpr (std::is_same_v<T, std::string>) {
          s << json(v).dump();
        } else {
          s << std::setprecision(17) << v;
        }
        c.flag_sets.push_back(key + "=" + s.str());
      },
      help);
}

void switch_flag(CLI::App* cmd, Common& c, const std::string& flag, const std::string& key,
                 const std::string& help) {
  cmd->add_flag_callback(flag, [&c, key] { c.flag_sets.push_back(key + "=true"); }, help);
}

json read_json(const fs::path& path, const std::string& producer) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot read " + path.string() +
                          (producer.empty() ? "" : "; run " + producer + " first"));
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

ExperimentConfig load_config(const Common& c) {
  json doc = c.config_file.empty() ? json::object() : read_json(c.config_file, "");
  for (const auto& s : c.flag_sets) apply_override(doc, s);
  for (const auto& s : c.sets) apply_override(doc, s);
  if (c.seed) doc["seed"] = *c.seed;
  auto config = experiment_config_from_json(doc);
  config.output_dir = c.out;
  return resolve_seeds(config);
}

// Input artifacts: a missing one names the subcommand that produces it.
fs::path require(const std::string& value, const std::string& flag, const std::string& producer) {
  if (value.empty()) throw ValidationError("run " + producer + " or provide " + flag);
  if (!fs::exists(value)) throw ValidationError(value + " not found; run " + producer + " or fix " + flag);
  return value;
}

fs::path prepare_out(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

template <typename J>
void write_json(const fs::path& path, const J& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::optional<std::vector<std::string>> label_space_of(const ExperimentConfig& c) { return c.label_space; }

std::optional<SeedWordLists> read_seeds(const std::string& path,
                                        const std::vector<std::string>& label_space) {
  if (path.empty()) return std::nullopt;
  return seeds_from_json(read_json(require(path, "--seeds", "gen-corpus"), "gen-corpus"), label_space);
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v * 100.0 << '%';
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised backdoor sanitization toolkit"};
  app.require_subcommand(1);

  // gen-corpus -------------------------------------------------------------
  Common gen;
  std::string gen_input, gen_seeds;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate (or load) a corpus and split it");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--input", gen_input, "JSONL corpus instead of a synthetic one");
  gen_cmd->add_option("--seeds", gen_seeds, "seed words JSON for a JSONL corpus");
  shorthand<double>(gen_cmd, gen, "--test-fraction", "test_fraction", "held-out share");
  shorthand<std::size_t>(gen_cmd, gen, "--docs-per-class", "corpus.synthetic.docs_per_class", "synthetic size");

  // pick-triggers ----------------------------------------------------------
  Common pick;
  std::string pick_input, pick_seeds;
  auto* pick_cmd = app.add_subcommand("pick-triggers", "choose trigger words or sentences");
  add_common(pick_cmd, pick);
  pick_cmd->add_option("--input", pick_input, "training JSONL");
  pick_cmd->add_option("--seeds", pick_seeds, "seed words to keep out of the triggers");
  shorthand<std::string>(pick_cmd, pick, "--kind", "attack.kind", "word|sentence|template|mixed");
  shorthand<std::size_t>(pick_cmd, pick, "--num", "attack.num_triggers", "how many triggers");

  // poison -----------------------------------------------------------------
  Common poi;
  std::string poi_input, poi_test, poi_triggers;
  auto* poi_cmd = app.add_subcommand("poison", "poison the training set and trigger the test set");
  add_common(poi_cmd, poi);
  poi_cmd->add_option("--input", poi_input, "training JSONL");
  poi_cmd->add_option("--test", poi_test, "test JSONL to trigger");
  poi_cmd->add_option("--triggers", poi_triggers, "triggers.json");
  shorthand<double>(poi_cmd, poi, "--rate", "attack.rate", "poison rate");
  shorthand<std::string>(poi_cmd, poi, "--target", "target", "target class name");

  // defend -----------------------------------------------------------------
  Common def;
  std::string def_input, def_seeds, def_mask, def_test;
  std::vector<std::string> def_truth;
  auto* def_cmd = app.add_subcommand("defend", "sanitize a poisoned training set");
  add_common(def_cmd, def);
  def_cmd->add_option("--input", def_input, "poisoned training JSONL");
  def_cmd->add_option("--seeds", def_seeds, "seed words (simple weak method)");
  def_cmd->add_option("--mask", def_mask, "mask.json; unlocks ground-truth counts");
  def_cmd->add_option("--truth", def_truth, "JSONL files with original labels (oracle weak method)");
  def_cmd->add_option("--test", def_test, "clean test JSONL; checks t against the measured weak accuracy");
  shorthand<std::string>(def_cmd, def, "--weak", "weak.method", "simple|oracle");
  shorthand<double>(def_cmd, def, "--oracle-acc", "weak.oracle_accuracy", "oracle clean accuracy");
  shorthand<std::size_t>(def_cmd, def, "--iters", "defense.refinement_iters", "refinement rounds");
  shorthand<double>(def_cmd, def, "--t", "defense.t", "negatives per positive");
  shorthand<std::size_t>(def_cmd, def, "--folds", "defense.folds", "detector folds");
  switch_flag(def_cmd, def, "--skip-refine", "defense.skip_refine", "no refinement");
  switch_flag(def_cmd, def, "--skip-detector", "defense.skip_detector", "no detector");
  switch_flag(def_cmd, def, "--skip-cleaning", "defense.skip_cleaning", "keep D_same as is");

  // train ------------------------------------------------------------------
  Common tr;
  std::string tr_input, tr_name = "model.json";
  auto* tr_cmd = app.add_subcommand("train", "train the strong classifier");
  add_common(tr_cmd, tr);
  tr_cmd->add_option("--input", tr_input, "training JSONL");
  tr_cmd->add_option("--name", tr_name, "artifact file name inside --out")->capture_default_str();

  // eval -------------------------------------------------------------------
  Common ev;
  std::string ev_model, ev_test, ev_ptest, ev_label = "run";
  auto* ev_cmd = app.add_subcommand("eval", "clean accuracy and attack success rate");
  add_common(ev_cmd, ev);
  ev_cmd->add_option("--model", ev_model, "model artifact");
  ev_cmd->add_option("--test", ev_test, "clean test JSONL");
  ev_cmd->add_option("--poisoned-test", ev_ptest, "triggered test JSONL");
  ev_cmd->add_option("--label", ev_label, "run label for the CSV row")->capture_default_str();
  shorthand<std::string>(ev_cmd, ev, "--target", "target", "target class name");

  // analyze ----------------------------------------------------------------
  Common an;
  std::optional<double> an_eps, an_acc, an_asr;
  std::string an_run, an_format = "json";
  auto* an_cmd = app.add_subcommand("analyze", "closed-form poison rates, or actual vs estimated for a run");
  add_common(an_cmd, an);
  an_cmd->add_option("--eps", an_eps, "poison rate");
  an_cmd->add_option("--acc", an_acc, "weak-model clean accuracy");
  an_cmd->add_option("--asr", an_asr, "weak-model attack success rate");
  an_cmd->add_option("--run", an_run, "run directory (mask.json, partition.json, report.json)");
  an_cmd->add_option("--format", an_format, "json|csv")->check(CLI::IsMember({"json", "csv"}));

  // predict ----------------------------------------------------------------
  Common pr;
  std::string pr_model, pr_input;
  auto* pr_cmd = app.add_subcommand("predict", "label documents with a model artifact");
  add_common(pr_cmd, pr);
  pr_cmd->add_option("--model", pr_model, "model artifact");
  pr_cmd->add_option("--input", pr_input, "JSONL documents");

  // run --------------------------------------------------------------------
  Common run;
  auto* run_cmd = app.add_subcommand("run", "the whole pipeline into one directory");
  add_common(run_cmd, run);
  shorthand<std::string>(run_cmd, run, "--kind", "attack.kind", "trigger kind");
  shorthand<double>(run_cmd, run, "--rate", "attack.rate", "poison rate");
  shorthand<std::string>(run_cmd, run, "--weak", "weak.method", "simple|oracle");
  shorthand<double>(run_cmd, run, "--t", "defense.t", "negatives per positive");
  switch_flag(run_cmd, run, "--skip-refine", "defense.skip_refine", "no refinement");
  switch_flag(run_cmd, run, "--skip-detector", "defense.skip_detector", "no detector");
  switch_flag(run_cmd, run, "--skip-cleaning", "defense.skip_cleaning", "keep D_same as is");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) {
      ExperimentConfig config = [&] {
        Common c = gen;
        if (!gen_input.empty()) {
          c.flag_sets.push_back("corpus.path=" + json(gen_input).dump());
          c.flag_sets.push_back("corpus.synthetic=null");
        }
        return load_config(c);
      }();
      if (!gen_input.empty()) config.synthetic.reset();
      if (!gen_seeds.empty()) config.seed_words = read_json(gen_seeds, "");
      config.validate();
      const auto dir = prepare_out(gen.out);
      const auto corpus = load_corpus(config);
      const auto parts = split_corpus(config, corpus.dataset);
      std::vector<fs::path> files{"corpus.jsonl", "train.jsonl", "test.jsonl"};
      write_dataset(dir / "corpus.jsonl", corpus.dataset);
      write_dataset(dir / "train.jsonl", parts.train);
      write_dataset(dir / "test.jsonl", parts.test);
      if (corpus.seeds) {
        write_json(dir / "seeds.json", seeds_to_json(*corpus.seeds, corpus.dataset.label_space()));
        files.push_back("seeds.json");
      }
      write_manifest(dir, files);
      std::cout << "corpus: " << corpus.dataset.size() << " docs, train " << parts.train.size()
                << ", test " << parts.test.size() << " -> " << dir.string() << '\n';
    } else if (*pick_cmd) {
      const auto config = load_config(pick);
      config.validate();
      const auto train = load_dataset(require(pick_input, "--input", "gen-corpus"), label_space_of(config));
      const auto seeds = read_seeds(pick_seeds, train.label_space());
      const auto trigger = pick_triggers(config, train, seeds);
      const auto dir = prepare_out(pick.out);
      write_json(dir / "triggers.json", to_json(trigger));
      write_manifest(dir, {"triggers.json"});
      std::cout << to_json(trigger).dump(2) << '\n';
    } else if (*poi_cmd) {
      const auto config = load_config(poi);
      config.validate();
      const auto train = load_dataset(require(poi_input, "--input", "gen-corpus"), label_space_of(config));
      const auto trigger =
          trigger_spec_from_json(read_json(require(poi_triggers, "--triggers", "pick-triggers"), "pick-triggers"));
      const ClassIndex target = resolve_target(config, train.label_space());
      const auto dir = prepare_out(poi.out);
      const auto poisoned = poison_train(train, target, config.attack.rate, trigger);
      std::vector<fs::path> files{"poisoned_train.jsonl", "mask.json"};
      write_dataset(dir / "poisoned_train.jsonl", poisoned.dataset);
      write_json(dir / "mask.json", to_json(poisoned.mask, train.label_space()));
      if (!poi_test.empty()) {
        const auto test = load_dataset(require(poi_test, "--test", "gen-corpus"), train.label_space());
        write_dataset(dir / "poisoned_test.jsonl", poison_test(test, target, trigger));
        files.push_back("poisoned_test.jsonl");
      }
      write_manifest(dir, files);
      std::cout << "poisoned " << poisoned.mask.indices.size() << " of " << train.size() << " docs\n";
    } else if (*def_cmd) {
      auto config = load_config(def);
      config.validate();
      const auto train = load_dataset(require(def_input, "--input", "poison"), label_space_of(config));
      const auto& labels = train.label_space();
      std::optional<PoisonMask> mask;
      if (!def_mask.empty()) mask = poison_mask_from_json(read_json(require(def_mask, "--mask", "poison"), "poison"), labels);
      const auto seeds = read_seeds(def_seeds, labels);
      std::unordered_map<DocId, ClassIndex> truth;
      if (config.weak.method == WeakMethod::Oracle) {
        if (!def_truth.empty()) {
          for (const auto& f : def_truth) truth.merge(truth_from(load_dataset(require(f, "--truth", "gen-corpus"), labels)));
        } else if (mask) {
          truth = truth_from(train);
          for (const auto& [id, label] : mask->original_labels) truth[id] = label;
        } else {
          throw ValidationError("the oracle weak method needs --truth or --mask");
        }
      }
      const ClassIndex target = mask ? mask->target_class : resolve_target(config, labels);
      const auto weak = build_weak_model(config, train, seeds, std::move(truth), target);
      if (!def_test.empty()) {
        const auto test = load_dataset(require(def_test, "--test", "gen-corpus"), labels);
        config.defense.weak_accuracy = clean_accuracy(*weak.model, test).value();
        config.defense.validate();
      }
      auto result = sanitize(train, *weak.model, config.defense, mask ? &*mask : nullptr);
      result.report.config = to_json(config);
      const auto dir = prepare_out(def.out);
      std::vector<fs::path> files{"sanitized.jsonl", "partition.json", "report.json"};
      write_dataset(dir / "sanitized.jsonl", train.subset(result.sanitized.kept));
      write_json(dir / "partition.json", partition_json(result.partition, result.refined));
      write_json(dir / "report.json", to_json(result.report));
      if (weak.simple) {
        save_model(dir / "models/weak.json", *weak.simple, labels);
        files.push_back("models/weak.json");
      }
      write_manifest(dir, files);
      std::cout << "kept " << result.sanitized.size() << " of " << train.size() << " docs\n";
    } else if (*tr_cmd) {
      const auto config = load_config(tr);
      const auto train = load_dataset(require(tr_input, "--input", "defend"), label_space_of(config));
      const auto model =
          HashedNgramClassifier::train(train.docs(), train.labels(), train.num_classes(), config.strong);
      const auto dir = prepare_out(tr.out);
      save_model(dir / tr_name, model, train.label_space());
      write_manifest(dir, {tr_name});
      std::cout << "model -> " << (dir / tr_name).string() << '\n';
    } else if (*ev_cmd) {
      const auto config = load_config(ev);
      const auto artifact = load_model(require(ev_model, "--model", "train"));
      const auto test = load_dataset(require(ev_test, "--test", "gen-corpus"), artifact.label_space);
      const auto ptest = load_dataset(require(ev_ptest, "--poisoned-test", "poison"), artifact.label_space);
      const ClassIndex target = resolve_target(config, artifact.label_space);
      const auto m = evaluate(*artifact.model, test, ptest, target);
      ordered_json j = to_json(m);
      j["counts"] = {{"acc", {m.acc.numerator, m.acc.denominator}}, {"asr", {m.asr.numerator, m.asr.denominator}}};
      const auto dir = prepare_out(ev.out);
      write_json(dir / "eval.json", j);
      std::ofstream csv(dir / "eval.csv");
      csv << "run,acc,asr,acc_correct,acc_total,asr_hits,asr_total\n"
          << ev_label << ',' << std::setprecision(10) << m.acc.value() << ',' << m.asr.value() << ','
          << m.acc.numerator << ',' << m.acc.denominator << ',' << m.asr.numerator << ','
          << m.asr.denominator << '\n';
      csv.close();
      write_manifest(dir, {"eval.json", "eval.csv"});
      std::cout << j.dump(2) << '\n';
    } else if (*an_cmd) {
      if (!an_run.empty()) {
        const fs::path run_dir = an_run;
        const auto mask_doc = read_json(run_dir / "mask.json", "poison");
        const auto part_doc = read_json(run_dir / "partition.json", "defend");
        const auto report_doc = read_json(run_dir / "report.json", "run");
        const auto weak = report_doc.at("eval").at("weak");
        if (weak.is_null()) throw ValidationError("report.json has no weak-model metrics; use run");
        const auto labels = load_model(require((run_dir / "models/nodefense.json").string(), "--run", "run")).label_space;
        const auto mask = poison_mask_from_json(mask_doc, labels);
        Partition p{part_doc.at("same").get<std::vector<DocId>>(), part_doc.at("diff").get<std::vector<DocId>>()};
        const auto cmp = compare_actual_vs_estimated(p, mask, weak.at("acc").get<double>(), weak.at("asr").get<double>());
        if (an_format == "csv") {
          std::cout << comparison_csv_header() << '\n' << to_csv(cmp) << '\n';
        } else {
          std::cout << to_json(cmp).dump(2) << '\n';
        }
      } else {
        if (!an_eps || !an_acc) throw ValidationError("analyze needs --eps and --acc (and --asr), or --run");
        const double asr = an_asr ? *an_asr : binary_asr_from_acc(*an_acc);
        const auto exact = exact_poison_rates(*an_eps, *an_acc, asr);
        const auto approx = approx_poison_rates(*an_eps, *an_acc);
        if (an_format == "csv") {
          std::cout << "method,same_size_fraction,eps_same,eps_diff\n"
                    << std::setprecision(10) << "exact," << exact.same_size_fraction << ',' << exact.eps_same
                    << ',' << exact.eps_diff << "\napprox," << approx.same_size_fraction << ','
                    << approx.eps_same << ',' << approx.eps_diff << '\n';
        } else {
          std::cout << "|D_same|/N = " << percent(exact.same_size_fraction) << '\n'
                    << "ε_same = " << percent(exact.eps_same) << '\n'
                    << "ε_diff = " << percent(exact.eps_diff) << '\n';
          ordered_json j;
          j["exact"] = to_json(exact);
          j["approx"] = to_json(approx);
          try {
            const auto b = t_bounds(*an_eps, *an_acc);
            j["t_bounds"] = {{"lower", b.lower},
                             {"upper", b.upper ? ordered_json(*b.upper) : ordered_json(nullptr)}};
          } catch (const ValidationError& e) {
            j["t_bounds"] = e.what();
          }
          std::cout << j.dump(2) << '\n';
        }
      }
    } else if (*pr_cmd) {
      const auto artifact = load_model(require(pr_model, "--model", "train"));
      const auto docs = load_dataset(require(pr_input, "--input", "gen-corpus"), artifact.label_space);
      for (const auto& d : docs.docs()) {
        ordered_json line;
        line["id"] = d.id;
        line["pred"] = artifact.label_space[static_cast<std::size_t>(artifact.model->predict(d))];
        std::cout << line.dump() << '\n';
      }
    } else if (*run_cmd) {
      const auto config = load_config(run);
      const auto result = run_experiment(config);
      const auto& r = result.report;
      std::cout << "run -> " << result.directory.string() << '\n';
      auto line = [](const char* name, const std::optional<EvalMetrics>& m) {
        if (m) std::cout << "  " << name << ": acc " << m->acc.value() << " asr " << m->asr.value() << '\n';
      };
      line("weak", r.weak);
      line("nodefense", r.nodefense);
      line("wedef", r.wedef);
      line("groundtruth", r.groundtruth);
      std::cout << "  kept " << r.sizes.sanitized << " of " << r.sizes.train << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const StageError& e) {
    std::cerr << "error in stage " << e.stage() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
