#pragma once

#include <string>
#include <vector>

#include <unordered_map>

#include "weaksan/classifiers.hpp"
#include "weaksan/corpus.hpp"

namespace weaksan::testing {

inline Document doc(DocId id, std::vector<std::string> tokens) { return {id, std::move(tokens)}; }

// Two-class dataset from (text, label index) pairs; ids are positions.
inline LabeledDataset make_dataset(const std::vector<std::pair<std::string, int>>& rows,
                                   std::vector<std::string> labels = {"pos", "neg"}) {
  std::vector<Document> docs;
  std::vector<ClassIndex> ys;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    docs.push_back({static_cast<DocId>(i), tokenize(rows[i].first)});
    ys.push_back(rows[i].second);
  }
  return LabeledDataset(std::move(docs), std::move(ys), std::move(labels));
}

// Small calibrated-shape synthetic corpus for tests that need a trained model.
inline SynthSpec small_spec(std::uint64_t seed = 7, std::size_t per_class = 1500) {
  SynthSpec s;
  s.docs_per_class = per_class;
  s.rng_seed = seed;
  return s;
}

// Predictions looked up by id, with a fallback class.
class TableClassifier final : public Classifier {
 public:
  TableClassifier(std::unordered_map<DocId, ClassIndex> table, ClassIndex fallback = 0,
                  std::size_t classes = 2)
      : table_(std::move(table)), fallback_(fallback), classes_(classes) {}

  ClassIndex predict(const Document& d) const override {
    const auto it = table_.find(d.id);
    return it == table_.end() ? fallback_ : it->second;
  }
  std::size_t num_classes() const override { return classes_; }

 private:
  std::unordered_map<DocId, ClassIndex> table_;
  ClassIndex fallback_;
  std::size_t classes_;
};

}  // namespace weaksan::testing
