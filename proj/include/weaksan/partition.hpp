#pragma once

#include <map>
#include <string>
#include <vector>

#include "weaksan/corpus.hpp"

namespace weaksan {

// Split of the training ids by whether a benign model agrees with the given
// label. Both sides keep training-set order.
struct Partition {
  std::vector<DocId> same;
  std::vector<DocId> diff;

  std::size_t size() const { return same.size() + diff.size(); }
};

// Where a kept document came from: the refined agreeing subset, or the
// disagreeing remainder after the detector cleared it.
enum class Provenance { SamePlus, RecoveredDiff };

std::string to_string(Provenance p);

// The defense only removes. Labels are the poisoned training labels verbatim.
struct SanitizedSet {
  std::vector<DocId> kept;  // training-set order
  std::map<DocId, ClassIndex> labels;
  std::map<DocId, Provenance> provenance;

  std::size_t size() const { return kept.size(); }
};

}  // namespace weaksan
