#pragma once

#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "mobkit/eval.hpp"
#include "mobkit/records.hpp"

namespace mobkit {

/// Order-1 location transition counts.
class TransitionTable {
 public:
  void add(LocationId from, LocationId to, std::size_t count = 1);
  std::size_t count(LocationId from, LocationId to) const;
  /// Argmax successor of `from`; ties go to the smallest id. nullopt for an empty row.
  std::optional<LocationId> argmax(LocationId from) const;
  bool empty() const noexcept { return rows_.empty(); }

 private:
  std::map<LocationId, std::map<LocationId, std::size_t>> rows_;
};

/// Modal location of history and context; ties go to the most recent occurrence. Throws
/// ValidationError when the instance has no input records.
LocationId most_frequent(const PredictionInstance& instance);

/// The (from, to) pair each record contributes: consecutive stays for tasks 1-2, the activity's
/// start and end for task 3, the trip's origin and destination for task 4.
TransitionTable build_transition_table(const PredictionInstance& instance);

/// Location the next step departs from: the last input stay (tasks 1-2) or the target's known
/// location (tasks 3-4). nullopt when there is none.
std::optional<LocationId> markov_anchor(const PredictionInstance& instance);

LocationId markov1_predict(const TransitionTable& table, LocationId last_location);

/// markov1_predict on the instance's own table, falling back to most_frequent for empty rows.
LocationId markov1(const PredictionInstance& instance);

enum class BaselineKind { most_frequent, markov1 };
BaselineKind parse_baseline_kind(std::string_view name);
std::string_view to_string(BaselineKind kind);

/// Outcomes in the same shape the LLM predict stage writes.
std::vector<PredictionOutcome> run_baseline(BaselineKind kind, std::span<const PredictionInstance> instances);

}  // namespace mobkit
