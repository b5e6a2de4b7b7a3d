#include "mobkit/baseline.hpp"

#include <algorithm>
#include <unordered_map>

#include "mobkit/errors.hpp"

namespace mobkit {
namespace {

// Predicted-location field of every input record, oldest first.
std::vector<LocationId> input_locations(const PredictionInstance& instance) {
  std::vector<LocationId> out;
  out.reserve(instance.history.size() + instance.context.size());
  for (const auto* part : {&instance.history, &instance.context}) {
    for (const auto& r : *part) out.push_back(predicted_location(r));
  }
  return out;
}

}  // namespace

void TransitionTable::add(LocationId from, LocationId to, std::size_t count) { rows_[from][to] += count; }

std::size_t TransitionTable::count(LocationId from, LocationId to) const {
  auto row = rows_.find(from);
  if (row == rows_.end()) return 0;
  auto it = row->second.find(to);
  return it == row->second.end() ? 0 : it->second;
}

std::optional<LocationId> TransitionTable::argmax(LocationId from) const {
  auto row = rows_.find(from);
  if (row == rows_.end() || row->second.empty()) return std::nullopt;
  std::optional<LocationId> best;
  std::size_t best_count = 0;
  for (const auto& [to, count] : row->second) {  // ascending ids, so strict > keeps the smallest
    if (count > best_count) {
      best = to;
      best_count = count;
    }
  }
  return best;
}

LocationId most_frequent(const PredictionInstance& instance) {
  const auto locations = input_locations(instance);
  if (locations.empty()) throw ValidationError("instance " + instance.id + " has no input records");
  std::unordered_map<LocationId, std::pair<std::size_t, std::size_t>> stats;  // count, last position
  for (std::size_t i = 0; i < locations.size(); ++i) {
    auto& s = stats[locations[i]];
    ++s.first;
    s.second = i;
  }
  LocationId best = locations.back();
  std::pair<std::size_t, std::size_t> best_stat{0, 0};
  for (const auto& [loc, s] : stats) {
    if (s > best_stat) {
      best = loc;
      best_stat = s;
    }
  }
  return best;
}

TransitionTable build_transition_table(const PredictionInstance& instance) {
  TransitionTable table;
  std::optional<LocationId> previous;
  for (const auto* part : {&instance.history, &instance.context}) {
    for (const auto& r : *part) {
      if (const auto* a = std::get_if<TripActivity>(&r)) {
        table.add(a->start_location, a->end_location);
      } else if (const auto* t = std::get_if<Trip>(&r)) {
        table.add(t->origin, t->destination);
      } else {
        const auto loc = std::get<Stay>(r).location;
        if (previous) table.add(*previous, loc);
        previous = loc;
      }
    }
  }
  return table;
}

std::optional<LocationId> markov_anchor(const PredictionInstance& instance) {
  if (instance.task == TaskKind::trip_origin || instance.task == TaskKind::trip_destination) {
    return instance.target.known_location;
  }
  if (!instance.context.empty()) return predicted_location(instance.context.back());
  if (!instance.history.empty()) return predicted_location(instance.history.back());
  return std::nullopt;
}

LocationId markov1_predict(const TransitionTable& table, LocationId last_location) {
  auto best = table.argmax(last_location);
  if (!best) throw ValidationError("no transitions recorded from location " + std::to_string(last_location));
  return *best;
}

LocationId markov1(const PredictionInstance& instance) {
  const auto table = build_transition_table(instance);
  if (const auto anchor = markov_anchor(instance)) {
    if (auto best = table.argmax(*anchor)) return *best;
  }
  return most_frequent(instance);
}

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "freq" || name == "most_frequent") return BaselineKind::most_frequent;
  if (name == "markov1" || name == "markov") return BaselineKind::markov1;
  throw ConfigError("unknown baseline '" + std::string(name) + "' (expected freq or markov1)");
}

std::string_view to_string(BaselineKind kind) { return kind == BaselineKind::markov1 ? "markov1" : "freq"; }

std::vector<PredictionOutcome> run_baseline(BaselineKind kind, std::span<const PredictionInstance> instances) {
  std::vector<PredictionOutcome> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    PredictionOutcome o;
    o.instance_id = inst.id;
    o.status = OutcomeStatus::valid;
    o.predicted = kind == BaselineKind::markov1 ? markov1(inst) : most_frequent(inst);
    o.reason = std::string(to_string(kind));
    o.raw = "{prediction: " + std::to_string(*o.predicted) + "}";
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace mobkit
