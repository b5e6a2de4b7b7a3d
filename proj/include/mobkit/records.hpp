#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobkit/local_time.hpp"

namespace mobkit {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

using LocationId = std::int32_t;

/// Reserved id for the home anchor of AFC day chains. Never part of a LocationIndex and rendered
/// as the literal token "home".
inline constexpr LocationId kHome = -1;

/// Bijection between raw dataset labels and contiguous ids 0..M-1, assigned in first-appearance
/// order.
class LocationIndex {
 public:
  LocationIndex() = default;

  /// Throws EmptyDataset when `labels` is empty.
  static LocationIndex build(std::span<const std::string> labels);

  /// Returns the existing id or appends a new one.
  LocationId add(const std::string& label);
  /// Throws ValidationError for labels not in the table.
  LocationId encode(std::string_view label) const;
  std::optional<LocationId> find(std::string_view label) const;
  /// Throws ValidationError for ids outside [0, M).
  const std::string& decode(LocationId id) const;

  /// M, the number of distinct labels.
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  /// {label: index} in index order.
  ordered_json to_json() const;
  /// Validates contiguity; throws ValidationError.
  static LocationIndex from_json(const json& j);

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, LocationId> ids_;
};

enum class TaskKind { gps_location, checkin_location, trip_origin, trip_destination };

std::string_view to_string(TaskKind kind);
/// Accepts the canonical names plus short aliases (gps, checkin, origin, destination).
TaskKind parse_task_kind(std::string_view name);
inline constexpr TaskKind kAllTaskKinds[] = {TaskKind::gps_location, TaskKind::checkin_location,
                                             TaskKind::trip_origin, TaskKind::trip_destination};

/// Task 1/2 record. Check-ins carry no duration.
struct Stay {
  LocalTime time;
  std::chrono::weekday weekday;
  std::optional<std::int64_t> duration_min;
  /// First stay of a user's sequence: its duration is emitted as 0.
  bool first = false;
  LocationId location = 0;

  bool operator==(const Stay&) const = default;
};

/// Task 3 record: the single activity between a tap-out and the next tap-in.
struct TripActivity {
  LocalTime start;
  LocalTime end;
  std::chrono::weekday weekday;
  std::int64_t duration_min = 0;
  LocationId start_location = 0;
  LocationId end_location = 0;

  bool operator==(const TripActivity&) const = default;
};

/// Task 4 record.
struct Trip {
  LocalTime tap_in;
  LocalTime tap_out;
  std::chrono::weekday weekday;
  LocationId origin = 0;
  LocationId destination = 0;
  /// Minutes since the previous tap-out, or since 04:00 for the first trip of a service day.
  std::int64_t prior_stay_min = 0;

  bool operator==(const Trip&) const = default;
};

using Record = std::variant<Stay, TripActivity, Trip>;

/// The known part of the record being predicted. Holds no slot for the predicted location.
struct TargetState {
  LocalTime time;
  std::chrono::weekday weekday;
  std::optional<std::int64_t> duration_min;
  /// Task 3: the activity's start location (last tap-out). Task 4: trip origin.
  std::optional<LocationId> known_location;

  bool operator==(const TargetState&) const = default;
};

struct PredictionInstance {
  std::string id;
  TaskKind task = TaskKind::gps_location;
  std::string user;
  std::vector<Record> history;
  std::vector<Record> context;
  TargetState target;
  LocationId truth = 0;
};

struct UserSequence {
  std::string user;
  std::vector<Record> records;
};

/// The location a task predicts for this record: stay location, activity end, trip destination.
LocationId predicted_location(const Record& record);
/// Strips the predicted location from `record`. Throws ValidationError if the record shape does
/// not belong to `task`.
TargetState target_of(const Record& record, TaskKind task);
bool record_matches_task(const Record& record, TaskKind task);

json record_to_json(const Record& record);
Record record_from_json(const json& j);
json target_to_json(const TargetState& target, TaskKind task);
TargetState target_from_json(const json& j);
json instance_to_json(const PredictionInstance& instance);
PredictionInstance instance_from_json(const json& j);

}  // namespace mobkit
