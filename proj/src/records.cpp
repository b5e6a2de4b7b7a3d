#include "mobkit/records.hpp"

#include "mobkit/errors.hpp"

namespace mobkit {

LocationIndex LocationIndex::build(std::span<const std::string> labels) {
  if (labels.empty()) throw EmptyDataset("cannot build a location index from zero records");
  LocationIndex index;
  for (const auto& label : labels) index.add(label);
  return index;
}

LocationId LocationIndex::add(const std::string& label) {
  auto [it, inserted] = ids_.try_emplace(label, static_cast<LocationId>(labels_.size()));
  if (inserted) labels_.push_back(label);
  return it->second;
}

std::optional<LocationId> LocationIndex::find(std::string_view label) const {
  auto it = ids_.find(std::string(label));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

LocationId LocationIndex::encode(std::string_view label) const {
  if (auto id = find(label)) return *id;
  throw ValidationError("unknown location label '" + std::string(label) + "'");
}

const std::string& LocationIndex::decode(LocationId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
    throw ValidationError("location id " + std::to_string(id) + " outside [0, " +
                          std::to_string(labels_.size()) + ")");
  }
  return labels_[static_cast<std::size_t>(id)];
}

ordered_json LocationIndex::to_json() const {
  ordered_json j = ordered_json::object();
  for (std::size_t i = 0; i < labels_.size(); ++i) j[labels_[i]] = i;
  return j;
}

LocationIndex LocationIndex::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("location index sidecar must be a JSON object");
  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [label, value] : j.items()) {
    if (!value.is_number_integer()) throw ValidationError("location index values must be integers");
    const auto id = value.get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || seen[static_cast<std::size_t>(id)]) {
      throw ValidationError("location index is not a contiguous bijection");
    }
    seen[static_cast<std::size_t>(id)] = true;
    by_id[static_cast<std::size_t>(id)] = label;
  }
  LocationIndex index;
  for (const auto& label : by_id) index.add(label);
  return index;
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::gps_location: return "gps_location";
    case TaskKind::checkin_location: return "checkin_location";
    case TaskKind::trip_origin: return "trip_origin";
    case TaskKind::trip_destination: return "trip_destination";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "gps_location" || name == "gps" || name == "T1") return TaskKind::gps_location;
  if (name == "checkin_location" || name == "checkin" || name == "T2") return TaskKind::checkin_location;
  if (name == "trip_origin" || name == "origin" || name == "T3") return TaskKind::trip_origin;
  if (name == "trip_destination" || name == "destination" || name == "T4") {
    return TaskKind::trip_destination;
  }
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

LocationId predicted_location(const Record& record) {
  struct Visitor {
    LocationId operator()(const Stay& s) const { return s.location; }
    LocationId operator()(const TripActivity& a) const { return a.end_location; }
    LocationId operator()(const Trip& t) const { return t.destination; }
  };
  return std::visit(Visitor{}, record);
}

bool record_matches_task(const Record& record, TaskKind task) {
  switch (task) {
    case TaskKind::gps_location:
    case TaskKind::checkin_location: return std::holds_alternative<Stay>(record);
    case TaskKind::trip_origin: return std::holds_alternative<TripActivity>(record);
    case TaskKind::trip_destination: return std::holds_alternative<Trip>(record);
  }
  return false;
}

TargetState target_of(const Record& record, TaskKind task) {
  if (!record_matches_task(record, task)) {
    throw ValidationError("record shape does not belong to task " + std::string(to_string(task)));
  }
  if (const auto* s = std::get_if<Stay>(&record)) {
    TargetState t{s->time, s->weekday, std::nullopt, std::nullopt};
    if (task == TaskKind::gps_location) t.duration_min = s->duration_min.value_or(0);
    return t;
  }
  if (const auto* a = std::get_if<TripActivity>(&record)) {
    // The activity's end (next tap-in) is still in the future.
    return TargetState{a->start, a->weekday, std::nullopt, a->start_location};
  }
  const auto& trip = std::get<Trip>(record);
  return TargetState{trip.tap_in, trip.weekday, trip.prior_stay_min, trip.origin};
}

json record_to_json(const Record& record) {
  json j;
  if (const auto* s = std::get_if<Stay>(&record)) {
    j["kind"] = "stay";
    j["t"] = s->time.iso();
    j["w"] = weekday_name(s->weekday);
    if (s->duration_min) {
      j["dur"] = *s->duration_min;
      j["first"] = s->first;
    }
    j["l"] = s->location;
  } else if (const auto* a = std::get_if<TripActivity>(&record)) {
    j["kind"] = "activity";
    j["t_start"] = a->start.iso();
    j["t_end"] = a->end.iso();
    j["w"] = weekday_name(a->weekday);
    j["dur"] = a->duration_min;
    j["l_start"] = a->start_location;
    j["l_end"] = a->end_location;
  } else {
    const auto& t = std::get<Trip>(record);
    j["kind"] = "trip";
    j["t_o"] = t.tap_in.iso();
    j["t_d"] = t.tap_out.iso();
    j["w"] = weekday_name(t.weekday);
    j["origin"] = t.origin;
    j["dest"] = t.destination;
    j["prior_stay_dur"] = t.prior_stay_min;
  }
  return j;
}

Record record_from_json(const json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "stay") {
      Stay s;
      s.time = LocalTime::parse(j.at("t").get<std::string>());
      s.weekday = parse_weekday(j.at("w").get<std::string>());
      if (j.contains("dur")) {
        s.duration_min = j.at("dur").get<std::int64_t>();
        s.first = j.value("first", false);
      }
      s.location = j.at("l").get<LocationId>();
      return s;
    }
    if (kind == "activity") {
      TripActivity a;
      a.start = LocalTime::parse(j.at("t_start").get<std::string>());
      a.end = LocalTime::parse(j.at("t_end").get<std::string>());
      a.weekday = parse_weekday(j.at("w").get<std::string>());
      a.duration_min = j.at("dur").get<std::int64_t>();
      a.start_location = j.at("l_start").get<LocationId>();
      a.end_location = j.at("l_end").get<LocationId>();
      return a;
    }
    if (kind == "trip") {
      Trip t;
      t.tap_in = LocalTime::parse(j.at("t_o").get<std::string>());
      t.tap_out = LocalTime::parse(j.at("t_d").get<std::string>());
      t.weekday = parse_weekday(j.at("w").get<std::string>());
      t.origin = j.at("origin").get<LocationId>();
      t.destination = j.at("dest").get<LocationId>();
      t.prior_stay_min = j.at("prior_stay_dur").get<std::int64_t>();
      return t;
    }
    throw ValidationError("unknown record kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed record: ") + e.what());
  }
}

json target_to_json(const TargetState& target, TaskKind task) {
  json j;
  j["t"] = target.time.iso();
  j["w"] = weekday_name(target.weekday);
  if (target.duration_min) j["dur"] = *target.duration_min;
  if (target.known_location) {
    j[task == TaskKind::trip_origin ? "l_start" : "origin"] = *target.known_location;
  }
  return j;
}

TargetState target_from_json(const json& j) {
  try {
    TargetState t;
    t.time = LocalTime::parse(j.at("t").get<std::string>());
    t.weekday = parse_weekday(j.at("w").get<std::string>());
    if (j.contains("dur")) t.duration_min = j.at("dur").get<std::int64_t>();
    if (j.contains("l_start")) t.known_location = j.at("l_start").get<LocationId>();
    if (j.contains("origin")) t.known_location = j.at("origin").get<LocationId>();
    return t;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed target: ") + e.what());
  }
}

json instance_to_json(const PredictionInstance& instance) {
  json j;
  j["id"] = instance.id;
  j["task"] = to_string(instance.task);
  j["user"] = instance.user;
  j["history"] = json::array();
  for (const auto& r : instance.history) j["history"].push_back(record_to_json(r));
  j["context"] = json::array();
  for (const auto& r : instance.context) j["context"].push_back(record_to_json(r));
  j["target"] = target_to_json(instance.target, instance.task);
  j["truth"] = instance.truth;
  return j;
}

PredictionInstance instance_from_json(const json& j) {
  try {
    PredictionInstance p;
    p.id = j.at("id").get<std::string>();
    p.task = parse_task_kind(j.at("task").get<std::string>());
    p.user = j.at("user").get<std::string>();
    for (const auto& r : j.at("history")) p.history.push_back(record_from_json(r));
    for (const auto& r : j.at("context")) p.context.push_back(record_from_json(r));
    p.target = target_from_json(j.at("target"));
    p.truth = j.at("truth").get<LocationId>();
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed instance: ") + e.what());
  }
}

}  // namespace mobkit
