#pragma once

// Small hand-built instances shared by several test files.

#include <string>
#include <vector>

#include "mobkit/records.hpp"

namespace mobkit::testing {

inline Trip trip(const char* tap_in, int minutes, LocationId origin, LocationId dest, std::int64_t prior) {
  Trip t;
  t.tap_in = LocalTime::parse(tap_in);
  t.tap_out = t.tap_in.plus_minutes(minutes);
  t.weekday = service_day_start(t.tap_in).weekday();
  t.origin = origin;
  t.destination = dest;
  t.prior_stay_min = prior;
  return t;
}

inline Stay stay_at(const char* time, LocationId l, std::optional<std::int64_t> dur = 0) {
  Stay s;
  s.time = LocalTime::parse(time);
  s.weekday = s.time.weekday();
  s.duration_min = dur;
  s.location = l;
  return s;
}

/// Task 4 instance: two history trips, two context trips, target from station 3.
inline PredictionInstance destination_instance(std::string id = "p#4") {
  PredictionInstance inst;
  inst.id = std::move(id);
  inst.task = TaskKind::trip_destination;
  inst.user = "p";
  inst.history = {trip("2024-03-04 08:00", 30, 3, 7, 240), trip("2024-03-04 17:00", 40, 7, 3, 510)};
  inst.context = {trip("2024-03-05 08:05", 30, 3, 7, 245), trip("2024-03-05 17:10", 35, 7, 3, 515)};
  inst.target.time = LocalTime::parse("2024-03-06 08:02");
  inst.target.weekday = std::chrono::Wednesday;
  inst.target.duration_min = 242;
  inst.target.known_location = 3;
  inst.truth = 7;
  return inst;
}

/// Task 1 instance with hourly stays at the given locations.
inline PredictionInstance gps_instance(const std::vector<LocationId>& history, const std::vector<LocationId>& context,
                                       LocationId truth, std::string id = "g#0") {
  PredictionInstance inst;
  inst.id = std::move(id);
  inst.task = TaskKind::gps_location;
  inst.user = "g";
  LocalTime t = LocalTime::parse("2024-03-04 06:00");
  for (auto l : history) {
    Stay s;
    s.time = t;
    s.weekday = t.weekday();
    s.duration_min = 60;
    s.location = l;
    inst.history.emplace_back(s);
    t = t.plus_minutes(60);
  }
  for (auto l : context) {
    Stay s;
    s.time = t;
    s.weekday = t.weekday();
    s.duration_min = 60;
    s.location = l;
    inst.context.emplace_back(s);
    t = t.plus_minutes(60);
  }
  inst.target.time = t;
  inst.target.weekday = t.weekday();
  inst.target.duration_min = 60;
  inst.truth = truth;
  return inst;
}

}  // namespace mobkit::testing
