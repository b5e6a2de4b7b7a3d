#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mobkit/ingest.hpp"

namespace mobkit {

enum class SyntheticPattern {
  /// Home and work alternate every weekday with jittered times. Perfectly periodic locations.
  commuter,
  /// A few favourite places visited 0-3 times a day at random times.
  sparse,
};

struct SyntheticProfile {
  DataFamily family = DataFamily::afc;
  SyntheticPattern pattern = SyntheticPattern::commuter;
  std::size_t users = 10;
  std::size_t days = 28;
  std::size_t locations = 12;
  /// First simulated day, YYYY-MM-DD.
  std::string start_date = "2024-03-04";
  int jitter_minutes = 10;
  /// Day offsets (0-based) that carry injected event excursions.
  std::vector<std::size_t> event_days;
  /// Users sent to an unusual location on each event day.
  std::size_t anomalies_per_event_day = 0;
};

/// One injected excursion to a location outside the user's routine.
struct InjectedAnomaly {
  std::string user;
  std::string date;
  std::string location_label;
};

struct SyntheticData {
  DataFamily family = DataFamily::afc;
  Grouped<GpsPoint> gps;
  Grouped<CheckIn> checkins;
  Grouped<RawTrip> trips;
  std::vector<InjectedAnomaly> anomalies;
};

/// Deterministic for a given (profile, seed). Throws ConfigError on inconsistent profiles.
SyntheticData generate_synthetic_users(const SyntheticProfile& profile, std::uint64_t seed);

/// Renders in the CSV layout read_gps / read_checkins / read_afc expect.
std::string synthetic_to_csv(const SyntheticData& data);

/// Coordinates of synthetic location k (a 10-wide lattice about 1.1 km apart).
GpsPoint synthetic_location_coordinates(std::size_t k);

/// Keys mirror the struct fields; unknown keys are rejected.
SyntheticProfile profile_from_json(const json& j);
json profile_to_json(const SyntheticProfile& profile);

}  // namespace mobkit
