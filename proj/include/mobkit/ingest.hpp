#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mobkit/records.hpp"

namespace mobkit {

enum class DataFamily { gps, checkin, afc };

std::string_view to_string(DataFamily family);
DataFamily parse_data_family(std::string_view name);

struct GpsPoint {
  LocalTime time;
  double lat = 0.0;
  double lon = 0.0;
};

struct CheckIn {
  LocalTime time;
  std::string venue;
};

/// One smart-card trip as logged: tap-in/tap-out times and station labels.
struct RawTrip {
  LocalTime tap_in;
  LocalTime tap_out;
  std::string origin;
  std::string destination;
};

template <typename Row>
struct UserRows {
  std::string user;
  std::vector<Row> rows;
};

/// Rows grouped per user, users in first-appearance order, rows in file order.
template <typename Row>
using Grouped = std::vector<UserRows<Row>>;

/// Square-grid cell of a coordinate. Rows are `cell_m` metres of latitude; columns are `cell_m`
/// metres of longitude measured at the row's centre latitude.
std::string grid_cell_label(double lat, double lon, double cell_m);

struct LabeledStay {
  LocalTime time;
  std::string label;
};

/// Discretizes a trace and merges consecutive points falling in the same cell; each stay starts
/// at its first point. Throws OutOfOrderInput unless timestamps strictly increase.
std::vector<LabeledStay> discretize_gps(std::span<const GpsPoint> points, double cell_m);

/// Task 1 stays. dur_i = t_i - t_{i-1} in minutes; the first stay carries dur 0 and first=true.
/// Cell labels are added to `index` as they appear.
std::vector<Stay> gps_to_stays(std::span<const GpsPoint> points, double cell_m, LocationIndex& index);

/// Task 2 stays: one per check-in, no duration. Throws OutOfOrderInput.
std::vector<Stay> checkins_to_stays(std::span<const CheckIn> checkins, LocationIndex& index);

/// Binds stations and fills prior_stay_min = t_o - t_d(previous trip of the same service day), or
/// t_o - 04:00 for the first trip of a day. A trip belongs to the service day of its tap-in.
/// Throws OutOfOrderInput when tap-out <= tap-in or a tap-in does not follow the previous tap-out.
std::vector<Trip> annotate_trips(std::span<const RawTrip> trips, LocationIndex& index);

/// One activity per gap between trips of a service day. Each day opens with a home activity from
/// 04:00 to the first tap-in; the stay after the last trip of a day is dropped.
std::vector<TripActivity> afc_to_activities(std::span<const Trip> trips);

struct WindowConfig {
  std::size_t history_len = 40;
  std::size_t context_len = 5;
  /// When false, early targets get a history shorter than history_len (possibly empty).
  bool require_full_history = false;
};

struct InstanceBatch {
  std::vector<PredictionInstance> instances;
  std::vector<std::string> skipped_users;
};

/// Sliding windows: for each target position j, context = the context_len records before j and
/// history = up to history_len records before the context. Users too short are skipped (logged).
InstanceBatch make_instances(std::span<const UserSequence> users, TaskKind task,
                             const WindowConfig& windows);

struct InstanceSplit {
  std::vector<PredictionInstance> train;
  std::vector<PredictionInstance> test;
};

/// Chronological per-user split: the last ceil(test_fraction * n_user) instances of each user go to
/// test.
InstanceSplit split_instances(std::span<const PredictionInstance> instances, double test_fraction);

struct IngestResult {
  DataFamily family = DataFamily::gps;
  TaskKind task = TaskKind::gps_location;
  LocationIndex index;
  std::vector<UserSequence> users;
};

IngestResult ingest_gps(const Grouped<GpsPoint>& data, double cell_m);
IngestResult ingest_checkins(const Grouped<CheckIn>& data);
/// `task` selects the record shape: trip_origin emits activities, trip_destination emits trips.
IngestResult ingest_afc(const Grouped<RawTrip>& data, TaskKind task);

/// Readers accept CSV (header row) or JSONL (one object per row) by file extension.
/// GPS: user,timestamp,lat,lon. Check-in: user,timestamp,venue_id.
/// AFC: user,tap_in_time,tap_out_time,origin,dest.
Grouped<GpsPoint> read_gps(const std::filesystem::path& path);
Grouped<CheckIn> read_checkins(const std::filesystem::path& path);
Grouped<RawTrip> read_afc(const std::filesystem::path& path);

/// Reads and ingests one file. `task` is only consulted for AFC data.
IngestResult ingest_file(DataFamily family, const std::filesystem::path& path, double cell_m,
                         TaskKind afc_task);

/// records.jsonl rows: {"user": ..., <record fields>}.
std::vector<json> records_to_jsonl(std::span<const UserSequence> users);
std::vector<UserSequence> records_from_jsonl(std::span<const json> rows);

}  // namespace mobkit
