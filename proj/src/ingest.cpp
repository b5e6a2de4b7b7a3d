#include "mobkit/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "mobkit/errors.hpp"
#include "mobkit/io.hpp"

namespace mobkit {
namespace {

constexpr double kMetersPerDegree = 111320.0;

template <typename Row>
class GroupBuilder {
 public:
  void add(const std::string& user, Row row) {
    auto [it, inserted] = slots_.try_emplace(user, groups_.size());
    if (inserted) groups_.push_back({user, {}});
    groups_[it->second].rows.push_back(std::move(row));
  }

  Grouped<Row> take() { return std::move(groups_); }

 private:
  Grouped<Row> groups_;
  std::unordered_map<std::string, std::size_t> slots_;
};

bool is_jsonl(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".ndjson" || ext == ".json";
}

double parse_double(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string("bad ") + what + " value '" + text + "'");
  }
}

std::string json_string(const json& row, const char* key) {
  const auto& v = row.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  return v.dump();
}

template <typename Row, typename FromCsv, typename FromJson>
Grouped<Row> read_grouped(const std::filesystem::path& path, FromCsv from_csv, FromJson from_json) {
  GroupBuilder<Row> builder;
  if (is_jsonl(path)) {
    for (const auto& row : io::read_jsonl(path)) {
      try {
        builder.add(json_string(row, "user"), from_json(row));
      } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
      }
    }
  } else {
    const auto table = io::read_csv(path);
    const auto user_col = table.column("user");
    for (const auto& row : table.rows) builder.add(row[user_col], from_csv(table, row));
  }
  auto groups = builder.take();
  if (groups.empty()) throw EmptyDataset(path.string() + " contains no records");
  return groups;
}

}  // namespace

std::string_view to_string(DataFamily family) {
  switch (family) {
    case DataFamily::gps: return "gps";
    case DataFamily::checkin: return "checkin";
    case DataFamily::afc: return "afc";
  }
  return "unknown";
}

DataFamily parse_data_family(std::string_view name) {
  if (name == "gps") return DataFamily::gps;
  if (name == "checkin") return DataFamily::checkin;
  if (name == "afc") return DataFamily::afc;
  throw ConfigError("unknown data kind '" + std::string(name) + "' (expected gps, checkin or afc)");
}

std::string grid_cell_label(double lat, double lon, double cell_m) {
  if (!(cell_m > 0.0)) throw ConfigError("grid cell size must be positive");
  const double row_size_deg = cell_m / kMetersPerDegree;
  const auto row = static_cast<std::int64_t>(std::floor(lat / row_size_deg));
  const double row_center = (static_cast<double>(row) + 0.5) * row_size_deg;
  const double col_size_deg = cell_m / (kMetersPerDegree * std::cos(row_center * std::numbers::pi / 180.0));
  const auto col = static_cast<std::int64_t>(std::floor(lon / col_size_deg));
  return "r" + std::to_string(row) + "c" + std::to_string(col);
}

std::vector<LabeledStay> discretize_gps(std::span<const GpsPoint> points, double cell_m) {
  std::vector<LabeledStay> stays;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && points[i].time <= points[i - 1].time) {
      throw OutOfOrderInput("GPS timestamps must strictly increase (at " + points[i].time.iso() + ")");
    }
    auto label = grid_cell_label(points[i].lat, points[i].lon, cell_m);
    if (!stays.empty() && stays.back().label == label) continue;
    stays.push_back({points[i].time, std::move(label)});
  }
  return stays;
}

std::vector<Stay> gps_to_stays(std::span<const GpsPoint> points, double cell_m, LocationIndex& index) {
  const auto labeled = discretize_gps(points, cell_m);
  std::vector<Stay> stays;
  stays.reserve(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    Stay s;
    s.time = labeled[i].time;
    s.weekday = s.time.weekday();
    s.first = i == 0;
    s.duration_min = s.first ? 0 : minutes_between(labeled[i - 1].time, labeled[i].time);
    s.location = index.add(labeled[i].label);
    stays.push_back(s);
  }
  return stays;
}

std::vector<Stay> checkins_to_stays(std::span<const CheckIn> checkins, LocationIndex& index) {
  std::vector<Stay> stays;
  stays.reserve(checkins.size());
  for (std::size_t i = 0; i < checkins.size(); ++i) {
    if (i > 0 && checkins[i].time <= checkins[i - 1].time) {
      throw OutOfOrderInput("check-in timestamps must strictly increase (at " +
                            checkins[i].time.iso() + ")");
    }
    Stay s;
    s.time = checkins[i].time;
    s.weekday = s.time.weekday();
    s.location = index.add(checkins[i].venue);
    stays.push_back(s);
  }
  return stays;
}

std::vector<Trip> annotate_trips(std::span<const RawTrip> trips, LocationIndex& index) {
  std::vector<Trip> out;
  out.reserve(trips.size());
  for (std::size_t i = 0; i < trips.size(); ++i) {
    const auto& raw = trips[i];
    if (raw.tap_out <= raw.tap_in) {
      throw OutOfOrderInput("trip tap-out must follow tap-in (at " + raw.tap_in.iso() + ")");
    }
    if (i > 0 && raw.tap_in <= trips[i - 1].tap_out) {
      throw OutOfOrderInput("trip tap-in must follow the previous tap-out (at " + raw.tap_in.iso() + ")");
    }
    const LocalTime day_start = service_day_start(raw.tap_in);
    const bool first_of_day = i == 0 || service_day_start(trips[i - 1].tap_in) != day_start;
    Trip t;
    t.tap_in = raw.tap_in;
    t.tap_out = raw.tap_out;
    t.weekday = day_start.weekday();
    t.origin = index.add(raw.origin);
    t.destination = index.add(raw.destination);
    t.prior_stay_min = minutes_between(first_of_day ? day_start : trips[i - 1].tap_out, raw.tap_in);
    out.push_back(t);
  }
  return out;
}

std::vector<TripActivity> afc_to_activities(std::span<const Trip> trips) {
  std::vector<TripActivity> activities;
  for (std::size_t i = 0; i < trips.size(); ++i) {
    const auto& trip = trips[i];
    const LocalTime day_start = service_day_start(trip.tap_in);
    const bool first_of_day = i == 0 || service_day_start(trips[i - 1].tap_in) != day_start;
    TripActivity a;
    if (first_of_day) {
      a.start = day_start;
      a.start_location = kHome;
    } else {
      a.start = trips[i - 1].tap_out;
      a.start_location = trips[i - 1].destination;
    }
    a.end = trip.tap_in;
    a.end_location = trip.origin;
    a.weekday = day_start.weekday();
    a.duration_min = minutes_between(a.start, a.end);
    activities.push_back(a);
  }
  return activities;
}

InstanceBatch make_instances(std::span<const UserSequence> users, TaskKind task,
                             const WindowConfig& windows) {
  if (windows.context_len == 0) throw ConfigError("context length must be at least 1");
  InstanceBatch batch;
  const std::size_t first_target =
      windows.context_len + (windows.require_full_history ? windows.history_len : 0);
  for (const auto& user : users) {
    const auto& records = user.records;
    for (const auto& r : records) {
      if (!record_matches_task(r, task)) {
        throw ValidationError("user " + user.user + " has records that do not match task " +
                              std::string(to_string(task)));
      }
    }
    if (records.size() < first_target + 1) {
      spdlog::warn("skipping user {}: {} records, need at least {}", user.user, records.size(),
                   first_target + 1);
      batch.skipped_users.push_back(user.user);
      continue;
    }
    for (std::size_t j = first_target; j < records.size(); ++j) {
      const std::size_t context_begin = j - windows.context_len;
      const std::size_t history_begin =
          context_begin > windows.history_len ? context_begin - windows.history_len : 0;
      PredictionInstance inst;
      inst.id = user.user + "#" + std::to_string(j);
      inst.task = task;
      inst.user = user.user;
      inst.history.assign(records.begin() + static_cast<std::ptrdiff_t>(history_begin),
                          records.begin() + static_cast<std::ptrdiff_t>(context_begin));
      inst.context.assign(records.begin() + static_cast<std::ptrdiff_t>(context_begin),
                          records.begin() + static_cast<std::ptrdiff_t>(j));
      inst.target = target_of(records[j], task);
      inst.truth = predicted_location(records[j]);
      batch.instances.push_back(std::move(inst));
    }
  }
  return batch;
}

InstanceSplit split_instances(std::span<const PredictionInstance> instances, double test_fraction) {
  if (test_fraction < 0.0 || test_fraction > 1.0) throw ConfigError("test fraction must be in [0, 1]");
  std::unordered_map<std::string, std::size_t> per_user;
  for (const auto& inst : instances) ++per_user[inst.user];
  std::unordered_map<std::string, std::size_t> seen;
  InstanceSplit split;
  for (const auto& inst : instances) {
    const std::size_t n = per_user[inst.user];
    const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n) - 1e-9));
    const std::size_t position = seen[inst.user]++;
    (position + n_test >= n ? split.test : split.train).push_back(inst);
  }
  return split;
}

IngestResult ingest_gps(const Grouped<GpsPoint>& data, double cell_m) {
  IngestResult result{DataFamily::gps, TaskKind::gps_location, {}, {}};
  for (const auto& user : data) {
    UserSequence seq{user.user, {}};
    for (const auto& s : gps_to_stays(user.rows, cell_m, result.index)) seq.records.emplace_back(s);
    result.users.push_back(std::move(seq));
  }
  if (result.index.empty()) throw EmptyDataset("GPS input contains no points");
  return result;
}

IngestResult ingest_checkins(const Grouped<CheckIn>& data) {
  IngestResult result{DataFamily::checkin, TaskKind::checkin_location, {}, {}};
  for (const auto& user : data) {
    UserSequence seq{user.user, {}};
    for (const auto& s : checkins_to_stays(user.rows, result.index)) seq.records.emplace_back(s);
    result.users.push_back(std::move(seq));
  }
  if (result.index.empty()) throw EmptyDataset("check-in input contains no records");
  return result;
}

IngestResult ingest_afc(const Grouped<RawTrip>& data, TaskKind task) {
  if (task != TaskKind::trip_origin && task != TaskKind::trip_destination) {
    throw ConfigError("AFC data supports only trip_origin or trip_destination tasks");
  }
  IngestResult result{DataFamily::afc, task, {}, {}};
  for (const auto& user : data) {
    UserSequence seq{user.user, {}};
    const auto trips = annotate_trips(user.rows, result.index);
    if (task == TaskKind::trip_destination) {
      for (const auto& t : trips) seq.records.emplace_back(t);
    } else {
      for (const auto& a : afc_to_activities(trips)) seq.records.emplace_back(a);
    }
    result.users.push_back(std::move(seq));
  }
  if (result.index.empty()) throw EmptyDataset("AFC input contains no trips");
  return result;
}

Grouped<GpsPoint> read_gps(const std::filesystem::path& path) {
  return read_grouped<GpsPoint>(
      path,
      [](const io::CsvTable& t, const std::vector<std::string>& row) {
        return GpsPoint{LocalTime::parse(row[t.column("timestamp")]),
                        parse_double(row[t.column("lat")], "lat"),
                        parse_double(row[t.column("lon")], "lon")};
      },
      [](const json& row) {
        return GpsPoint{LocalTime::parse(row.at("timestamp").get<std::string>()),
                        row.at("lat").get<double>(), row.at("lon").get<double>()};
      });
}

Grouped<CheckIn> read_checkins(const std::filesystem::path& path) {
  return read_grouped<CheckIn>(
      path,
      [](const io::CsvTable& t, const std::vector<std::string>& row) {
        return CheckIn{LocalTime::parse(row[t.column("timestamp")]), row[t.column("venue_id")]};
      },
      [](const json& row) {
        return CheckIn{LocalTime::parse(row.at("timestamp").get<std::string>()),
                       json_string(row, "venue_id")};
      });
}

Grouped<RawTrip> read_afc(const std::filesystem::path& path) {
  return read_grouped<RawTrip>(
      path,
      [](const io::CsvTable& t, const std::vector<std::string>& row) {
        return RawTrip{LocalTime::parse(row[t.column("tap_in_time")]),
                       LocalTime::parse(row[t.column("tap_out_time")]), row[t.column("origin")],
                       row[t.column("dest")]};
      },
      [](const json& row) {
        return RawTrip{LocalTime::parse(row.at("tap_in_time").get<std::string>()),
                       LocalTime::parse(row.at("tap_out_time").get<std::string>()),
                       json_string(row, "origin"), json_string(row, "dest")};
      });
}

IngestResult ingest_file(DataFamily family, const std::filesystem::path& path, double cell_m,
                         TaskKind afc_task) {
  switch (family) {
    case DataFamily::gps: return ingest_gps(read_gps(path), cell_m);
    case DataFamily::checkin: return ingest_checkins(read_checkins(path));
    case DataFamily::afc: return ingest_afc(read_afc(path), afc_task);
  }
  throw ConfigError("unknown data family");
}

std::vector<json> records_to_jsonl(std::span<const UserSequence> users) {
  std::vector<json> rows;
  for (const auto& u : users) {
    for (const auto& r : u.records) {
      json j = record_to_json(r);
      j["user"] = u.user;
      rows.push_back(std::move(j));
    }
  }
  return rows;
}

std::vector<UserSequence> records_from_jsonl(std::span<const json> rows) {
  std::vector<UserSequence> users;
  std::unordered_map<std::string, std::size_t> slots;
  for (const auto& row : rows) {
    const auto user = json_string(row, "user");
    auto [it, inserted] = slots.try_emplace(user, users.size());
    if (inserted) users.push_back({user, {}});
    users[it->second].records.push_back(record_from_json(row));
  }
  return users;
}

}  // namespace mobkit
