#include <doctest.h>

#include <chrono>
#include <cmath>

#include "mobkit/errors.hpp"
#include "mobkit/ingest.hpp"
#include "mobkit/io.hpp"
#include "test_util.hpp"

using namespace mobkit;
using namespace std::chrono;
using mobkit::testing::TempDir;

namespace {

LocalTime at(const char* text) { return LocalTime::parse(text); }

Stay stay(const char* t, LocationId l) {
  Stay s;
  s.time = at(t);
  s.weekday = s.time.weekday();
  s.duration_min = 0;
  s.location = l;
  return s;
}

UserSequence stays_user(std::size_t n) {
  UserSequence u{"u", {}};
  for (std::size_t i = 0; i < n; ++i) {
    u.records.emplace_back(stay("2024-03-04 08:00", static_cast<LocationId>(i % 3)));
    std::get<Stay>(u.records.back()).time = at("2024-03-04 08:00").plus_minutes(static_cast<std::int64_t>(60 * i));
  }
  return u;
}

}  // namespace

TEST_CASE("local time parsing and formatting") {
  const auto t = at("2024-03-04 08:05");
  CHECK(t.iso() == "2024-03-04T08:05:00");
  CHECK(t.compact() == "2024-03-04 08:05");
  CHECK(at("2024-03-04T08:05:30").iso() == "2024-03-04T08:05:30");
  CHECK(t.weekday() == Monday);
  CHECK(t.minute_of_day() == 8 * 60 + 5);
  CHECK(weekday_name(Sunday) == "Sunday");
  CHECK(parse_weekday("Friday") == Friday);
  CHECK_THROWS_AS(parse_weekday("Fri-day"), ValidationError);
  CHECK_THROWS_AS(LocalTime::parse("2024-13-01 00:00"), ValidationError);
  CHECK_THROWS_AS(LocalTime::parse("yesterday"), ValidationError);
  CHECK(minutes_between(at("2024-03-04 09:00"), at("2024-03-04 10:30")) == 90);
}

TEST_CASE("service day starts at 04:00") {
  CHECK(service_day_start(at("2024-03-04 08:00")) == at("2024-03-04 04:00"));
  CHECK(service_day_start(at("2024-03-05 03:59")) == at("2024-03-04 04:00"));
  CHECK(service_day_start(at("2024-03-05 04:00")) == at("2024-03-05 04:00"));
}

TEST_CASE("location index assigns first-appearance ids") {
  const std::vector<std::string> labels = {"A", "B", "A", "C"};
  const auto index = LocationIndex::build(labels);
  CHECK(index.size() == 3);
  CHECK(index.encode("A") == 0);
  CHECK(index.encode("B") == 1);
  CHECK(index.encode("C") == 2);
  for (const auto& l : labels) CHECK(index.decode(index.encode(l)) == l);
  CHECK_THROWS_AS(index.encode("Z"), ValidationError);
  CHECK_THROWS_AS(index.decode(3), ValidationError);
  CHECK_THROWS_AS(index.decode(kHome), ValidationError);

  const std::vector<std::string> same(100, "X");
  CHECK(LocationIndex::build(same).size() == 1);
  CHECK_THROWS_AS(LocationIndex::build({}), EmptyDataset);

  std::vector<std::string> stations;
  for (int i = 0; i < 92; ++i) stations.push_back("ST" + std::to_string(i));
  const auto hk = LocationIndex::build(stations);
  CHECK(hk.size() == 92);
  CHECK(hk.encode("ST91") == 91);

  const auto restored = LocationIndex::from_json(index.to_json());
  CHECK(restored.encode("C") == 2);
  CHECK(index.to_json().dump() == R"({"A":0,"B":1,"C":2})");
  CHECK_THROWS_AS(LocationIndex::from_json(json{{"A", 0}, {"B", 2}}), ValidationError);
}

TEST_CASE("gps stays carry the gap to the previous stay") {
  LocationIndex index;
  const double lat = 22.30, lon = 114.10;
  const std::vector<GpsPoint> pts = {{at("2024-03-04 09:00"), lat, lon}, {at("2024-03-04 10:30"), lat + 0.05, lon}};
  const auto stays = gps_to_stays(pts, 500, index);
  REQUIRE(stays.size() == 2);
  CHECK(stays[0].first);
  CHECK(stays[0].duration_min == 0);
  CHECK_FALSE(stays[1].first);
  CHECK(stays[1].duration_min == 90);
  CHECK(stays[0].location == 0);
  CHECK(stays[1].location == 1);
  CHECK(stays[1].weekday == Monday);
}

TEST_CASE("consecutive points in one cell merge") {
  // Brute-force oracle: label every point, keep those whose label differs from the previous point.
  const std::vector<GpsPoint> pts = {
      {at("2024-03-04 08:00"), 22.3001, 114.1001}, {at("2024-03-04 08:10"), 22.3002, 114.1002},
      {at("2024-03-04 08:20"), 22.3300, 114.1001}, {at("2024-03-04 08:30"), 22.3301, 114.1002},
      {at("2024-03-04 08:40"), 22.3001, 114.1001},
  };
  std::vector<std::pair<LocalTime, std::string>> expected;
  std::string prev;
  for (const auto& p : pts) {
    const auto label = grid_cell_label(p.lat, p.lon, 500);
    if (label != prev) expected.emplace_back(p.time, label);
    prev = label;
  }
  REQUIRE(expected.size() == 3);
  const auto merged = discretize_gps(pts, 500);
  REQUIRE(merged.size() == expected.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    CHECK(merged[i].time == expected[i].first);
    CHECK(merged[i].label == expected[i].second);
  }
  LocationIndex index;
  const auto stays = gps_to_stays(pts, 500, index);
  CHECK(stays[1].duration_min == 20);
  CHECK(stays[2].duration_min == 20);
  CHECK(stays[2].location == stays[0].location);
  CHECK(index.size() == 2);
}

TEST_CASE("grid cells are square in metres") {
  // 500 m of latitude is ~0.0045 degrees.
  CHECK(grid_cell_label(0.001, 0.001, 500) == grid_cell_label(0.004, 0.004, 500));
  CHECK(grid_cell_label(0.001, 0.001, 500) != grid_cell_label(0.0046, 0.001, 500));
  CHECK_THROWS_AS(grid_cell_label(0, 0, 0), ConfigError);
}

TEST_CASE("unordered inputs are rejected") {
  LocationIndex index;
  const std::vector<GpsPoint> pts = {{at("2024-03-04 10:00"), 0, 0}, {at("2024-03-04 09:00"), 1, 1}};
  CHECK_THROWS_AS(gps_to_stays(pts, 500, index), OutOfOrderInput);
  const std::vector<CheckIn> cis = {{at("2024-03-04 10:00"), "a"}, {at("2024-03-04 10:00"), "b"}};
  CHECK_THROWS_AS(checkins_to_stays(cis, index), OutOfOrderInput);
  const std::vector<RawTrip> bad_trip = {{at("2024-03-04 10:00"), at("2024-03-04 09:00"), "A", "B"}};
  CHECK_THROWS_AS(annotate_trips(bad_trip, index), OutOfOrderInput);
  const std::vector<RawTrip> overlap = {{at("2024-03-04 08:00"), at("2024-03-04 08:30"), "A", "B"},
                                        {at("2024-03-04 08:20"), at("2024-03-04 08:50"), "B", "A"}};
  CHECK_THROWS_AS(annotate_trips(overlap, index), OutOfOrderInput);
}

TEST_CASE("check-ins have no duration") {
  LocationIndex index;
  const std::vector<CheckIn> cis = {{at("2024-03-04 10:00"), "cafe"}, {at("2024-03-04 12:00"), "gym"}};
  const auto stays = checkins_to_stays(cis, index);
  REQUIRE(stays.size() == 2);
  CHECK_FALSE(stays[1].duration_min.has_value());
  CHECK(stays[1].location == 1);
}

TEST_CASE("afc day with two trips") {
  LocationIndex index;
  const std::vector<RawTrip> raw = {{at("2024-03-04 08:00"), at("2024-03-04 08:30"), "A", "B"},
                                    {at("2024-03-04 17:00"), at("2024-03-04 17:40"), "B", "A"}};
  const auto trips = annotate_trips(raw, index);
  CHECK(trips[0].prior_stay_min == 240);
  CHECK(trips[1].prior_stay_min == 510);
  CHECK(trips[1].weekday == Monday);
  const auto acts = afc_to_activities(trips);
  REQUIRE(acts.size() == 2);
  CHECK(acts[0].start == at("2024-03-04 04:00"));
  CHECK(acts[0].end == at("2024-03-04 08:00"));
  CHECK(acts[0].start_location == kHome);
  CHECK(acts[0].end_location == index.encode("A"));
  CHECK(acts[0].duration_min == 240);
  CHECK(acts[1].start == at("2024-03-04 08:30"));
  CHECK(acts[1].end == at("2024-03-04 17:00"));
  CHECK(acts[1].start_location == index.encode("B"));
  CHECK(acts[1].end_location == index.encode("B"));
  CHECK(acts[1].duration_min == 510);
}

TEST_CASE("afc single-trip day yields only the home activity") {
  LocationIndex index;
  const std::vector<RawTrip> raw = {{at("2024-03-04 10:00"), at("2024-03-04 10:30"), "A", "B"}};
  const auto acts = afc_to_activities(annotate_trips(raw, index));
  REQUIRE(acts.size() == 1);
  CHECK(acts[0].start_location == kHome);
}

TEST_CASE("afc trips before 04:00 belong to the previous service day") {
  LocationIndex index;
  const std::vector<RawTrip> raw = {{at("2024-03-04 22:00"), at("2024-03-04 22:30"), "A", "B"},
                                    {at("2024-03-05 01:00"), at("2024-03-05 01:20"), "B", "A"},
                                    {at("2024-03-05 07:00"), at("2024-03-05 07:30"), "A", "B"}};
  const auto trips = annotate_trips(raw, index);
  CHECK(trips[1].weekday == Monday);
  CHECK(trips[1].prior_stay_min == 150);
  CHECK(trips[2].weekday == Tuesday);
  CHECK(trips[2].prior_stay_min == 180);
  const auto acts = afc_to_activities(trips);
  REQUIRE(acts.size() == 3);
  CHECK(acts[1].start_location == index.encode("B"));
  CHECK(acts[2].start_location == kHome);
  CHECK(acts[2].start == at("2024-03-05 04:00"));
}

TEST_CASE("windowing counts") {
  const std::vector<UserSequence> users = {stays_user(10)};
  WindowConfig full{4, 3, true};
  const auto strict = make_instances(users, TaskKind::gps_location, full);
  CHECK(strict.instances.size() == 3);
  CHECK(strict.instances[0].history.size() == 4);
  CHECK(strict.instances[0].context.size() == 3);

  WindowConfig loose{4, 3, false};
  const auto all = make_instances(users, TaskKind::gps_location, loose);
  CHECK(all.instances.size() == 10 - 3);
  CHECK(all.instances[0].history.empty());
  CHECK(all.instances[1].history.size() == 1);
  CHECK(all.instances.back().history.size() == 4);

  const std::vector<UserSequence> tiny = {stays_user(4)};
  const auto one = make_instances(tiny, TaskKind::gps_location, loose);
  REQUIRE(one.instances.size() == 1);
  CHECK(one.instances[0].history.empty());
  CHECK(one.instances[0].id == "u#3");

  const std::vector<UserSequence> short_user = {stays_user(3)};
  const auto skipped = make_instances(short_user, TaskKind::gps_location, loose);
  CHECK(skipped.instances.empty());
  CHECK(skipped.skipped_users == std::vector<std::string>{"u"});

  CHECK_THROWS_AS(make_instances(users, TaskKind::trip_destination, loose), ValidationError);
}

TEST_CASE("history precedes context and the target is the next record") {
  const std::vector<UserSequence> users = {stays_user(12)};
  const auto batch = make_instances(users, TaskKind::gps_location, WindowConfig{4, 3, false});
  for (const auto& inst : batch.instances) {
    std::vector<Record> inputs = inst.history;
    inputs.insert(inputs.end(), inst.context.begin(), inst.context.end());
    for (std::size_t i = 1; i < inputs.size(); ++i) {
      CHECK(std::get<Stay>(inputs[i - 1]).time < std::get<Stay>(inputs[i]).time);
    }
    CHECK(std::get<Stay>(inst.context.back()).time < inst.target.time);
    CHECK_FALSE(inst.target.known_location.has_value());
  }
}

TEST_CASE("task 4 target hides the destination") {
  LocationIndex index;
  const std::vector<RawTrip> raw = {{at("2024-03-04 08:00"), at("2024-03-04 08:30"), "A", "B"},
                                    {at("2024-03-04 17:00"), at("2024-03-04 17:40"), "B", "C"}};
  std::vector<UserSequence> users{{"p", {}}};
  for (const auto& t : annotate_trips(raw, index)) users[0].records.emplace_back(t);
  const auto batch = make_instances(users, TaskKind::trip_destination, WindowConfig{4, 1, false});
  REQUIRE(batch.instances.size() == 1);
  const auto& inst = batch.instances[0];
  CHECK(inst.truth == index.encode("C"));
  CHECK(inst.target.time == at("2024-03-04 17:00"));
  CHECK(inst.target.known_location == index.encode("B"));
  CHECK(inst.target.duration_min == 510);
  const auto tj = target_to_json(inst.target, inst.task);
  CHECK_FALSE(tj.contains("destination"));
  CHECK_FALSE(tj.contains("dest"));
}

TEST_CASE("chronological split per user") {
  std::vector<UserSequence> users = {stays_user(15), stays_user(8)};
  users[1].user = "v";
  const auto batch = make_instances(users, TaskKind::gps_location, WindowConfig{4, 3, false});
  const auto split = split_instances(batch.instances, 0.2);
  // u: 12 instances -> 3 test; v: 5 instances -> 1 test.
  CHECK(split.test.size() == 4);
  CHECK(split.train.size() == 13);
  CHECK(split.test[0].id == "u#12");
  CHECK(split.test.back().id == "v#7");
}

TEST_CASE("record and instance json round trip") {
  const std::vector<UserSequence> users = {stays_user(6)};
  const auto batch = make_instances(users, TaskKind::gps_location, WindowConfig{4, 3, false});
  for (const auto& inst : batch.instances) {
    const auto back = instance_from_json(instance_to_json(inst));
    CHECK(back.id == inst.id);
    CHECK(back.history == inst.history);
    CHECK(back.context == inst.context);
    CHECK(back.target == inst.target);
    CHECK(back.truth == inst.truth);
  }
  const auto rows = records_to_jsonl(users);
  const auto restored = records_from_jsonl(rows);
  REQUIRE(restored.size() == 1);
  CHECK(restored[0].records == users[0].records);
}

TEST_CASE("csv and jsonl readers") {
  TempDir dir;
  io::write_text(dir / "gps.csv",
                 "user,timestamp,lat,lon\n"
                 "a,2024-03-04 08:00,22.3,114.1\n"
                 "b,2024-03-04 08:00,22.3,114.1\n"
                 "a,2024-03-04 09:00,22.4,114.1\n");
  const auto gps = read_gps(dir / "gps.csv");
  REQUIRE(gps.size() == 2);
  CHECK(gps[0].user == "a");
  CHECK(gps[0].rows.size() == 2);

  io::write_text(dir / "ci.jsonl",
                 R"({"user": "a", "timestamp": "2024-03-04T08:00:00", "venue_id": 17})"
                 "\n"
                 R"({"user": "a", "timestamp": "2024-03-04T09:00:00", "venue_id": "x"})"
                 "\n");
  const auto ci = read_checkins(dir / "ci.jsonl");
  REQUIRE(ci.size() == 1);
  CHECK(ci[0].rows[0].venue == "17");

  io::write_text(dir / "bad.csv", "user,timestamp,lat\na,2024-03-04 08:00,1\n");
  CHECK_THROWS_AS(read_gps(dir / "bad.csv"), ValidationError);
  io::write_text(dir / "empty.csv", "user,timestamp,venue_id\n");
  CHECK_THROWS_AS(read_checkins(dir / "empty.csv"), EmptyDataset);

  const auto afc = ingest_file(DataFamily::afc, mobkit::testing::fixture("afc_toy.csv"), 500, TaskKind::trip_origin);
  CHECK(afc.users.size() == 2);
  CHECK(afc.index.size() == 5);
}

TEST_CASE("csv lines honour quotes") {
  const auto f = io::split_csv_line(R"(a,"b,c","d ""e""",)");
  REQUIRE(f.size() == 4);
  CHECK(f[1] == "b,c");
  CHECK(f[2] == "d \"e\"");
  CHECK(f[3].empty());
}
