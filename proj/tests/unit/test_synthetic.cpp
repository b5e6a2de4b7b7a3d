#include <doctest.h>

#include "mobkit/errors.hpp"
#include "mobkit/synthetic.hpp"

using namespace mobkit;

TEST_CASE("synthetic output is deterministic per seed") {
  SyntheticProfile p;
  p.family = DataFamily::afc;
  const auto a = synthetic_to_csv(generate_synthetic_users(p, 7));
  const auto b = synthetic_to_csv(generate_synthetic_users(p, 7));
  const auto c = synthetic_to_csv(generate_synthetic_users(p, 8));
  CHECK(a == b);
  CHECK(a != c);
  for (auto family : {DataFamily::gps, DataFamily::checkin}) {
    p.family = family;
    p.pattern = SyntheticPattern::sparse;
    CHECK(synthetic_to_csv(generate_synthetic_users(p, 3)) == synthetic_to_csv(generate_synthetic_users(p, 3)));
  }
}

TEST_CASE("synthetic ids stay inside the location range") {
  for (auto family : {DataFamily::gps, DataFamily::checkin, DataFamily::afc}) {
    for (auto pattern : {SyntheticPattern::commuter, SyntheticPattern::sparse}) {
      SyntheticProfile p;
      p.family = family;
      p.pattern = pattern;
      p.locations = 5;
      p.users = 6;
      const auto data = generate_synthetic_users(p, 11);
      IngestResult r;
      switch (family) {
        case DataFamily::gps: r = ingest_gps(data.gps, 500); break;
        case DataFamily::checkin: r = ingest_checkins(data.checkins); break;
        case DataFamily::afc: r = ingest_afc(data.trips, TaskKind::trip_destination); break;
      }
      CHECK(r.index.size() <= 5);
      for (const auto& u : r.users) {
        for (const auto& rec : u.records) CHECK(predicted_location(rec) < 5);
      }
    }
  }
}

TEST_CASE("event days inject the configured number of excursions") {
  SyntheticProfile p;
  p.family = DataFamily::afc;
  p.users = 8;
  p.days = 14;
  p.event_days = {2, 9};
  p.anomalies_per_event_day = 3;
  const auto data = generate_synthetic_users(p, 21);
  REQUIRE(data.anomalies.size() == 6);
  for (const auto& a : data.anomalies) {
    CHECK((a.date == "2024-03-06" || a.date == "2024-03-13"));
    bool found = false;
    for (const auto& u : data.trips) {
      if (u.user != a.user) continue;
      for (const auto& t : u.rows) {
        if (t.destination == a.location_label && t.tap_in.iso().substr(0, 10) == a.date) found = true;
      }
    }
    CHECK_MESSAGE(found, a.user, " ", a.date);
  }
}

TEST_CASE("commuter trips alternate between two stations") {
  SyntheticProfile p;
  p.family = DataFamily::afc;
  p.users = 3;
  const auto data = generate_synthetic_users(p, 1);
  for (const auto& u : data.trips) {
    for (std::size_t i = 1; i < u.rows.size(); ++i) {
      CHECK(u.rows[i].origin == u.rows[i - 1].destination);
      CHECK(u.rows[i].destination == u.rows[i - 1].origin);
    }
  }
}

TEST_CASE("bad profiles") {
  SyntheticProfile p;
  p.users = 0;
  CHECK_THROWS_AS(generate_synthetic_users(p, 1), ConfigError);
  p = {};
  p.locations = 1;
  CHECK_THROWS_AS(generate_synthetic_users(p, 1), ConfigError);
  p = {};
  p.event_days = {40};
  CHECK_THROWS_AS(generate_synthetic_users(p, 1), ConfigError);
  p = {};
  p.anomalies_per_event_day = 11;
  CHECK_THROWS_AS(generate_synthetic_users(p, 1), ConfigError);
  CHECK_THROWS_AS(profile_from_json(json{{"userz", 3}}), ConfigError);
  CHECK_THROWS_AS(profile_from_json(json{{"pattern", "chaotic"}}), ConfigError);
}

TEST_CASE("profile json round trip") {
  SyntheticProfile p;
  p.family = DataFamily::checkin;
  p.pattern = SyntheticPattern::sparse;
  p.event_days = {1, 3};
  p.anomalies_per_event_day = 2;
  const auto back = profile_from_json(profile_to_json(p));
  CHECK(profile_to_json(back) == profile_to_json(p));
}
