#include "mobkit/synthetic.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "mobkit/errors.hpp"
#include "mobkit/rng.hpp"

namespace mobkit {
namespace {

struct Visit {
  LocalTime time;
  std::size_t location;
};

std::string user_label(std::size_t u) { return fmt::format("u{:03}", u); }

std::string location_label(DataFamily family, std::size_t k) {
  return fmt::format("{}{:02}", family == DataFamily::afc ? 'S' : 'V', k);
}

std::string date_label(LocalTime t) { return t.iso().substr(0, 10); }

bool is_weekday(LocalTime day) {
  const auto w = day.weekday();
  return w != std::chrono::Saturday && w != std::chrono::Sunday;
}

struct UserRoutine {
  std::size_t home = 0;
  std::size_t work = 0;
  std::vector<std::size_t> favourites;
};

UserRoutine draw_routine(const SyntheticProfile& p, Rng& rng) {
  UserRoutine r;
  r.home = static_cast<std::size_t>(rng.below(p.locations));
  r.work = static_cast<std::size_t>(rng.below(p.locations - 1));
  if (r.work >= r.home) ++r.work;
  std::vector<std::size_t> pool(p.locations);
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
  rng.shuffle(std::span(pool));
  pool.resize(std::min<std::size_t>(4, pool.size()));
  r.favourites = pool;
  return r;
}

std::vector<Visit> routine_day(const SyntheticProfile& p, const UserRoutine& r, LocalTime day, Rng& rng) {
  std::vector<Visit> visits;
  const auto jitter = [&] { return rng.between(-p.jitter_minutes, p.jitter_minutes); };
  if (p.pattern == SyntheticPattern::commuter) {
    if (!is_weekday(day)) return visits;
    visits.push_back({day.plus_minutes(8 * 60 + jitter()), r.work});
    visits.push_back({day.plus_minutes(17 * 60 + 30 + jitter()), r.home});
    return visits;
  }
  // Sparse: 0-3 visits between 08:00 and 20:00, favourites weighted 8:4:2:1.
  static constexpr std::uint64_t kWeights[] = {8, 4, 2, 1};
  const auto count = rng.below(4);
  std::set<std::int64_t> minutes;
  while (minutes.size() < count) minutes.insert(8 * 60 + rng.between(0, 12 * 60 - 1));
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < r.favourites.size(); ++i) total += kWeights[i];
  for (auto m : minutes) {
    std::uint64_t pick = rng.below(total);
    std::size_t slot = 0;
    while (pick >= kWeights[slot]) pick -= kWeights[slot++];
    visits.push_back({day.plus_minutes(m), r.favourites[slot]});
  }
  return visits;
}

void emit_gps(const std::vector<Visit>& visits, const UserRoutine& r, LocalTime day, bool commuter,
              std::vector<GpsPoint>& out) {
  std::vector<Visit> all;
  if (commuter && !visits.empty()) all.push_back({day.plus_minutes(7 * 60), r.home});
  all.insert(all.end(), visits.begin(), visits.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto c = synthetic_location_coordinates(all[i].location);
    out.push_back({all[i].time, c.lat, c.lon});
    const LocalTime dwell = all[i].time.plus_minutes(25);
    if (i + 1 == all.size() || dwell < all[i + 1].time) out.push_back({dwell, c.lat, c.lon});
  }
}

void emit_trips(const std::vector<Visit>& visits, const UserRoutine& r, DataFamily family, Rng& rng,
                std::vector<RawTrip>& out) {
  std::size_t here = r.home;
  auto travel_to = [&](LocalTime when, std::size_t where) {
    if (where == here) return;
    const LocalTime tap_out = when.plus_minutes(rng.between(20, 45));
    out.push_back({when, tap_out, location_label(family, here), location_label(family, where)});
    here = where;
  };
  LocalTime last = visits.empty() ? LocalTime{} : visits.back().time;
  for (const auto& v : visits) {
    // Keep trips strictly ordered when random visit times crowd together.
    if (!out.empty() && v.time <= out.back().tap_out) continue;
    travel_to(v.time, v.location);
    last = v.time;
  }
  if (here != r.home && !out.empty()) travel_to(std::max(last, out.back().tap_out).plus_minutes(90), r.home);
}

}  // namespace

GpsPoint synthetic_location_coordinates(std::size_t k) {
  return GpsPoint{LocalTime{}, 22.30 + 0.01 * static_cast<double>(k / 10),
                  114.10 + 0.01 * static_cast<double>(k % 10)};
}

SyntheticData generate_synthetic_users(const SyntheticProfile& p, std::uint64_t seed) {
  if (p.users == 0 || p.days == 0) throw ConfigError("synthetic profile needs at least one user and one day");
  if (p.locations < 2) throw ConfigError("synthetic profile needs at least two locations");
  if (p.anomalies_per_event_day > p.users) {
    throw ConfigError("anomalies_per_event_day cannot exceed the number of users");
  }
  if (!p.event_days.empty() && p.locations < 3) {
    throw ConfigError("event excursions need at least three locations");
  }
  for (auto d : p.event_days) {
    if (d >= p.days) throw ConfigError("event day offset outside the simulated period");
  }
  const LocalTime start = LocalTime::parse(p.start_date + " 00:00");
  Rng rng(seed);

  std::vector<UserRoutine> routines;
  for (std::size_t u = 0; u < p.users; ++u) routines.push_back(draw_routine(p, rng));

  // Pre-draw which users take an excursion on each event day, and where.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> excursions(p.days);
  const std::set<std::size_t> event_days(p.event_days.begin(), p.event_days.end());
  for (auto d : event_days) {
    std::vector<std::size_t> order(p.users);
    for (std::size_t u = 0; u < p.users; ++u) order[u] = u;
    rng.shuffle(std::span(order));
    for (std::size_t i = 0; i < p.anomalies_per_event_day; ++i) {
      const auto u = order[i];
      const auto& r = routines[u];
      auto in_routine = [&](std::size_t k) {
        return k == r.home || k == r.work ||
               (p.pattern == SyntheticPattern::sparse &&
                std::find(r.favourites.begin(), r.favourites.end(), k) != r.favourites.end());
      };
      std::vector<std::size_t> unusual;
      for (std::size_t k = 0; k < p.locations; ++k) {
        if (!in_routine(k)) unusual.push_back(k);
      }
      if (unusual.empty()) throw ConfigError("too few locations for event excursions outside the routine");
      const std::size_t spot = unusual[static_cast<std::size_t>(rng.below(unusual.size()))];
      excursions[d].push_back({u, spot});
    }
  }

  SyntheticData data;
  data.family = p.family;
  for (std::size_t u = 0; u < p.users; ++u) {
    const auto& routine = routines[u];
    const std::string user = user_label(u);
    std::vector<GpsPoint> points;
    std::vector<CheckIn> checkins;
    std::vector<RawTrip> trips;
    for (std::size_t d = 0; d < p.days; ++d) {
      const LocalTime day = start.plus_minutes(static_cast<std::int64_t>(d) * 24 * 60);
      auto visits = routine_day(p, routine, day, rng);
      for (const auto& [who, spot] : excursions[d]) {
        if (who != u) continue;
        // Evening excursion, then back home.
        std::erase_if(visits, [&](const Visit& v) { return v.time >= day.plus_minutes(19 * 60); });
        visits.push_back({day.plus_minutes(20 * 60 + rng.between(0, 30)), spot});
        visits.push_back({day.plus_minutes(23 * 60), routine.home});
        data.anomalies.push_back({user, date_label(day), location_label(p.family, spot)});
      }
      switch (p.family) {
        case DataFamily::gps:
          emit_gps(visits, routine, day, p.pattern == SyntheticPattern::commuter, points);
          break;
        case DataFamily::checkin:
          for (const auto& v : visits) checkins.push_back({v.time, location_label(p.family, v.location)});
          break;
        case DataFamily::afc: emit_trips(visits, routine, p.family, rng, trips); break;
      }
    }
    switch (p.family) {
      case DataFamily::gps:
        if (!points.empty()) data.gps.push_back({user, std::move(points)});
        break;
      case DataFamily::checkin:
        if (!checkins.empty()) data.checkins.push_back({user, std::move(checkins)});
        break;
      case DataFamily::afc:
        if (!trips.empty()) data.trips.push_back({user, std::move(trips)});
        break;
    }
  }
  return data;
}

std::string synthetic_to_csv(const SyntheticData& data) {
  std::string out;
  char buf[160];
  switch (data.family) {
    case DataFamily::gps:
      out = "user,timestamp,lat,lon\n";
      for (const auto& u : data.gps) {
        for (const auto& pt : u.rows) {
          std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f\n", u.user.c_str(), pt.time.iso().c_str(), pt.lat,
                        pt.lon);
          out += buf;
        }
      }
      break;
    case DataFamily::checkin:
      out = "user,timestamp,venue_id\n";
      for (const auto& u : data.checkins) {
        for (const auto& c : u.rows) out += u.user + "," + c.time.iso() + "," + c.venue + "\n";
      }
      break;
    case DataFamily::afc:
      out = "user,tap_in_time,tap_out_time,origin,dest\n";
      for (const auto& u : data.trips) {
        for (const auto& t : u.rows) {
          out += u.user + "," + t.tap_in.iso() + "," + t.tap_out.iso() + "," + t.origin + "," + t.destination + "\n";
        }
      }
      break;
  }
  return out;
}

SyntheticProfile profile_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"family",    "pattern",    "users",
                                              "days",      "locations",  "start_date",
                                              "jitter_minutes", "event_days", "anomalies_per_event_day"};
  if (!j.is_object()) throw ConfigError("synthetic profile must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown synthetic profile key '" + key + "'");
  }
  try {
    SyntheticProfile p;
    if (j.contains("family")) p.family = parse_data_family(j["family"].get<std::string>());
    if (j.contains("pattern")) {
      const auto name = j["pattern"].get<std::string>();
      if (name == "commuter") p.pattern = SyntheticPattern::commuter;
      else if (name == "sparse") p.pattern = SyntheticPattern::sparse;
      else throw ConfigError("unknown synthetic pattern '" + name + "'");
    }
    p.users = j.value("users", p.users);
    p.days = j.value("days", p.days);
    p.locations = j.value("locations", p.locations);
    p.start_date = j.value("start_date", p.start_date);
    p.jitter_minutes = j.value("jitter_minutes", p.jitter_minutes);
    if (j.contains("event_days")) p.event_days = j["event_days"].get<std::vector<std::size_t>>();
    p.anomalies_per_event_day = j.value("anomalies_per_event_day", p.anomalies_per_event_day);
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad synthetic profile: ") + e.what());
  }
}

json profile_to_json(const SyntheticProfile& p) {
  return json{{"family", to_string(p.family)},
              {"pattern", p.pattern == SyntheticPattern::commuter ? "commuter" : "sparse"},
              {"users", p.users},
              {"days", p.days},
              {"locations", p.locations},
              {"start_date", p.start_date},
              {"jitter_minutes", p.jitter_minutes},
              {"event_days", p.event_days},
              {"anomalies_per_event_day", p.anomalies_per_event_day}};
}

}  // namespace mobkit
