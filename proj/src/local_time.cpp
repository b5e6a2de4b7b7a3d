#include "mobkit/local_time.hpp"

#include <array>
#include <charconv>
#include <cstdio>

#include "mobkit/errors.hpp"

namespace mobkit {
namespace {

constexpr std::int64_t kSecondsPerDay = 86400;
constexpr int kServiceDayStartHour = 4;

constexpr std::array<const char*, 7> kWeekdayNames = {"Sunday",   "Monday", "Tuesday", "Wednesday",
                                                      "Thursday", "Friday", "Saturday"};

bool read_int(std::string_view text, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > text.size()) return false;
  const char* first = text.data() + pos;
  const char* last = first + len;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

LocalTime LocalTime::from_civil(int year, unsigned month, unsigned day, int hour, int minute,
                                int second) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok()) throw ValidationError("invalid calendar date");
  if (hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 59) {
    throw ValidationError("invalid time of day");
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return LocalTime(static_cast<std::int64_t>(days) * kSecondsPerDay + hour * 3600 + minute * 60 +
                   second);
}

LocalTime LocalTime::parse(std::string_view text) {
  // YYYY-MM-DD[ T]HH:MM[:SS]
  int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
  const bool ok = text.size() >= 16 && read_int(text, 0, 4, year) && text[4] == '-' &&
                  read_int(text, 5, 2, month) && text[7] == '-' && read_int(text, 8, 2, day) &&
                  (text[10] == ' ' || text[10] == 'T') && read_int(text, 11, 2, hour) &&
                  text[13] == ':' && read_int(text, 14, 2, minute);
  if (!ok) throw ValidationError("unparseable timestamp '" + std::string(text) + "'");
  std::size_t used = 16;
  if (text.size() >= 19 && text[16] == ':') {
    if (!read_int(text, 17, 2, second)) {
      throw ValidationError("unparseable timestamp '" + std::string(text) + "'");
    }
    used = 19;
  }
  // Fractional seconds are truncated.
  if (used < text.size() && text[used] == '.') {
    used = text.size();
  }
  if (used != text.size()) throw ValidationError("trailing characters in timestamp '" + std::string(text) + "'");
  return from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day), hour, minute,
                    second);
}

std::chrono::sys_days LocalTime::date() const {
  return std::chrono::sys_days{std::chrono::days{floor_div(seconds_, kSecondsPerDay)}};
}

std::chrono::weekday LocalTime::weekday() const { return std::chrono::weekday{date()}; }

int LocalTime::minute_of_day() const {
  const std::int64_t in_day = seconds_ - floor_div(seconds_, kSecondsPerDay) * kSecondsPerDay;
  return static_cast<int>(in_day / 60);
}

std::string LocalTime::iso() const {
  const std::chrono::year_month_day ymd{date()};
  const std::int64_t in_day = seconds_ - floor_div(seconds_, kSecondsPerDay) * kSecondsPerDay;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(in_day / 3600), static_cast<int>(in_day / 60 % 60),
                static_cast<int>(in_day % 60));
  return buf;
}

std::string LocalTime::compact() const {
  std::string s = iso();
  s[10] = ' ';
  return s.substr(0, 16);
}

std::int64_t minutes_between(LocalTime from, LocalTime to) {
  const std::int64_t diff = to.seconds() - from.seconds();
  // round half away from zero
  return diff >= 0 ? (diff + 30) / 60 : -((-diff + 30) / 60);
}

LocalTime service_day_start(LocalTime t) {
  const std::int64_t shifted = t.seconds() - kServiceDayStartHour * 3600;
  const std::int64_t day = floor_div(shifted, kSecondsPerDay);
  return LocalTime(day * kSecondsPerDay + kServiceDayStartHour * 3600);
}

std::string weekday_name(std::chrono::weekday w) { return kWeekdayNames[w.c_encoding()]; }

std::chrono::weekday parse_weekday(std::string_view name) {
  for (unsigned i = 0; i < kWeekdayNames.size(); ++i) {
    if (name == kWeekdayNames[i]) return std::chrono::weekday{i};
  }
  throw ValidationError("unknown weekday '" + std::string(name) + "'");
}

}  // namespace mobkit
