#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace mobkit {

/// Naive civil time (no timezone), second resolution. All datasets handled here are single-city
/// local time, so no conversion ever happens.
class LocalTime {
 public:
  constexpr LocalTime() = default;
  constexpr explicit LocalTime(std::int64_t seconds_since_epoch) : seconds_(seconds_since_epoch) {}

  /// Accepts "YYYY-MM-DD HH:MM[:SS]" or "YYYY-MM-DDTHH:MM[:SS]". Throws ValidationError.
  static LocalTime parse(std::string_view text);
  static LocalTime from_civil(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                              int second = 0);

  constexpr std::int64_t seconds() const noexcept { return seconds_; }

  /// "YYYY-MM-DDTHH:MM:SS"
  std::string iso() const;
  /// "YYYY-MM-DD HH:MM", the compact form used in prompts.
  std::string compact() const;

  std::chrono::sys_days date() const;
  std::chrono::weekday weekday() const;
  int minute_of_day() const;

  LocalTime plus_minutes(std::int64_t minutes) const { return LocalTime(seconds_ + minutes * 60); }

  constexpr auto operator<=>(const LocalTime&) const = default;

 private:
  std::int64_t seconds_ = 0;
};

/// Whole minutes between two instants, rounded to nearest.
std::int64_t minutes_between(LocalTime from, LocalTime to);

/// Start of the service day containing `t`: days run from 04:00 to 04:00.
LocalTime service_day_start(LocalTime t);

std::string weekday_name(std::chrono::weekday w);
/// Throws ValidationError for unrecognised names.
std::chrono::weekday parse_weekday(std::string_view name);

}  // namespace mobkit
