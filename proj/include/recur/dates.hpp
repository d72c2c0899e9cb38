#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace recur {

using Date = std::chrono::sys_days;

// Ages are day differences divided by this constant.
inline constexpr double kDaysPerYear = 365.25;

// Parses YYYY-MM-DD. Throws ParseError.
Date parse_date(std::string_view text);
std::string format_date(Date d);

// Days since 1970-01-01. Fractional day positions (sampled birthdates)
// use the same axis.
inline double day_number(Date d) {
  return static_cast<double>(d.time_since_epoch().count());
}

inline Date date_from_day_number(long days) {
  return Date{std::chrono::days{days}};
}

inline double years_between(double from_day, double to_day) {
  return (to_day - from_day) / kDaysPerYear;
}

inline double years_between(Date from, Date to) {
  return years_between(day_number(from), day_number(to));
}

// Completed years of age at `visit` for someone born at `birth`.
int completed_years(double birth_day, double visit_day);

}  // namespace recur
