#pragma once

#include <string>
#include <string_view>

namespace cehr {

/// Calendar dates are whole days since 1970-01-01 (negative before).
using Date = int;

/// Parses YYYY-MM-DD; throws std::invalid_argument on anything else,
/// including impossible dates such as 2021-02-30.
Date parse_date(std::string_view text);
std::string format_date(Date d);
Date make_date(int year, unsigned month, unsigned day);
/// 1..12
unsigned month_of(Date d);
int year_of(Date d);

inline constexpr double kDaysPerYear = 365.25;

}  // namespace cehr
