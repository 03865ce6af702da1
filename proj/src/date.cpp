#include "cehr/date.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace cehr {

namespace {

int parse_field(std::string_view text, std::string_view whole) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw std::invalid_argument("bad date '" + std::string(whole) + "'");
    }
    return value;
}

}  // namespace

Date make_date(int year, unsigned month, unsigned day) {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) {
        throw std::invalid_argument("bad date " + std::to_string(year) + "-" + std::to_string(month) + "-" +
                                    std::to_string(day));
    }
    return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

Date parse_date(std::string_view text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        throw std::invalid_argument("bad date '" + std::string(text) + "'");
    }
    const int y = parse_field(text.substr(0, 4), text);
    const int m = parse_field(text.substr(5, 2), text);
    const int d = parse_field(text.substr(8, 2), text);
    if (m < 1 || d < 1) throw std::invalid_argument("bad date '" + std::string(text) + "'");
    return make_date(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
}

std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{d}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

unsigned month_of(Date d) {
    return static_cast<unsigned>(std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{d}}}.month());
}

int year_of(Date d) {
    return static_cast<int>(std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{d}}}.year());
}

}  // namespace cehr
