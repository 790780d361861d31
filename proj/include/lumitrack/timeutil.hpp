#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "lumitrack/common.hpp"

namespace lumitrack {

// Instants are UTC seconds since the Unix epoch.
using Instant = std::int64_t;

inline constexpr std::int64_t kSecPerMin = 60;
inline constexpr std::int64_t kSecPerHour = 3600;
inline constexpr std::int64_t kSecPerDay = 86400;

struct DateUtc {
    int year = 0;
    int month = 0;  // 1..12
    int day = 0;    // 1..31

    friend bool operator==(const DateUtc&, const DateUtc&) = default;
};

inline bool valid_date(const DateUtc& d) {
    if (d.month < 1 || d.month > 12 || d.day < 1) return false;
    const std::chrono::year_month_day ymd{std::chrono::year{d.year},
                                          std::chrono::month{unsigned(d.month)},
                                          std::chrono::day{unsigned(d.day)}};
    return ymd.ok();
}

// days since 1970-01-01
inline std::int64_t civil_days(const DateUtc& d) {
    const std::chrono::year_month_day ymd{std::chrono::year{d.year},
                                          std::chrono::month{unsigned(d.month)},
                                          std::chrono::day{unsigned(d.day)}};
    return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

inline DateUtc date_from_days(std::int64_t days) {
    const std::chrono::sys_days sd{std::chrono::days{days}};
    const std::chrono::year_month_day ymd{sd};
    return DateUtc{int(ymd.year()), int(unsigned(ymd.month())), int(unsigned(ymd.day()))};
}

inline DateUtc add_days(const DateUtc& d, std::int64_t n) {
    return date_from_days(civil_days(d) + n);
}

inline int day_of_year(const DateUtc& d) {
    return static_cast<int>(civil_days(d) - civil_days({d.year, 1, 1})) + 1;
}

inline Instant midnight_utc(const DateUtc& d) {
    return civil_days(d) * kSecPerDay;
}

inline DateUtc date_of_instant(Instant t) {
    std::int64_t days = t / kSecPerDay;
    if (t < 0 && t % kSecPerDay != 0) --days;
    return date_from_days(days);
}

// "2018-10-15T06:30:00Z" (seconds precision, UTC only)
inline std::string format_rfc3339(Instant t) {
    const DateUtc d = date_of_instant(t);
    std::int64_t sod = t - midnight_utc(d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", d.year,
                  d.month, d.day, int(sod / 3600), int(sod / 60 % 60), int(sod % 60));
    return buf;
}

inline std::string format_date(const DateUtc& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.year, d.month, d.day);
    return buf;
}

namespace detail {
inline bool parse_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        const char c = s[i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}
}  // namespace detail

inline std::optional<DateUtc> parse_date(std::string_view s) {
    DateUtc d;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    if (!detail::parse_int(s, 0, 4, d.year) || !detail::parse_int(s, 5, 2, d.month) ||
        !detail::parse_int(s, 8, 2, d.day))
        return std::nullopt;
    if (!valid_date(d)) return std::nullopt;
    return d;
}

// RFC 3339 with 'T' or ' ' separator, optional fractional seconds
// (truncated), trailing 'Z' or no offset designator accepted as UTC.
inline std::optional<Instant> parse_rfc3339(std::string_view s) {
    if (s.size() < 19) return std::nullopt;
    const auto date = parse_date(s.substr(0, 10));
    if (!date) return std::nullopt;
    if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return std::nullopt;
    int hh = 0, mm = 0, ss = 0;
    if (!detail::parse_int(s, 11, 2, hh) || s[13] != ':' ||
        !detail::parse_int(s, 14, 2, mm) || s[16] != ':' ||
        !detail::parse_int(s, 17, 2, ss))
        return std::nullopt;
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
    if (pos < s.size()) {
        if ((s[pos] == 'Z' || s[pos] == 'z') && pos + 1 == s.size()) {
            // ok
        } else if (s.substr(pos) == "+00:00" || s.substr(pos) == "-00:00") {
            // ok
        } else {
            return std::nullopt;
        }
    }
    return midnight_utc(*date) + hh * kSecPerHour + mm * kSecPerMin + ss;
}

}  // namespace lumitrack
