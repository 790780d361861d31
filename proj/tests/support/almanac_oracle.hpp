#pragma once

// Independent sunrise/sunset reference: the "Almanac for Computers"
// algorithm (US Naval Observatory, 1990 edition). Deliberately a different
// formulation from the library's solar model so the two can cross-check.

#include <cmath>
#include <optional>

namespace oracle {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kZenith = 90.833;

inline double d2r(double d) { return d * kPi / 180.0; }
inline double r2d(double r) { return r * 180.0 / kPi; }

// minutes after UTC midnight, or nullopt when the event does not occur
inline std::optional<double> almanac_event(int year, int month, int day, double lat,
                                           double lon, bool rising) {
    const double n1 = std::floor(275.0 * month / 9.0);
    const double n2 = std::floor((month + 9.0) / 12.0);
    const double n3 = 1.0 + std::floor((year - 4.0 * std::floor(year / 4.0) + 2.0) / 3.0);
    const double n = n1 - n2 * n3 + day - 30.0;

    const double lng_hour = lon / 15.0;
    const double t = n + ((rising ? 6.0 : 18.0) - lng_hour) / 24.0;

    const double m = 0.9856 * t - 3.289;
    double l = std::fmod(
        m + 1.916 * std::sin(d2r(m)) + 0.020 * std::sin(d2r(2.0 * m)) + 282.634, 360.0);
    if (l < 0) l += 360.0;

    double ra = std::fmod(r2d(std::atan(0.91764 * std::tan(d2r(l)))), 360.0);
    if (ra < 0) ra += 360.0;
    ra += std::floor(l / 90.0) * 90.0 - std::floor(ra / 90.0) * 90.0;
    ra /= 15.0;

    const double sin_dec = 0.39782 * std::sin(d2r(l));
    const double cos_dec = std::cos(std::asin(sin_dec));

    const double cos_h = (std::cos(d2r(kZenith)) - sin_dec * std::sin(d2r(lat))) /
                         (cos_dec * std::cos(d2r(lat)));
    if (cos_h > 1.0 || cos_h < -1.0) return std::nullopt;

    const double h = (rising ? 360.0 - r2d(std::acos(cos_h)) : r2d(std::acos(cos_h))) / 15.0;
    const double local_t = h + ra - 0.06571 * t - 6.622;
    double ut = std::fmod(local_t - lng_hour, 24.0);
    if (ut < 0) ut += 24.0;
    return ut * 60.0;
}

}  // namespace oracle
