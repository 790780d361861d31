#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "lumitrack/common.hpp"
#include "lumitrack/geo.hpp"
#include "lumitrack/timeutil.hpp"

namespace lumitrack {

// Civil rise/set convention: refraction plus solar semidiameter.
inline constexpr double kZenithDeg = 90.833;

struct SunEvents {
    Instant rise = 0;
    Instant set = 0;
};

struct NightWindow {
    Instant center = 0;       // midpoint of sunset(D) .. sunrise(D+1)
    double length_sec = 0.0;  // sunrise(D+1) - sunset(D)
};

struct SolarParams {
    double decl_rad = 0.0;
    double eqtime_min = 0.0;
};

inline double julian_day(const DateUtc& d, double hour_utc) {
    return static_cast<double>(civil_days(d)) + 2440587.5 + hour_utc / 24.0;
}

// Solar position per the NOAA calculator equations (Meeus-derived).
inline SolarParams solar_params(double jd) {
    const double t = (jd - 2451545.0) / 36525.0;
    const double l0 =
        std::fmod(280.46646 + t * (36000.76983 + 0.0003032 * t), 360.0);
    const double m = 357.52911 + t * (35999.05029 - 0.0001537 * t);
    const double e = 0.016708634 - t * (0.000042037 + 0.0000001267 * t);
    const double c =
        std::sin(deg2rad(m)) * (1.914602 - t * (0.004817 + 0.000014 * t)) +
        std::sin(deg2rad(2 * m)) * (0.019993 - 0.000101 * t) +
        std::sin(deg2rad(3 * m)) * 0.000289;
    const double true_long = l0 + c;
    const double omega = 125.04 - 1934.136 * t;
    const double app_long = true_long - 0.00569 - 0.00478 * std::sin(deg2rad(omega));
    const double eps0 =
        23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))) / 60.0) / 60.0;
    const double eps = eps0 + 0.00256 * std::cos(deg2rad(omega));
    const double decl = std::asin(std::sin(deg2rad(eps)) * std::sin(deg2rad(app_long)));
    const double y = std::tan(deg2rad(eps / 2.0)) * std::tan(deg2rad(eps / 2.0));
    const double eqtime =
        4.0 * rad2deg(y * std::sin(2 * deg2rad(l0)) - 2 * e * std::sin(deg2rad(m)) +
                      4 * e * y * std::sin(deg2rad(m)) * std::cos(2 * deg2rad(l0)) -
                      0.5 * y * y * std::sin(4 * deg2rad(l0)) -
                      1.25 * e * e * std::sin(2 * deg2rad(m)));
    return {decl, eqtime};
}

namespace detail {
// day-of-year resolved against a fixed reference year: the annual declination
// curve drifts < 0.0003 rad between nearby years, far inside stated tolerances
inline constexpr int kDoyReferenceYear = 2018;

inline DateUtc date_from_doy(int doy) {
    if (doy < 1 || doy > 366) throw input_error("day_of_year outside [1, 366]");
    const int max_doy = day_of_year({kDoyReferenceYear, 12, 31});
    if (doy > max_doy) doy = max_doy;  // 366 in a non-leap reference year
    return date_from_days(civil_days({kDoyReferenceYear, 1, 1}) + doy - 1);
}
}  // namespace detail

inline double solar_declination(int doy) {
    return solar_params(julian_day(detail::date_from_doy(doy), 12.0)).decl_rad;
}

inline double equation_of_time(int doy) {
    return solar_params(julian_day(detail::date_from_doy(doy), 12.0)).eqtime_min;
}

namespace detail {
inline std::optional<double> hour_angle_deg(double lat_deg, double decl_rad) {
    const double lat = deg2rad(lat_deg);
    const double cos_ha = std::cos(deg2rad(kZenithDeg)) / (std::cos(lat) * std::cos(decl_rad)) -
                          std::tan(lat) * std::tan(decl_rad);
    if (cos_ha > 1.0 || cos_ha < -1.0) return std::nullopt;  // polar day/night
    return rad2deg(std::acos(cos_ha));
}
}  // namespace detail

// Rise and set as minutes from UTC midnight of the given date (may fall
// outside [0, 1440) at extreme longitudes). Two passes: solar parameters at
// local solar noon first, then refined at the provisional event times.
inline std::optional<std::pair<double, double>> sunrise_sunset_minutes(
    const GeoCoord& coord, const DateUtc& date) {
    require_coord(coord);
    if (!valid_date(date)) throw input_error("invalid date");
    SolarParams sp = solar_params(julian_day(date, 12.0 - coord.lon / 15.0));
    auto ha = detail::hour_angle_deg(coord.lat, sp.decl_rad);
    if (!ha) return std::nullopt;
    double events[2] = {720.0 - 4.0 * (coord.lon + *ha) - sp.eqtime_min,
                        720.0 - 4.0 * (coord.lon - *ha) - sp.eqtime_min};
    const double sign[2] = {+1.0, -1.0};
    for (int i = 0; i < 2; ++i) {
        sp = solar_params(julian_day(date, events[i] / 60.0));
        ha = detail::hour_angle_deg(coord.lat, sp.decl_rad);
        if (!ha) return std::nullopt;
        events[i] = 720.0 - 4.0 * (coord.lon + sign[i] * *ha) - sp.eqtime_min;
    }
    return std::make_pair(events[0], events[1]);
}

inline std::optional<SunEvents> sunrise_sunset(const GeoCoord& coord, const DateUtc& date) {
    const auto mins = sunrise_sunset_minutes(coord, date);
    if (!mins) return std::nullopt;
    const Instant base = midnight_utc(date);
    return SunEvents{base + static_cast<Instant>(std::llround(mins->first * 60.0)),
                     base + static_cast<Instant>(std::llround(mins->second * 60.0))};
}

// Sun elevation above the horizon, degrees.
inline double solar_elevation_deg(const GeoCoord& coord, Instant t) {
    const DateUtc d = date_of_instant(t);
    const double min_of_day = static_cast<double>(t - midnight_utc(d)) / 60.0;
    const SolarParams sp = solar_params(julian_day(d, min_of_day / 60.0));
    double tst = std::fmod(min_of_day + sp.eqtime_min + 4.0 * coord.lon, 1440.0);
    if (tst < 0) tst += 1440.0;
    const double ha = deg2rad(tst / 4.0 - 180.0);
    const double lat = deg2rad(coord.lat);
    const double s = std::sin(lat) * std::sin(sp.decl_rad) +
                     std::cos(lat) * std::cos(sp.decl_rad) * std::cos(ha);
    return rad2deg(std::asin(std::max(-1.0, std::min(1.0, s))));
}

// Night assigned to day D spans sunset(D) -> sunrise(D+1).
inline std::optional<NightWindow> night_window(const GeoCoord& coord, const DateUtc& date) {
    const auto a = sunrise_sunset_minutes(coord, date);
    const auto b = sunrise_sunset_minutes(coord, add_days(date, 1));
    if (!a || !b) return std::nullopt;
    const double set_min = a->second;
    const double rise_min = b->first + 1440.0;
    const Instant base = midnight_utc(date);
    NightWindow w;
    w.center = base + static_cast<Instant>(std::llround((set_min + rise_min) * 30.0));
    w.length_sec = (rise_min - set_min) * 60.0;
    return w;
}

struct LatEstimate {
    double lat_deg = 0.0;
    bool ill_conditioned = false;
};

namespace detail {
inline std::optional<double> night_length_at(double lat, const DateUtc& date, double lon) {
    const auto w = night_window({lat, lon}, date);
    if (!w) return std::nullopt;
    return w->length_sec;
}
}  // namespace detail

// Invert night length to latitude in the hinted hemisphere: coarse scan over
// valid latitudes for a sign-change bracket, then bisection to < 30 s
// residual. Falls back to the closest scanned node when the target length is
// outside the achievable range. Near equinoxes the length-latitude map goes
// flat; the ill-conditioned flag reports a probe spread below 25 minutes
// across +-4 degrees about the estimate.
inline LatEstimate latitude_from_night_length(double length_sec, const DateUtc& date,
                                              int hemisphere_hint, double lon0 = 0.0) {
    if (!(length_sec > 0.0 && length_sec < 24.0 * kSecPerHour))
        throw input_error("night length outside (0, 24h)");
    const double sgn = hemisphere_hint < 0 ? -1.0 : 1.0;

    struct Node {
        double lat, len;
    };
    std::vector<Node> nodes;
    for (int k = 0; k <= 11; ++k) {
        const double lat = sgn * 6.0 * k;
        if (const auto len = detail::night_length_at(lat, date, lon0))
            nodes.push_back({lat, *len});
    }
    if (nodes.empty()) throw numeric_error("no latitude yields a night on this date");

    double lo = nodes[0].lat, hi = nodes[0].lat;
    bool bracketed = false;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        if ((nodes[i].len - length_sec) * (nodes[i + 1].len - length_sec) <= 0.0) {
            lo = nodes[i].lat;
            hi = nodes[i + 1].lat;
            bracketed = true;
            break;
        }
    }

    LatEstimate est;
    if (!bracketed) {
        const auto& best = *std::min_element(
            nodes.begin(), nodes.end(), [&](const Node& a, const Node& b) {
                return std::abs(a.len - length_sec) < std::abs(b.len - length_sec);
            });
        est.lat_deg = best.lat;
        est.ill_conditioned = true;
    } else {
        auto f = [&](double lat) {
            const auto len = detail::night_length_at(lat, date, lon0);
            return (len ? *len : 24.0 * kSecPerHour) - length_sec;
        };
        double flo = f(lo);
        for (int it = 0; it < 42; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = f(mid);
            if (flo * fm <= 0.0) {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        est.lat_deg = 0.5 * (lo + hi);
    }

    const double pl = std::max(-66.0, est.lat_deg - 4.0);
    const double ph = std::min(66.0, est.lat_deg + 4.0);
    const auto la = detail::night_length_at(pl, date, lon0);
    const auto lb = detail::night_length_at(ph, date, lon0);
    if (la && lb) {
        if (std::abs(*lb - *la) < 25.0 * kSecPerMin) est.ill_conditioned = true;
    } else {
        est.ill_conditioned = true;
    }
    return est;
}

// Invert night center to longitude at a fixed latitude; the center moves at
// -4 min per degree, so the map is monotone and bisection converges to the
// < 30 s residual. Out-of-range targets clamp to the nearer boundary.
inline double longitude_from_night_center(Instant center, const DateUtc& date, double lat) {
    const double target_min = static_cast<double>(center - midnight_utc(date)) / 60.0;
    auto f = [&](double lon) -> std::optional<double> {
        const auto w = night_window({lat, lon}, date);
        if (!w) return std::nullopt;
        return static_cast<double>(w->center - midnight_utc(date)) / 60.0 - target_min;
    };
    double lo = -180.0, hi = 180.0;
    const auto flo = f(lo), fhi = f(hi);
    if (!flo || !fhi) throw numeric_error("no night window at this latitude/date");
    if (*flo <= 0.0) return lo;  // center later than any longitude can give
    if (*fhi >= 0.0) return hi;
    double flov = *flo;
    for (int it = 0; it < 42; ++it) {
        const double mid = 0.5 * (lo + hi);
        const auto fm = f(mid);
        const double fmv = fm ? *fm : -target_min;
        if (flov * fmv <= 0.0) {
            hi = mid;
        } else {
            lo = mid;
            flov = fmv;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace lumitrack
