#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lumitrack/astro.hpp"
#include "lumitrack/common.hpp"
#include "lumitrack/geo.hpp"
#include "lumitrack/sensor_io.hpp"
#include "lumitrack/timeutil.hpp"

namespace lumitrack {

inline constexpr int kCurveHalfMin = 480;                 // +- 8 h in normalized minutes
inline constexpr int kCurveLen = 2 * kCurveHalfMin + 1;   // 961
inline constexpr int kTempHalfHours = 8;
inline constexpr int kTempLen = 2 * kTempHalfHours + 1;   // 17
inline constexpr double kLogLuxOffset = 0.01;

// uniform 1-min series; t0 is the first minute-bin start (epoch seconds)
struct MinuteSeries {
    Instant t0 = 0;
    std::vector<double> v;

    Instant time_at(std::size_t i) const { return t0 + static_cast<Instant>(i) * kSecPerMin; }
    Instant end() const { return time_at(v.size()); }
};

struct NormalizedLightCurve {
    std::array<double, kCurveLen> values{};
    std::string sensor_id;
    DateUtc date{};
    GeoCoord candidate{};
};

struct TempPairVector {
    std::array<double, kTempLen> sensor_part{};
    std::array<double, kTempLen> station_part{};
    std::string sensor_id;
    std::string station_id;
    DateUtc date{};
    GeoCoord candidate{};
};

// ---- preprocess: minute means, log scale, short-gap repair ---------------------

inline MinuteSeries preprocess_light(const std::vector<Sample>& raw) {
    if (raw.empty()) throw input_error("preprocess_light: empty series");
    const Instant bin0 = raw.front().t - (((raw.front().t % kSecPerMin) + kSecPerMin) % kSecPerMin);
    const std::size_t n_bins =
        static_cast<std::size_t>((raw.back().t - bin0) / kSecPerMin) + 1;

    std::vector<double> sum(n_bins, 0.0);
    std::vector<int> cnt(n_bins, 0);
    for (const auto& s : raw) {
        const std::size_t b = static_cast<std::size_t>((s.t - bin0) / kSecPerMin);
        sum[b] += s.v;
        cnt[b] += 1;
    }

    MinuteSeries out;
    out.t0 = bin0;
    out.v.resize(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i)
        if (cnt[i] > 0) out.v[i] = std::log10(sum[i] / cnt[i] + kLogLuxOffset);

    // repair interior gaps by linear interpolation; refuse long outages
    std::size_t i = 0;
    while (i < n_bins) {
        if (cnt[i] > 0) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n_bins && cnt[j] == 0) ++j;
        const std::size_t gap = j - i;
        if (gap >= 30)
            throw coverage_error("light outage of " + std::to_string(gap) + " min starting " +
                                 format_rfc3339(bin0 + static_cast<Instant>(i) * kSecPerMin));
        // first/last bins always contain samples, so both neighbours exist
        const double lo = out.v[i - 1], hi = out.v[j];
        for (std::size_t k = i; k < j; ++k)
            out.v[k] = lo + (hi - lo) * static_cast<double>(k - i + 1) /
                                static_cast<double>(gap + 1);
        i = j;
    }
    return out;
}

// ---- the normalization transform r ----------------------------------------------

// Core transform: tau = (t - center) * 12h / L, sampled at tau = -480..480 min
// by linear interpolation of the minute series.
inline NormalizedLightCurve reshape_window(const MinuteSeries& l, Instant center,
                                           double length_sec) {
    if (!(length_sec > 0.0)) throw input_error("reshape: non-positive night length");
    if (l.v.size() < 2) throw coverage_error("reshape: series too short");
    const double gamma = length_sec / (12.0 * kSecPerHour);  // raw seconds per tau-second

    const double need_lo = static_cast<double>(center) - kCurveHalfMin * kSecPerMin * gamma;
    const double need_hi = static_cast<double>(center) + kCurveHalfMin * kSecPerMin * gamma;
    const double have_lo = static_cast<double>(l.t0);
    const double have_hi = static_cast<double>(l.time_at(l.v.size() - 1));
    if (need_lo < have_lo || need_hi > have_hi)
        throw coverage_error("reshape: light series covers [" + format_rfc3339(l.t0) + ", " +
                             format_rfc3339(l.time_at(l.v.size() - 1)) + "] but window needs [" +
                             format_rfc3339(static_cast<Instant>(std::floor(need_lo))) + ", " +
                             format_rfc3339(static_cast<Instant>(std::ceil(need_hi))) + "]");

    NormalizedLightCurve out;
    for (int k = -kCurveHalfMin; k <= kCurveHalfMin; ++k) {
        const double t = static_cast<double>(center) + k * kSecPerMin * gamma;
        double x = (t - have_lo) / kSecPerMin;
        if (x < 0) x = 0;  // guards rounding at the exact left endpoint
        std::size_t i = static_cast<std::size_t>(x);
        if (i >= l.v.size() - 1) i = l.v.size() - 2;  // exact right endpoint
        const double frac = x - static_cast<double>(i);
        out.values[static_cast<std::size_t>(k + kCurveHalfMin)] =
            l.v[i] + (l.v[i + 1] - l.v[i]) * frac;
    }
    return out;
}

// Window parameters come from the candidate coordinate: this is what makes the
// transform position-sensitive.
inline NormalizedLightCurve reshape_light(const MinuteSeries& l, const GeoCoord& candidate,
                                          const DateUtc& date) {
    require_coord(candidate);
    const auto w = night_window(candidate, date);
    if (!w)
        throw coverage_error("reshape: no night/day transition at candidate on " +
                             format_date(date));
    auto out = reshape_window(l, w->center, w->length_sec);
    out.date = date;
    out.candidate = candidate;
    return out;
}

// ---- temperature pairing ----------------------------------------------------------

inline TempPairVector make_temp_pair(const SensorLog& sensor, const WeatherStore& store,
                                     const GeoCoord& candidate, const DateUtc& date) {
    require_coord(candidate);
    const auto w = night_window(candidate, date);
    if (!w)
        throw coverage_error("temp pair: no night/day transition at candidate on " +
                             format_date(date));

    TempPairVector out;
    out.sensor_id = sensor.id;
    out.date = date;
    out.candidate = candidate;

    for (int k = -kTempHalfHours; k <= kTempHalfHours; ++k) {
        const Instant mid = w->center + Instant(k) * kSecPerHour;
        const Instant lo = mid - kSecPerHour / 2, hi = mid + kSecPerHour / 2;
        auto it = std::lower_bound(sensor.temp.begin(), sensor.temp.end(), lo,
                                   [](const Sample& s, Instant t) { return s.t < t; });
        double acc = 0.0;
        int n = 0;
        for (; it != sensor.temp.end() && it->t < hi; ++it, ++n) acc += it->v;
        if (n == 0)
            throw coverage_error("temp pair: sensor " + sensor.id + " has no samples in hour " +
                                 format_rfc3339(mid));
        out.sensor_part[static_cast<std::size_t>(k + kTempHalfHours)] = acc / n;
    }

    out.station_id = store.nearest_station(candidate);
    const auto st = station_night_series(store, out.station_id, *w);
    std::copy(st.begin(), st.end(), out.station_part.begin());
    return out;
}

// ---- debug dump --------------------------------------------------------------------

inline void dump_normalized_csv(std::ostream& out, const NormalizedLightCurve& c) {
    out << "tau_min,log10_lux\n";
    for (int k = -kCurveHalfMin; k <= kCurveHalfMin; ++k)
        out << k << ',' << detail::fmt_double(c.values[static_cast<std::size_t>(k + kCurveHalfMin)])
            << '\n';
}

}  // namespace lumitrack
