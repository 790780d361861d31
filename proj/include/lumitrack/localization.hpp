#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "lumitrack/astro.hpp"
#include "lumitrack/discriminators.hpp"
#include "lumitrack/geo.hpp"
#include "lumitrack/reshape.hpp"
#include "lumitrack/sensor_io.hpp"

namespace lumitrack {

struct LikelihoodGrid {
    GeoCoord origin{};                  // reference; axis entries are offsets from it
    std::vector<double> lat_offsets;    // strictly increasing, degrees
    std::vector<double> lon_offsets;
    std::vector<double> values;         // row-major [lat][lon], finite and >= 0
    std::vector<std::uint8_t> missing;  // cells that could not be evaluated
    std::string provenance;             // which discriminators contributed
    bool degenerate = false;            // no usable mass anywhere

    std::size_t rows() const { return lat_offsets.size(); }
    std::size_t cols() const { return lon_offsets.size(); }
    double& at(std::size_t i, std::size_t j) { return values[i * cols() + j]; }
    const double& at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }
    bool is_missing(std::size_t i, std::size_t j) const { return missing[i * cols() + j] != 0; }

    void validate() const {
        if (rows() == 0 || cols() == 0) throw input_error("grid: empty axes");
        for (std::size_t i = 1; i < rows(); ++i)
            if (!(lat_offsets[i] > lat_offsets[i - 1]))
                throw input_error("grid: latitude axis not strictly increasing");
        for (std::size_t j = 1; j < cols(); ++j)
            if (!(lon_offsets[j] > lon_offsets[j - 1]))
                throw input_error("grid: longitude axis not strictly increasing");
        if (values.size() != rows() * cols() || missing.size() != values.size())
            throw input_error("grid: cell count does not match axes");
        for (std::size_t k = 0; k < values.size(); ++k)
            if (!missing[k] && (!std::isfinite(values[k]) || values[k] < 0.0))
                throw input_error("grid: cell value not a finite non-negative number");
    }
};

struct DayEstimate {
    GeoCoord coord{};
    double peak = 0.0;
    std::string provenance;
    bool ill_conditioned = false;
};

inline constexpr double kGridHalfSpanDeg = 10.0;
inline constexpr double kGridStepDeg = 1.0;
inline constexpr double kGridFineStepDeg = 0.1;

namespace loc_detail {

inline std::vector<double> symmetric_axis(double half_span, double step) {
    if (!(step > 0.0) || !(half_span >= 0.0) || half_span / step > 1e6)
        throw input_error("grid: bad half_span/step");
    const auto n = static_cast<std::size_t>(std::llround(2.0 * half_span / step)) + 1;
    std::vector<double> axis(n);
    for (std::size_t k = 0; k < n; ++k)
        axis[k] = k + 1 == n ? half_span : -half_span + static_cast<double>(k) * step;
    return axis;
}

inline LikelihoodGrid empty_grid(const GeoCoord& reference, double half_span, double step,
                                 std::string provenance) {
    LikelihoodGrid g;
    g.origin = reference;
    g.lat_offsets = symmetric_axis(half_span, step);
    g.lon_offsets = symmetric_axis(half_span, step);
    g.values.assign(g.rows() * g.cols(), 0.0);
    g.missing.assign(g.values.size(), 0);
    g.provenance = std::move(provenance);
    return g;
}

}  // namespace loc_detail

// Scores every candidate coordinate on the grid against the day's light curve;
// candidates whose window cannot be reshaped from the series are flagged
// missing rather than zeroed.
inline LikelihoodGrid evaluate_light_grid(const Discriminator& d, const MinuteSeries& l,
                                          const DateUtc& date, const GeoCoord& reference,
                                          double half_span = kGridHalfSpanDeg,
                                          double step = kGridStepDeg) {
    if (!d.trained()) throw input_error("light grid: discriminator not trained");
    auto g = loc_detail::empty_grid(reference, half_span, step, "light");
    std::vector<double> batch;
    std::vector<std::size_t> cell_of_row;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const GeoCoord cand{reference.lat + g.lat_offsets[i],
                                reference.lon + g.lon_offsets[j]};
            if (!valid_coord(cand)) {
                g.missing[i * g.cols() + j] = 1;
                continue;
            }
            try {
                const auto curve = reshape_light(l, cand, date);
                batch.insert(batch.end(), curve.values.begin(), curve.values.end());
                cell_of_row.push_back(i * g.cols() + j);
            } catch (const coverage_error&) {
                g.missing[i * g.cols() + j] = 1;
            }
        }
    if (!cell_of_row.empty()) {
        const auto probs = match_probabilities(d, batch);
        for (std::size_t r = 0; r < cell_of_row.size(); ++r) g.values[cell_of_row[r]] = probs[r];
    }
    return g;
}

inline LikelihoodGrid evaluate_temp_grid(const Discriminator& d, const SensorLog& sensor,
                                         const WeatherStore& store, const DateUtc& date,
                                         const GeoCoord& reference,
                                         double half_span = kGridHalfSpanDeg,
                                         double step = kGridStepDeg) {
    if (!d.trained()) throw input_error("temp grid: discriminator not trained");
    auto g = loc_detail::empty_grid(reference, half_span, step, "temp");
    std::vector<double> batch;
    std::vector<std::size_t> cell_of_row;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            const GeoCoord cand{reference.lat + g.lat_offsets[i],
                                reference.lon + g.lon_offsets[j]};
            if (!valid_coord(cand)) {
                g.missing[i * g.cols() + j] = 1;
                continue;
            }
            try {
                const auto pair = make_temp_pair(sensor, store, cand, date);
                batch.insert(batch.end(), pair.sensor_part.begin(), pair.sensor_part.end());
                batch.insert(batch.end(), pair.station_part.begin(), pair.station_part.end());
                cell_of_row.push_back(i * g.cols() + j);
            } catch (const coverage_error&) {
                g.missing[i * g.cols() + j] = 1;
            }
        }
    if (!cell_of_row.empty()) {
        const auto probs = match_probabilities(d, batch);
        for (std::size_t r = 0; r < cell_of_row.size(); ++r) g.values[cell_of_row[r]] = probs[r];
    }
    return g;
}

// Bilinear upsampling onto a finer grid over the same bounds. Missing cells
// are first filled from their nearest evaluated neighbor; coarse node values
// survive exactly and interpolated values stay inside the local cell range.
inline LikelihoodGrid interpolate_grid(const LikelihoodGrid& g,
                                       double fine_step = kGridFineStepDeg) {
    g.validate();
    if (g.rows() < 2 || g.cols() < 2)
        throw input_error("interpolate: need at least a 2x2 grid");
    if (!(fine_step > 0.0)) throw input_error("interpolate: bad step");

    LikelihoodGrid filled = g;
    std::vector<std::pair<std::size_t, std::size_t>> known;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j)
            if (!g.is_missing(i, j)) known.emplace_back(i, j);
    if (known.empty()) throw input_error("interpolate: every cell is missing");
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            if (!g.is_missing(i, j)) continue;
            double best = std::numeric_limits<double>::infinity();
            std::pair<std::size_t, std::size_t> pick = known.front();
            for (const auto& [ki, kj] : known) {
                const double dlat = g.lat_offsets[ki] - g.lat_offsets[i];
                const double dlon = g.lon_offsets[kj] - g.lon_offsets[j];
                const double d2 = dlat * dlat + dlon * dlon;
                if (d2 < best) {
                    best = d2;
                    pick = {ki, kj};
                }
            }
            filled.at(i, j) = g.at(pick.first, pick.second);
            filled.missing[i * g.cols() + j] = 0;
        }

    auto fine_axis = [&](const std::vector<double>& a) {
        const double lo = a.front(), hi = a.back();
        const auto n = static_cast<std::size_t>(std::llround((hi - lo) / fine_step)) + 1;
        if (n < 2) throw input_error("interpolate: degenerate axis");
        std::vector<double> axis(n);
        for (std::size_t k = 0; k < n; ++k)
            axis[k] = k + 1 == n ? hi : lo + static_cast<double>(k) * fine_step;
        return axis;
    };
    // locate the coarse cell holding x and the unit position inside it
    auto locate = [](const std::vector<double>& a, double x, std::size_t& cell, double& t) {
        auto it = std::upper_bound(a.begin(), a.end(), x);
        std::size_t hi_idx = static_cast<std::size_t>(it - a.begin());
        hi_idx = std::min(std::max<std::size_t>(hi_idx, 1), a.size() - 1);
        cell = hi_idx - 1;
        t = std::clamp((x - a[cell]) / (a[cell + 1] - a[cell]), 0.0, 1.0);
    };

    LikelihoodGrid out;
    out.origin = g.origin;
    out.provenance = g.provenance;
    out.degenerate = g.degenerate;
    out.lat_offsets = fine_axis(g.lat_offsets);
    out.lon_offsets = fine_axis(g.lon_offsets);
    out.values.assign(out.rows() * out.cols(), 0.0);
    out.missing.assign(out.values.size(), 0);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        std::size_t ci;
        double ta;
        locate(g.lat_offsets, out.lat_offsets[i], ci, ta);
        for (std::size_t j = 0; j < out.cols(); ++j) {
            std::size_t cj;
            double tb;
            locate(g.lon_offsets, out.lon_offsets[j], cj, tb);
            const double v00 = filled.at(ci, cj), v01 = filled.at(ci, cj + 1);
            const double v10 = filled.at(ci + 1, cj), v11 = filled.at(ci + 1, cj + 1);
            double v = (1.0 - ta) * ((1.0 - tb) * v00 + tb * v01) +
                       ta * ((1.0 - tb) * v10 + tb * v11);
            // convex combination: pin the few-ulp rounding excursions back in
            v = std::clamp(v, std::min(std::min(v00, v01), std::min(v10, v11)),
                           std::max(std::max(v00, v01), std::max(v10, v11)));
            out.at(i, j) = v;
        }
    }
    return out;
}

// Elementwise product of two likelihood grids over identical axes, normalized
// to unit mass. Each factor is pre-scaled by its own maximum so the product
// cannot underflow; the normalized result and its argmax are unchanged by
// that scaling.
inline LikelihoodGrid fuse(const LikelihoodGrid& a, const LikelihoodGrid& b) {
    a.validate();
    b.validate();
    if (a.lat_offsets != b.lat_offsets || a.lon_offsets != b.lon_offsets ||
        a.origin.lat != b.origin.lat || a.origin.lon != b.origin.lon)
        throw input_error("fuse: grids are not on the same axes");

    LikelihoodGrid out = a;
    out.provenance = a.provenance + "+" + b.provenance;
    out.degenerate = a.degenerate || b.degenerate;
    double amax = 0.0, bmax = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        if (!a.missing[k]) amax = std::max(amax, a.values[k]);
        if (!b.missing[k]) bmax = std::max(bmax, b.values[k]);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        if (a.missing[k] || b.missing[k]) {
            out.missing[k] = 1;
            out.values[k] = 0.0;
            continue;
        }
        out.missing[k] = 0;
        out.values[k] =
            (amax > 0.0 && bmax > 0.0) ? (a.values[k] / amax) * (b.values[k] / bmax) : 0.0;
        total += out.values[k];
    }
    if (total > 0.0) {
        for (std::size_t k = 0; k < out.values.size(); ++k)
            if (!out.missing[k]) out.values[k] /= total;
    } else {
        out.degenerate = true;
    }
    return out;
}

// Argmax cell of the grid. Ties prefer the cell nearest the grid center, then
// the lexicographically first index pair. The estimate is flagged
// ill-conditioned when the region at 90% of the peak spans more than 5
// degrees along either axis.
inline DayEstimate estimate_day(const LikelihoodGrid& g) {
    g.validate();
    if (g.degenerate) throw input_error("estimate: degenerate grid");
    const double lat_c = 0.5 * (g.lat_offsets.front() + g.lat_offsets.back());
    const double lon_c = 0.5 * (g.lon_offsets.front() + g.lon_offsets.back());

    double best = -1.0, best_d2 = 0.0;
    std::size_t bi = 0, bj = 0;
    bool found = false;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            if (g.is_missing(i, j)) continue;
            const double v = g.at(i, j);
            const double dlat = g.lat_offsets[i] - lat_c;
            const double dlon = g.lon_offsets[j] - lon_c;
            const double d2 = dlat * dlat + dlon * dlon;
            if (!found || v > best || (v == best && d2 < best_d2)) {
                best = v;
                best_d2 = d2;
                bi = i;
                bj = j;
                found = true;
            }
        }
    if (!found || !(best > 0.0)) throw input_error("estimate: degenerate grid");

    double lat_lo = g.lat_offsets[bi], lat_hi = lat_lo;
    double lon_lo = g.lon_offsets[bj], lon_hi = lon_lo;
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            if (g.is_missing(i, j) || g.at(i, j) < 0.9 * best) continue;
            lat_lo = std::min(lat_lo, g.lat_offsets[i]);
            lat_hi = std::max(lat_hi, g.lat_offsets[i]);
            lon_lo = std::min(lon_lo, g.lon_offsets[j]);
            lon_hi = std::max(lon_hi, g.lon_offsets[j]);
        }

    DayEstimate est;
    est.coord = {g.origin.lat + g.lat_offsets[bi], g.origin.lon + g.lon_offsets[bj]};
    est.peak = best;
    est.provenance = g.provenance;
    est.ill_conditioned = (lat_hi - lat_lo > 5.0) || (lon_hi - lon_lo > 5.0);
    return est;
}

// ---- threshold baseline ---------------------------------------------------------------

inline constexpr double kBaselineThetaLo = -1.5;   // log10 lux
inline constexpr double kBaselineThetaHi = 3.5;
inline constexpr double kBaselineThetaStep = 0.05;
inline constexpr double kBaselineMissPenaltyDeg = 180.0;  // no-crossing day in calibration

// Sunset/sunrise from threshold crossings around the longest below-threshold
// run, then the astronomic inversions: night length -> latitude, night
// center -> longitude. The latitude inversion's equinox degeneracy flag is
// passed through.
inline DayEstimate baseline_localize(const MinuteSeries& l, const DateUtc& date,
                                     double threshold, int hemisphere_hint = 1) {
    const auto n = l.v.size();
    if (n < 3) throw coverage_error("baseline: light series too short");

    std::size_t run_a = 0, run_b = 0;  // longest interior run of v < threshold
    bool have_run = false;
    std::size_t k = 0;
    while (k < n) {
        if (l.v[k] < threshold) {
            std::size_t a = k;
            while (k < n && l.v[k] < threshold) ++k;
            const std::size_t b = k - 1;
            if (a > 0 && b + 1 < n && (!have_run || b - a > run_b - run_a)) {
                run_a = a;
                run_b = b;
                have_run = true;
            }
        } else {
            ++k;
        }
    }
    if (!have_run)
        throw coverage_error("baseline: light never crosses the threshold overnight");

    const auto interp_cross = [&](std::size_t lo_idx, std::size_t hi_idx) {
        const double v0 = l.v[lo_idx], v1 = l.v[hi_idx];
        const double frac = (threshold - v0) / (v1 - v0);
        return static_cast<double>(l.time_at(lo_idx)) + frac * kSecPerMin;
    };
    const double t_set = interp_cross(run_a - 1, run_a);
    const double t_rise = interp_cross(run_b, run_b + 1);
    const double length_sec = t_rise - t_set;
    const auto center = static_cast<Instant>(std::llround(0.5 * (t_set + t_rise)));

    const auto lat = latitude_from_night_length(length_sec, date, hemisphere_hint);
    const double lon = longitude_from_night_center(center, date, lat.lat_deg);

    DayEstimate est;
    est.coord = {lat.lat_deg, lon};
    est.peak = 0.0;
    est.provenance = "baseline";
    est.ill_conditioned = lat.ill_conditioned;
    return est;
}

struct BaselineDay {
    MinuteSeries l;
    DateUtc date{};
    GeoCoord truth{};
};

// Grid search over log10-lux thresholds for the smallest mean great-circle
// error; days without a usable crossing pay a fixed penalty so thresholds
// that blind the detector lose.
inline double calibrate_threshold(const std::vector<BaselineDay>& days,
                                  int hemisphere_hint = 1) {
    if (days.empty()) throw input_error("calibrate: no training days");
    const auto steps =
        static_cast<int>(std::llround((kBaselineThetaHi - kBaselineThetaLo) / kBaselineThetaStep));
    // grid nodes in integer hundredths: keeps the endpoints exactly representable
    const long long lo100 = std::llround(kBaselineThetaLo * 100.0);
    const long long step100 = std::llround(kBaselineThetaStep * 100.0);
    double best_theta = kBaselineThetaLo;
    double best_err = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= steps; ++s) {
        const double theta = static_cast<double>(lo100 + s * step100) / 100.0;
        double err = 0.0;
        for (const auto& day : days) {
            try {
                const auto est = baseline_localize(day.l, day.date, theta, hemisphere_hint);
                err += great_circle_deg(est.coord, day.truth);
            } catch (const coverage_error&) {
                err += kBaselineMissPenaltyDeg;
            }
        }
        err /= static_cast<double>(days.size());
        if (err < best_err) {
            best_err = err;
            best_theta = theta;
        }
    }
    return best_theta;
}

// ---- exports ---------------------------------------------------------------------------

inline void write_grid_csv(std::ostream& out, const LikelihoodGrid& g) {
    g.validate();
    out << "lat_offset,lon_offset,value\n";
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
            out << detail::fmt_double(g.lat_offsets[i]) << ','
                << detail::fmt_double(g.lon_offsets[j]) << ',';
            if (g.is_missing(i, j))
                out << "nan";
            else
                out << detail::fmt_double(g.at(i, j));
            out << '\n';
        }
}

// 8-bit binary PGM, north (largest latitude offset) on the top row; values
// scaled to the grid's own [min, max]; missing cells render black.
inline void write_grid_pgm(std::ostream& out, const LikelihoodGrid& g) {
    g.validate();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < g.values.size(); ++k)
        if (!g.missing[k]) {
            lo = std::min(lo, g.values[k]);
            hi = std::max(hi, g.values[k]);
        }
    const bool flat = !(hi > lo);
    out << "P5\n" << g.cols() << " " << g.rows() << "\n255\n";
    for (std::size_t ri = g.rows(); ri-- > 0;) {
        for (std::size_t j = 0; j < g.cols(); ++j) {
            unsigned char byte = 0;
            if (!g.is_missing(ri, j) && !flat)
                byte = static_cast<unsigned char>(
                    std::llround(255.0 * (g.at(ri, j) - lo) / (hi - lo)));
            out.put(static_cast<char>(byte));
        }
    }
}

}  // namespace lumitrack
