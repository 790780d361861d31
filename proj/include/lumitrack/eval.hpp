#pragma once

// Evaluation harness: season-bucketed latitude/longitude MAE for the
// baseline, light-only, and fused locators, likelihood heatmap export, and
// report serialization (CSV + JSON).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lumitrack/dataset.hpp"
#include "lumitrack/localization.hpp"

namespace lumitrack {

struct EvalConfig {
    double half_span_deg = kGridHalfSpanDeg;
    double coarse_step_deg = kGridStepDeg;
    double fine_step_deg = kGridFineStepDeg;
    int day_stride = 1;          // keep every Nth test day (in sorted order) ...
    int equinox_keep_days = 0;   // ... plus all days within N days of Sep 22
    int hemisphere_hint = 1;
    std::uint64_t seed = 0;  // provenance echo; the harness itself draws nothing

    void validate() const {
        if (!(half_span_deg > 0.0) || !(coarse_step_deg > 0.0) || !(fine_step_deg > 0.0))
            throw input_error("eval: grid geometry must be positive");
        if (day_stride < 1) throw input_error("eval: day_stride must be >= 1");
        if (equinox_keep_days < 0) throw input_error("eval: equinox_keep_days negative");
    }
};

struct EvalRow {
    std::string bucket;  // date span, e.g. "2018-09-16..2018-09-30"
    std::string method;  // "baseline" | "light" | "fused"
    double lat_mae = 0.0;
    double lon_mae = 0.0;
    int n_days = 0;
};

struct DroppedDay {
    std::string sensor_id;
    DateUtc date{};
    std::string reason;
};

struct EvalReport {
    EvalConfig config;
    double baseline_theta = 0.0;
    int n_selected = 0;   // test days kept by the subsampling rule
    int n_evaluated = 0;  // days every method localized; rest are in `dropped`
    std::vector<EvalRow> rows;        // bucket-major, methods in fixed order
    std::vector<DroppedDay> dropped;  // enumerated, never silent
};

inline constexpr std::array<const char*, 3> kEvalMethods{"baseline", "light", "fused"};

namespace eval_detail {

// half-month bucket: day 1-15 then 16-end
struct BucketKey {
    int year = 0, month = 0, half = 0;
    friend auto operator<=>(const BucketKey&, const BucketKey&) = default;
};

inline BucketKey bucket_of(const DateUtc& d) {
    return {d.year, d.month, d.day <= 15 ? 0 : 1};
}

// nominal bucket span clipped to the evaluated date range
inline std::string bucket_label(const BucketKey& k, const DateUtc& range_lo,
                                const DateUtc& range_hi) {
    DateUtc lo{k.year, k.month, k.half == 0 ? 1 : 16};
    const DateUtc next_month = k.month == 12 ? DateUtc{k.year + 1, 1, 1}
                                             : DateUtc{k.year, k.month + 1, 1};
    DateUtc hi = k.half == 0 ? DateUtc{k.year, k.month, 15} : add_days(next_month, -1);
    if (civil_days(lo) < civil_days(range_lo)) lo = range_lo;
    if (civil_days(hi) > civil_days(range_hi)) hi = range_hi;
    return format_date(lo) + ".." + format_date(hi);
}

// deterministic subsample: sort by (sensor, date), keep every Nth plus the
// equinox neighborhood
inline std::vector<ManifestRow> select_days(std::vector<ManifestRow> days,
                                            const EvalConfig& cfg) {
    std::sort(days.begin(), days.end(), [](const ManifestRow& a, const ManifestRow& b) {
        if (a.sensor_id != b.sensor_id) return a.sensor_id < b.sensor_id;
        return civil_days(a.date) < civil_days(b.date);
    });
    const std::int64_t equinox = civil_days({days.front().date.year, 9, 22});
    std::vector<ManifestRow> kept;
    for (std::size_t i = 0; i < days.size(); ++i) {
        const bool on_stride = i % static_cast<std::size_t>(cfg.day_stride) == 0;
        const bool near_equinox =
            std::llabs(civil_days(days[i].date) - equinox) <= cfg.equinox_keep_days;
        if (on_stride || near_equinox) kept.push_back(days[i]);
    }
    return kept;
}

inline bool usable(const LikelihoodGrid& g) {
    for (std::size_t k = 0; k < g.values.size(); ++k)
        if (!g.missing[k] && g.values[k] > 0.0) return true;
    return false;
}

struct MethodAccum {
    double lat_abs = 0.0;
    double lon_abs = 0.0;
    int n = 0;
};

template <std::size_t M>
inline std::vector<EvalRow> finalize_rows(
    const std::map<BucketKey, std::array<MethodAccum, M>>& acc,
    const std::array<const char*, M>& methods, const DateUtc& range_lo,
    const DateUtc& range_hi) {
    std::vector<EvalRow> rows;
    for (const auto& [key, per_method] : acc) {
        const std::string label = bucket_label(key, range_lo, range_hi);
        for (std::size_t m = 0; m < M; ++m) {
            const auto& a = per_method[m];
            if (a.n == 0) continue;
            rows.push_back({label, methods[m], a.lat_abs / a.n, a.lon_abs / a.n, a.n});
        }
    }
    return rows;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out += '\\';
            out += c;
        } else if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\u%04x", c);
            out += buf;
        } else {
            out += c;
        }
    }
    return out;
}

}  // namespace eval_detail

// Localizes every selected test day with all three methods on grids centered
// at the day's true coordinate, and aggregates |error| per half-month bucket.
// The baseline threshold is calibrated on the training days first. A day any
// method cannot localize for coverage reasons is dropped from all methods and
// enumerated in the report.
inline EvalReport run_eval(const std::vector<ManifestRow>& train_days,
                           const std::vector<ManifestRow>& test_days,
                           const DayProvider& provider, const WeatherStore& store,
                           const Discriminator& light, const Discriminator& temp,
                           const EvalConfig& cfg = {}, std::ostream* warn = &std::cerr) {
    cfg.validate();
    if (!light.trained() || !temp.trained()) throw input_error("eval: model not trained");
    if (train_days.empty()) throw input_error("eval: no training days");
    if (test_days.empty()) throw input_error("eval: no test days");
    std::set<std::string> train_sensors;
    for (const auto& row : train_days) train_sensors.insert(row.sensor_id);
    for (const auto& row : test_days)
        if (train_sensors.count(row.sensor_id))
            throw input_error("eval: sensor '" + row.sensor_id +
                              "' appears in both train and test sets");

    EvalReport report;
    report.config = cfg;

    // baseline calibration on the training days
    std::vector<BaselineDay> cal;
    for (const auto& row : eval_detail::select_days(train_days, EvalConfig{})) {
        try {
            cal.push_back({preprocess_light(provider(row).light), row.date, row.truth});
        } catch (const coverage_error& e) {
            if (warn)
                *warn << "warning: calibration skips " << row.sensor_id << " "
                      << format_date(row.date) << ": " << e.what() << "\n";
        }
    }
    if (cal.empty()) throw coverage_error("eval: no usable calibration days");
    report.baseline_theta = calibrate_threshold(cal, cfg.hemisphere_hint);

    const auto selected = eval_detail::select_days(test_days, cfg);
    report.n_selected = static_cast<int>(selected.size());
    DateUtc range_lo = selected.front().date, range_hi = selected.front().date;
    for (const auto& row : selected) {
        if (civil_days(row.date) < civil_days(range_lo)) range_lo = row.date;
        if (civil_days(row.date) > civil_days(range_hi)) range_hi = row.date;
    }

    std::map<eval_detail::BucketKey, std::array<eval_detail::MethodAccum, 3>> acc;
    const auto drop = [&](const ManifestRow& row, const std::string& reason) {
        report.dropped.push_back({row.sensor_id, row.date, reason});
        if (warn)
            *warn << "warning: dropping " << row.sensor_id << " " << format_date(row.date)
                  << ": " << reason << "\n";
    };
    for (const auto& row : selected) {
        try {
            const auto log = provider(row);
            const auto l = preprocess_light(log.light);
            const auto lg = evaluate_light_grid(light, l, row.date, row.truth,
                                                cfg.half_span_deg, cfg.coarse_step_deg);
            const auto tg = evaluate_temp_grid(temp, log, store, row.date, row.truth,
                                               cfg.half_span_deg, cfg.coarse_step_deg);
            if (!eval_detail::usable(lg)) {
                drop(row, "light grid has no usable cells");
                continue;
            }
            if (!eval_detail::usable(tg)) {
                drop(row, "temperature grid has no usable cells");
                continue;
            }
            const auto lf = interpolate_grid(lg, cfg.fine_step_deg);
            const auto tf = interpolate_grid(tg, cfg.fine_step_deg);
            const auto ff = fuse(lf, tf);
            if (ff.degenerate) {
                drop(row, "fused grid is degenerate");
                continue;
            }
            const std::array<DayEstimate, 3> ests{
                baseline_localize(l, row.date, report.baseline_theta, cfg.hemisphere_hint),
                estimate_day(lf), estimate_day(ff)};
            auto& slot = acc[eval_detail::bucket_of(row.date)];
            for (std::size_t m = 0; m < 3; ++m) {
                slot[m].lat_abs += std::fabs(ests[m].coord.lat - row.truth.lat);
                slot[m].lon_abs += std::fabs(ests[m].coord.lon - row.truth.lon);
                slot[m].n += 1;
            }
            ++report.n_evaluated;
        } catch (const coverage_error& e) {
            drop(row, e.what());
        }
    }
    report.rows = eval_detail::finalize_rows(acc, kEvalMethods, range_lo, range_hi);
    return report;
}

// Harness self-test: a fake locator that returns the truth exercises the
// selection, bucketing, and accounting paths without trained models; every
// bucket must come out at exactly zero error.
inline EvalReport run_eval_oracle(const std::vector<ManifestRow>& test_days,
                                  const EvalConfig& cfg = {}) {
    cfg.validate();
    if (test_days.empty()) throw input_error("eval: no test days");
    EvalReport report;
    report.config = cfg;
    const auto selected = eval_detail::select_days(test_days, cfg);
    report.n_selected = static_cast<int>(selected.size());
    report.n_evaluated = report.n_selected;
    DateUtc range_lo = selected.front().date, range_hi = selected.front().date;
    for (const auto& row : selected) {
        if (civil_days(row.date) < civil_days(range_lo)) range_lo = row.date;
        if (civil_days(row.date) > civil_days(range_hi)) range_hi = row.date;
    }
    std::map<eval_detail::BucketKey, std::array<eval_detail::MethodAccum, 1>> acc;
    for (const auto& row : selected) acc[eval_detail::bucket_of(row.date)][0].n += 1;
    report.rows = eval_detail::finalize_rows(acc, std::array<const char*, 1>{"oracle"},
                                             range_lo, range_hi);
    return report;
}

// ---- heatmap export --------------------------------------------------------------

struct HeatmapPaths {
    std::vector<std::filesystem::path> files;  // light/temp/fused x pgm/csv
    DayEstimate fused_estimate;
};

// Three rasters (light, temp, fused likelihood) for one sensor-day, truth at
// the grid center, each as value-scaled PGM plus CSV.
inline HeatmapPaths export_heatmaps(const Discriminator& light, const Discriminator& temp,
                                    const SensorLog& log, const WeatherStore& store,
                                    const ManifestRow& row,
                                    const std::filesystem::path& out_dir,
                                    const EvalConfig& cfg = {}) {
    cfg.validate();
    if (!light.trained() || !temp.trained()) throw input_error("heatmaps: model not trained");
    const auto l = preprocess_light(log.light);
    const auto lg = evaluate_light_grid(light, l, row.date, row.truth, cfg.half_span_deg,
                                        cfg.coarse_step_deg);
    if (!eval_detail::usable(lg))
        throw coverage_error("heatmaps: light grid has no usable cells");
    const auto tg = evaluate_temp_grid(temp, log, store, row.date, row.truth,
                                       cfg.half_span_deg, cfg.coarse_step_deg);
    if (!eval_detail::usable(tg))
        throw coverage_error("heatmaps: temperature grid has no usable cells");
    const auto lf = interpolate_grid(lg, cfg.fine_step_deg);
    const auto tf = interpolate_grid(tg, cfg.fine_step_deg);
    const auto ff = fuse(lf, tf);

    HeatmapPaths out;
    const std::string stem = row.sensor_id + "_" + format_date(row.date);
    const std::array<std::pair<const char*, const LikelihoodGrid*>, 3> maps{
        {{"light", &lf}, {"temp", &tf}, {"fused", &ff}}};
    for (const auto& [name, grid] : maps) {
        const auto pgm = out_dir / (stem + "_" + name + ".pgm");
        write_stream_atomic(pgm, [&](std::ostream& os) { write_grid_pgm(os, *grid); });
        out.files.push_back(pgm);
        const auto csv = out_dir / (stem + "_" + name + ".csv");
        write_stream_atomic(csv, [&](std::ostream& os) { write_grid_csv(os, *grid); });
        out.files.push_back(csv);
    }
    out.fused_estimate = estimate_day(ff);
    return out;
}

// ---- report serialization ---------------------------------------------------------

inline void write_eval_csv(std::ostream& out, const EvalReport& r) {
    out << "bucket,method,lat_mae_deg,lon_mae_deg,n_days\n";
    for (const auto& row : r.rows)
        out << row.bucket << ',' << row.method << ',' << detail::fmt_double(row.lat_mae)
            << ',' << detail::fmt_double(row.lon_mae) << ',' << row.n_days << '\n';
}

inline void write_eval_json(std::ostream& out, const EvalReport& r) {
    const auto& c = r.config;
    out << "{\n";
    out << "  \"config\": {\"seed\": " << c.seed << ", \"half_span_deg\": "
        << detail::fmt_double(c.half_span_deg) << ", \"coarse_step_deg\": "
        << detail::fmt_double(c.coarse_step_deg) << ", \"fine_step_deg\": "
        << detail::fmt_double(c.fine_step_deg) << ", \"day_stride\": " << c.day_stride
        << ", \"equinox_keep_days\": " << c.equinox_keep_days
        << ", \"hemisphere_hint\": " << c.hemisphere_hint << "},\n";
    out << "  \"baseline_theta\": " << detail::fmt_double(r.baseline_theta) << ",\n";
    out << "  \"n_selected\": " << r.n_selected << ",\n";
    out << "  \"n_evaluated\": " << r.n_evaluated << ",\n";
    out << "  \"rows\": [";
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        out << (i ? ",\n    " : "\n    ") << "{\"bucket\": \"" << row.bucket
            << "\", \"method\": \"" << row.method << "\", \"lat_mae_deg\": "
            << detail::fmt_double(row.lat_mae) << ", \"lon_mae_deg\": "
            << detail::fmt_double(row.lon_mae) << ", \"n_days\": " << row.n_days << "}";
    }
    out << (r.rows.empty() ? "]" : "\n  ]") << ",\n";
    out << "  \"dropped\": [";
    for (std::size_t i = 0; i < r.dropped.size(); ++i) {
        const auto& d = r.dropped[i];
        out << (i ? ",\n    " : "\n    ") << "{\"sensor\": \""
            << eval_detail::json_escape(d.sensor_id) << "\", \"date\": \""
            << format_date(d.date) << "\", \"reason\": \""
            << eval_detail::json_escape(d.reason) << "\"}";
    }
    out << (r.dropped.empty() ? "]" : "\n  ]") << "\n";
    out << "}\n";
}

inline void save_eval_report(const EvalReport& r, const std::filesystem::path& csv_path,
                             const std::filesystem::path& json_path) {
    write_stream_atomic(csv_path, [&](std::ostream& os) { write_eval_csv(os, r); });
    write_stream_atomic(json_path, [&](std::ostream& os) { write_eval_json(os, r); });
}

}  // namespace lumitrack
