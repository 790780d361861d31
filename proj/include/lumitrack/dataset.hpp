#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lumitrack/common.hpp"
#include "lumitrack/reshape.hpp"
#include "lumitrack/sensor_io.hpp"

namespace lumitrack {

// supplies one sensor-day's raw log (light and temperature) covering the
// night window with enough slack for perturbed/offset windows
using DayProvider = std::function<SensorLog(const ManifestRow&)>;

// ---- train/test split -----------------------------------------------------------

// Split by sensor id so no sensor contributes to both sides.
inline std::pair<std::vector<ManifestRow>, std::vector<ManifestRow>> split_train_test(
    const std::vector<ManifestRow>& manifest, double ratio, std::uint64_t seed) {
    if (manifest.empty()) throw input_error("split: empty manifest");
    if (!(ratio > 0.0) || !(ratio < 1.0))
        throw input_error("split: ratio must lie strictly between 0 and 1");

    std::map<std::string, std::vector<ManifestRow>> by_sensor;
    for (const auto& row : manifest) by_sensor[row.sensor_id].push_back(row);
    if (by_sensor.size() < 2) throw input_error("split: need at least two sensors");

    std::vector<std::string> ids;
    ids.reserve(by_sensor.size());
    for (const auto& [id, rows] : by_sensor) ids.push_back(id);
    Rng rng(derive_seed(seed, "split"));
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    // greedy fill of the train side in shuffled sensor order: lands within one
    // sensor of the requested row count
    const auto target =
        static_cast<std::size_t>(ratio * static_cast<double>(manifest.size()) + 0.5);
    std::pair<std::vector<ManifestRow>, std::vector<ManifestRow>> out;
    std::size_t train_n = 0;
    for (const auto& id : ids) {
        auto& rows = by_sensor[id];
        auto& side = train_n < target ? out.first : out.second;
        if (&side == &out.first) train_n += rows.size();
        side.insert(side.end(), rows.begin(), rows.end());
    }
    if (out.first.empty() || out.second.empty())
        throw input_error("split: one side would be empty at this ratio");
    return out;
}

// ---- light examples ----------------------------------------------------------------

struct LightProv {
    std::string sensor_id;
    DateUtc date{};
    double dcenter_min = 0.0;
    double dlength_min = 0.0;
};

struct LightSet {
    std::vector<double> X;  // n rows of kCurveLen
    std::vector<int> y;
    std::vector<LightProv> prov;

    std::size_t n() const { return y.size(); }
};

inline constexpr int kLightNegPerDay = 24;
inline constexpr double kOffsetMinLo = 2.0;
inline constexpr double kOffsetMinHi = 120.0;

// Per day: one matched curve at the true window, k curves with the night
// center and length each shifted by an independent |dt| in [2, 120] min.
inline LightSet build_light_training_set(const std::vector<ManifestRow>& days,
                                         const DayProvider& provider, std::uint64_t seed,
                                         int k_unmatched = kLightNegPerDay,
                                         double off_lo = kOffsetMinLo,
                                         double off_hi = kOffsetMinHi,
                                         std::ostream* warn = &std::cerr) {
    if (k_unmatched < 0 || off_lo < 0.0 || off_hi < off_lo)
        throw input_error("light set: bad offset configuration");
    LightSet set;
    set.X.reserve(days.size() * static_cast<std::size_t>(1 + k_unmatched) * kCurveLen);
    for (const auto& day : days) {
        Rng rng(derive_seed(seed, "light:" + day.sensor_id + ":" + format_date(day.date)));
        try {
            const auto log = provider(day);
            const auto l = preprocess_light(log.light);
            const auto w = night_window(day.truth, day.date);
            if (!w) throw coverage_error("no night window at truth");

            std::vector<double> rows;
            std::vector<LightProv> provs;
            auto push = [&](Instant center, double length, double dc, double dl) {
                const auto curve = reshape_window(l, center, length);
                rows.insert(rows.end(), curve.values.begin(), curve.values.end());
                provs.push_back({day.sensor_id, day.date, dc, dl});
            };
            push(w->center, w->length_sec, 0.0, 0.0);
            for (int k = 0; k < k_unmatched; ++k) {
                const double dc = rng.uniform(off_lo, off_hi) * (rng.uniform() < 0.5 ? -1 : 1);
                const double dl = rng.uniform(off_lo, off_hi) * (rng.uniform() < 0.5 ? -1 : 1);
                push(w->center + std::llround(dc * kSecPerMin),
                     w->length_sec + dl * kSecPerMin, dc, dl);
            }

            set.X.insert(set.X.end(), rows.begin(), rows.end());
            set.y.push_back(1);
            for (int k = 0; k < k_unmatched; ++k) set.y.push_back(0);
            set.prov.insert(set.prov.end(), provs.begin(), provs.end());
        } catch (const coverage_error& e) {
            if (warn)
                *warn << "warning: skipping " << day.sensor_id << " " << format_date(day.date)
                      << ": " << e.what() << "\n";
        }
    }
    return set;
}

// ---- temperature examples ------------------------------------------------------------

struct TempProv {
    std::string sensor_id;
    DateUtc date{};
    std::string station_id;
    double off_lat = 0.0;
    double off_lon = 0.0;
};

struct TempSet {
    std::vector<double> X;  // n rows of 2*kTempLen (sensor part then station part)
    std::vector<int> y;
    std::vector<TempProv> prov;

    std::size_t n() const { return y.size(); }
};

inline constexpr int kTempNegPerDay = 15;
inline constexpr double kTempOffsetBoxDeg = 20.0;
inline constexpr double kTempVicinityDeg = 1.5;

// Per day: one matched pair against the station nearest the truth, then up to
// k candidates uniform in the +-20 deg box; a candidate keeps its example only
// if some station lies within the vicinity radius and is not the matched one.
inline TempSet build_temp_training_set(const std::vector<ManifestRow>& days,
                                       const WeatherStore& store, const DayProvider& provider,
                                       std::uint64_t seed, int k_unmatched = kTempNegPerDay,
                                       double box_deg = kTempOffsetBoxDeg,
                                       double vicinity_deg = kTempVicinityDeg,
                                       std::ostream* warn = &std::cerr) {
    if (k_unmatched < 0 || box_deg <= 0.0 || vicinity_deg <= 0.0)
        throw input_error("temp set: bad offset configuration");
    TempSet set;
    for (const auto& day : days) {
        Rng rng(derive_seed(seed, "temp:" + day.sensor_id + ":" + format_date(day.date)));
        try {
            const auto log = provider(day);
            const auto matched = make_temp_pair(log, store, day.truth, day.date);

            std::vector<double> rows;
            std::vector<TempProv> provs;
            std::vector<int> labels;
            auto push = [&](const TempPairVector& pair, int label, double dlat, double dlon) {
                rows.insert(rows.end(), pair.sensor_part.begin(), pair.sensor_part.end());
                rows.insert(rows.end(), pair.station_part.begin(), pair.station_part.end());
                labels.push_back(label);
                provs.push_back({day.sensor_id, day.date, pair.station_id, dlat, dlon});
            };
            push(matched, 1, 0.0, 0.0);

            for (int k = 0; k < k_unmatched; ++k) {
                const double dlat = rng.uniform(-box_deg, box_deg);
                const double dlon = rng.uniform(-box_deg, box_deg);
                const GeoCoord cand{day.truth.lat + dlat, day.truth.lon + dlon};
                if (!valid_coord(cand)) continue;
                const auto& near = store.stations()[store.nearest_index(cand)];
                if (great_circle_deg(cand, near.location) > vicinity_deg) continue;  // outlier
                if (near.station_id == matched.station_id) continue;  // label collision
                try {
                    push(make_temp_pair(log, store, cand, day.date), 0, dlat, dlon);
                } catch (const coverage_error&) {
                    continue;  // candidate without a usable window: same as a discard
                }
            }

            set.X.insert(set.X.end(), rows.begin(), rows.end());
            set.y.insert(set.y.end(), labels.begin(), labels.end());
            set.prov.insert(set.prov.end(), provs.begin(), provs.end());
        } catch (const coverage_error& e) {
            if (warn)
                *warn << "warning: skipping " << day.sensor_id << " " << format_date(day.date)
                      << ": " << e.what() << "\n";
        } catch (const input_error& e) {
            if (warn)
                *warn << "warning: skipping " << day.sensor_id << " " << format_date(day.date)
                      << ": " << e.what() << "\n";
        }
    }
    return set;
}

// ---- binary record file + JSON sidecar -------------------------------------------------

inline constexpr unsigned char kDsMagic[16] = {'L', 'U', 'M', 'I', 'T', 'R', 'A', 'C',
                                               'K', '-', 'D', 'S', 0,   0,   0,   1};

namespace ds_detail {

template <typename T>
void put(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw input_error("dataset file truncated");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

}  // namespace ds_detail

struct RecordSet {
    std::size_t dim = 0;
    std::vector<double> X;
    std::vector<int> y;

    std::size_t n() const { return y.size(); }
};

inline void write_records(std::ostream& out, std::size_t dim, const std::vector<double>& X,
                          const std::vector<int>& y) {
    if (dim == 0 || X.size() != dim * y.size())
        throw input_error("write_records: inconsistent record matrix");
    out.write(reinterpret_cast<const char*>(kDsMagic), sizeof(kDsMagic));
    ds_detail::put<std::uint64_t>(out, y.size());
    ds_detail::put<std::uint64_t>(out, dim);
    for (double v : X) ds_detail::put<double>(out, v);
    for (int label : y) ds_detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(label));
}

inline RecordSet read_records(std::istream& in) {
    unsigned char magic[sizeof(kDsMagic)];
    in.read(reinterpret_cast<char*>(magic), sizeof(magic));
    if (!in || std::memcmp(magic, kDsMagic, sizeof(magic)) != 0)
        throw input_error("not a dataset file (bad magic)");
    RecordSet set;
    const auto n = ds_detail::get<std::uint64_t>(in);
    set.dim = ds_detail::get<std::uint64_t>(in);
    if (set.dim == 0 || set.dim > (1u << 20) || n > (1u << 26))
        throw input_error("dataset file corrupt: absurd dimensions");
    set.X.resize(n * set.dim);
    for (auto& v : set.X) v = ds_detail::get<double>(in);
    set.y.resize(n);
    for (auto& label : set.y) {
        const auto b = ds_detail::get<std::uint8_t>(in);
        if (b > 1) throw input_error("dataset file corrupt: label outside {0,1}");
        label = b;
    }
    return set;
}

inline void write_light_dataset(const std::filesystem::path& path, const LightSet& set) {
    write_stream_atomic(path,
                        [&](std::ostream& out) { write_records(out, kCurveLen, set.X, set.y); });
    write_stream_atomic(path.string() + ".json", [&](std::ostream& out) {
        out << "[\n";
        for (std::size_t i = 0; i < set.n(); ++i) {
            const auto& p = set.prov[i];
            out << "  {\"sensor\":\"" << ds_detail::json_escape(p.sensor_id) << "\",\"date\":\""
                << format_date(p.date) << "\",\"label\":" << set.y[i] << ",\"dcenter_min\":"
                << detail::fmt_double(p.dcenter_min) << ",\"dlength_min\":"
                << detail::fmt_double(p.dlength_min) << "}" << (i + 1 < set.n() ? "," : "")
                << "\n";
        }
        out << "]\n";
    });
}

// Pulls the per-record sensor ids back out of a provenance sidecar; the file
// is machine-written with one record per line, so a field scan suffices.
inline std::vector<std::string> read_provenance_sensors(std::istream& in) {
    static constexpr std::string_view key = "\"sensor\":\"";
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto at = line.find(key);
        if (at == std::string::npos) continue;
        std::string id;
        for (std::size_t i = at + key.size(); i < line.size(); ++i) {
            if (line[i] == '\\' && i + 1 < line.size()) {
                id.push_back(line[++i]);
            } else if (line[i] == '"') {
                break;
            } else {
                id.push_back(line[i]);
            }
        }
        out.push_back(std::move(id));
    }
    return out;
}

inline void write_temp_dataset(const std::filesystem::path& path, const TempSet& set) {
    write_stream_atomic(path, [&](std::ostream& out) {
        write_records(out, 2 * kTempLen, set.X, set.y);
    });
    write_stream_atomic(path.string() + ".json", [&](std::ostream& out) {
        out << "[\n";
        for (std::size_t i = 0; i < set.n(); ++i) {
            const auto& p = set.prov[i];
            out << "  {\"sensor\":\"" << ds_detail::json_escape(p.sensor_id) << "\",\"date\":\""
                << format_date(p.date) << "\",\"station\":\""
                << ds_detail::json_escape(p.station_id) << "\",\"label\":" << set.y[i]
                << ",\"off_lat\":" << detail::fmt_double(p.off_lat) << ",\"off_lon\":"
                << detail::fmt_double(p.off_lon) << "}" << (i + 1 < set.n() ? "," : "") << "\n";
        }
        out << "]\n";
    });
}

}  // namespace lumitrack
