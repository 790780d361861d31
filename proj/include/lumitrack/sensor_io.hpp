#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lumitrack/astro.hpp"
#include "lumitrack/common.hpp"
#include "lumitrack/geo.hpp"
#include "lumitrack/timeutil.hpp"

namespace lumitrack {

struct Sample {
    Instant t = 0;
    double v = 0.0;
};

struct Region {
    double lat_lo = 0, lat_hi = 0, lon_lo = 0, lon_hi = 0;

    bool valid() const {
        return lat_lo < lat_hi && lon_lo < lon_hi && lat_lo >= -90 && lat_hi <= 90 &&
               lon_lo >= -180 && lon_hi <= 180;
    }
    bool contains(const GeoCoord& c) const {
        return c.lat >= lat_lo && c.lat <= lat_hi && c.lon >= lon_lo && c.lon <= lon_hi;
    }
};

struct DateRange {
    DateUtc first{};
    int n_days = 0;  // nights first .. first+n_days-1
};

struct SensorLog {
    std::string id;
    std::vector<Sample> light;  // lux
    std::vector<Sample> temp;   // deg C
    std::optional<GeoCoord> truth;
};

// ---- formatting helpers ----------------------------------------------------

namespace detail {

// shortest round-trip decimal
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char cand[32];
            std::snprintf(cand, sizeof(cand), "%.*g", prec, v);
            std::sscanf(cand, "%lf", &back);
            if (back == v) return cand;
        }
    }
    return buf;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view strip_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    char buf[64];
    if (s.size() >= sizeof(buf)) return std::nullopt;
    std::memcpy(buf, s.data(), s.size());
    buf[s.size()] = '\0';
    char* end = nullptr;
    const double v = std::strtod(buf, &end);
    if (end != buf + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

[[noreturn]] inline void parse_fail(std::string_view what, std::size_t line_no) {
    throw input_error(std::string(what) + " at line " + std::to_string(line_no));
}

}  // namespace detail

// ---- sensor log CSV: timestamp_utc,light_lux,temp_c ------------------------

inline SensorLog parse_sensor_log(std::istream& in, std::string id = {}) {
    SensorLog log;
    log.id = std::move(id);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw input_error("empty sensor log");
    ++line_no;
    if (detail::strip_cr(line) != "timestamp_utc,light_lux,temp_c")
        detail::parse_fail("malformed sensor log header", line_no);
    while (std::getline(in, line)) {
        ++line_no;
        const auto stripped = detail::strip_cr(line);
        if (stripped.empty()) continue;
        const auto cells = detail::split_csv(stripped);
        if (cells.size() != 3) detail::parse_fail("expected 3 cells", line_no);
        const auto t = parse_rfc3339(cells[0]);
        if (!t) detail::parse_fail("bad timestamp", line_no);
        const bool has_light = !cells[1].empty(), has_temp = !cells[2].empty();
        if (!has_light && !has_temp) detail::parse_fail("row carries no measurement", line_no);
        if (has_light) {
            const auto lux = detail::parse_double(cells[1]);
            if (!lux) detail::parse_fail("bad light value", line_no);
            if (*lux < 0) detail::parse_fail("negative lux", line_no);
            if (!log.light.empty() && *t <= log.light.back().t)
                detail::parse_fail("non-monotone light timestamps", line_no);
            log.light.push_back({*t, *lux});
        }
        if (has_temp) {
            const auto tc = detail::parse_double(cells[2]);
            if (!tc) detail::parse_fail("bad temperature value", line_no);
            if (!log.temp.empty() && *t <= log.temp.back().t)
                detail::parse_fail("non-monotone temperature timestamps", line_no);
            log.temp.push_back({*t, *tc});
        }
    }
    if (log.light.empty() && log.temp.empty()) throw input_error("sensor log has no samples");
    return log;
}

inline void write_sensor_log(std::ostream& out, const SensorLog& log) {
    out << "timestamp_utc,light_lux,temp_c\n";
    // merge the two series on timestamps so shared instants share a row
    std::size_t i = 0, j = 0;
    while (i < log.light.size() || j < log.temp.size()) {
        const bool take_light =
            j >= log.temp.size() ||
            (i < log.light.size() && log.light[i].t <= log.temp[j].t);
        const bool take_temp =
            i >= log.light.size() ||
            (j < log.temp.size() && log.temp[j].t <= log.light[i].t);
        const Instant t = take_light ? log.light[i].t : log.temp[j].t;
        out << format_rfc3339(t) << ',';
        if (take_light) out << detail::fmt_double(log.light[i++].v);
        out << ',';
        if (take_temp) out << detail::fmt_double(log.temp[j++].v);
        out << '\n';
    }
}

// ---- weather store ----------------------------------------------------------

struct WeatherStationSeries {
    std::string station_id;
    GeoCoord location;
    std::vector<Sample> temps;  // hour-aligned instants, strictly increasing
};

inline void validate_station_series(const WeatherStationSeries& s) {
    if (s.station_id.empty()) throw input_error("station with empty id");
    require_coord(s.location);
    if (s.temps.empty()) throw input_error("station series empty: " + s.station_id);
    for (std::size_t i = 0; i < s.temps.size(); ++i) {
        if (s.temps[i].t % kSecPerHour != 0)
            throw input_error("station sample not hour-aligned: " + s.station_id);
        if (i > 0 && s.temps[i].t <= s.temps[i - 1].t)
            throw input_error("station series not increasing: " + s.station_id);
        if (!std::isfinite(s.temps[i].v))
            throw input_error("non-finite station temperature: " + s.station_id);
    }
}

class WeatherStore {
public:
    // merge semantics: duplicate (station, hour) entries keep the first seen
    void add(WeatherStationSeries series) {
        const auto it = by_id_.find(series.station_id);
        if (it == by_id_.end()) {
            validate_station_series(series);
            by_id_.emplace(series.station_id, stations_.size());
            push_unit_vector(series.location);
            stations_.push_back(std::move(series));
            return;
        }
        auto& dst = stations_[it->second];
        std::vector<Sample> merged;
        merged.reserve(dst.temps.size() + series.temps.size());
        std::size_t i = 0, j = 0;
        while (i < dst.temps.size() || j < series.temps.size()) {
            if (j >= series.temps.size() ||
                (i < dst.temps.size() && dst.temps[i].t <= series.temps[j].t)) {
                if (j < series.temps.size() && series.temps[j].t == dst.temps[i].t) ++j;
                merged.push_back(dst.temps[i++]);
            } else {
                merged.push_back(series.temps[j++]);
            }
        }
        dst.temps = std::move(merged);
        validate_station_series(dst);
    }

    bool empty() const { return stations_.empty(); }
    std::size_t size() const { return stations_.size(); }
    const std::vector<WeatherStationSeries>& stations() const { return stations_; }

    const WeatherStationSeries& at(std::string_view id) const {
        const auto it = by_id_.find(std::string(id));
        if (it == by_id_.end()) throw input_error("unknown station: " + std::string(id));
        return stations_[it->second];
    }

    // nearest by great circle; ties broken toward the smallest station_id
    std::size_t nearest_index(const GeoCoord& c) const {
        if (stations_.empty()) throw input_error("nearest_station on empty store");
        const double clat = deg2rad(c.lat), clon = deg2rad(c.lon);
        const double x = std::cos(clat) * std::cos(clon);
        const double y = std::cos(clat) * std::sin(clon);
        const double z = std::sin(clat);
        // larger chord dot product == smaller great-circle distance
        double best = -2.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < stations_.size(); ++i) {
            const double dot = x * ux_[i] + y * uy_[i] + z * uz_[i];
            if (dot > best ||
                (dot == best && stations_[i].station_id < stations_[best_i].station_id)) {
                best = dot;
                best_i = i;
            }
        }
        return best_i;
    }

    const std::string& nearest_station(const GeoCoord& c) const {
        return stations_[nearest_index(c)].station_id;
    }

private:
    void push_unit_vector(const GeoCoord& c) {
        const double lat = deg2rad(c.lat), lon = deg2rad(c.lon);
        ux_.push_back(std::cos(lat) * std::cos(lon));
        uy_.push_back(std::cos(lat) * std::sin(lon));
        uz_.push_back(std::sin(lat));
    }

    std::vector<WeatherStationSeries> stations_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::vector<double> ux_, uy_, uz_;
};

// linear interpolation within a sorted series; bracket wider than max_gap or
// a target outside the series is a coverage failure
inline double interp_series(const std::vector<Sample>& s, Instant t, Instant max_gap) {
    const auto it = std::lower_bound(
        s.begin(), s.end(), t, [](const Sample& a, Instant w) { return a.t < w; });
    if (it != s.end() && it->t == t) return it->v;
    if (it == s.begin() || it == s.end())
        throw coverage_error("requested instant outside stored span");
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (hi.t - lo.t > max_gap)
        throw coverage_error("data gap of " + std::to_string((hi.t - lo.t) / 60) +
                             " min exceeds limit");
    const double w = double(t - lo.t) / double(hi.t - lo.t);
    return lo.v + w * (hi.v - lo.v);
}

// 2*half_span/1h + 1 hourly station samples centred on the night center
inline std::vector<double> station_night_series(const WeatherStore& store,
                                                std::string_view station_id,
                                                const NightWindow& window,
                                                Instant half_span = 8 * kSecPerHour) {
    const auto& st = store.at(station_id);
    const int n = static_cast<int>(half_span / kSecPerHour);
    std::vector<double> out;
    out.reserve(2 * n + 1);
    for (int k = -n; k <= n; ++k)
        out.push_back(interp_series(st.temps, window.center + k * kSecPerHour,
                                    2 * kSecPerHour));
    return out;
}

// ---- weather CSV: station_id,lat,lon,timestamp_utc,temp_c ------------------

inline std::vector<WeatherStationSeries> parse_weather_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw input_error("empty weather file");
    ++line_no;
    if (detail::strip_cr(line) != "station_id,lat,lon,timestamp_utc,temp_c")
        detail::parse_fail("malformed weather header", line_no);
    std::vector<WeatherStationSeries> out;
    std::unordered_map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        ++line_no;
        const auto stripped = detail::strip_cr(line);
        if (stripped.empty()) continue;
        const auto cells = detail::split_csv(stripped);
        if (cells.size() != 5) detail::parse_fail("expected 5 cells", line_no);
        const auto lat = detail::parse_double(cells[1]);
        const auto lon = detail::parse_double(cells[2]);
        const auto t = parse_rfc3339(cells[3]);
        const auto temp = detail::parse_double(cells[4]);
        if (!lat || !lon) detail::parse_fail("bad station coordinate", line_no);
        if (!t) detail::parse_fail("bad timestamp", line_no);
        if (!temp) detail::parse_fail("bad temperature", line_no);
        const std::string id(cells[0]);
        auto [it, fresh] = index.emplace(id, out.size());
        if (fresh) out.push_back({id, {*lat, *lon}, {}});
        auto& st = out[it->second];
        if (st.location.lat != *lat || st.location.lon != *lon)
            detail::parse_fail("station moved between rows", line_no);
        st.temps.push_back({*t, *temp});
    }
    for (auto& st : out) {
        std::sort(st.temps.begin(), st.temps.end(),
                  [](const Sample& a, const Sample& b) { return a.t < b.t; });
        // duplicate hours: keep the first occurrence within file order is not
        // recoverable after sort, so keep the first of each equal-instant run
        st.temps.erase(std::unique(st.temps.begin(), st.temps.end(),
                                   [](const Sample& a, const Sample& b) {
                                       return a.t == b.t;
                                   }),
                       st.temps.end());
        validate_station_series(st);
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.station_id < b.station_id; });
    return out;
}

inline void write_weather_csv(std::ostream& out,
                              const std::vector<WeatherStationSeries>& stations) {
    out << "station_id,lat,lon,timestamp_utc,temp_c\n";
    for (const auto& st : stations)
        for (const auto& s : st.temps)
            out << st.station_id << ',' << detail::fmt_double(st.location.lat) << ','
                << detail::fmt_double(st.location.lon) << ',' << format_rfc3339(s.t)
                << ',' << detail::fmt_double(s.v) << '\n';
}

// ---- manifest CSV: sensor_id,date,true_lat,true_lon -------------------------

struct ManifestRow {
    std::string sensor_id;
    DateUtc date;
    GeoCoord truth;
};

inline std::vector<ManifestRow> parse_manifest(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw input_error("empty manifest");
    ++line_no;
    if (detail::strip_cr(line) != "sensor_id,date,true_lat,true_lon")
        detail::parse_fail("malformed manifest header", line_no);
    std::vector<ManifestRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        const auto stripped = detail::strip_cr(line);
        if (stripped.empty()) continue;
        const auto cells = detail::split_csv(stripped);
        if (cells.size() != 4) detail::parse_fail("expected 4 cells", line_no);
        const auto date = parse_date(cells[1]);
        const auto lat = detail::parse_double(cells[2]);
        const auto lon = detail::parse_double(cells[3]);
        if (!date) detail::parse_fail("bad date", line_no);
        if (!lat || !lon) detail::parse_fail("bad coordinate", line_no);
        rows.push_back({std::string(cells[0]), *date, {*lat, *lon}});
        if (!valid_coord(rows.back().truth)) detail::parse_fail("coordinate out of range", line_no);
    }
    return rows;
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestRow>& rows) {
    out << "sensor_id,date,true_lat,true_lon\n";
    for (const auto& r : rows)
        out << r.sensor_id << ',' << format_date(r.date) << ','
            << detail::fmt_double(r.truth.lat) << ',' << detail::fmt_double(r.truth.lon)
            << '\n';
}

// ---- atomic file writes ------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw input_error("cannot open for writing: " + tmp.string());
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw input_error("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename Fn>
void write_stream_atomic(const std::filesystem::path& path, Fn&& fill) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw input_error("cannot open for writing: " + tmp.string());
        fill(out);
        out.flush();
        if (!out) throw input_error("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---- remote weather contract -------------------------------------------------

// transport problems are retryable; validation problems are not
struct transport_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class WeatherFetcher {
public:
    virtual ~WeatherFetcher() = default;
    virtual std::vector<WeatherStationSeries> fetch(const Region& region,
                                                    const DateRange& range) = 0;
};

// reads every *.csv in a fixture directory, keeps stations inside the region
class FileWeatherFetcher final : public WeatherFetcher {
public:
    explicit FileWeatherFetcher(std::filesystem::path dir) : dir_(std::move(dir)) {}

    std::vector<WeatherStationSeries> fetch(const Region& region,
                                            const DateRange& range) override {
        if (!region.valid()) throw input_error("invalid fetch region");
        if (range.n_days <= 0) throw input_error("empty fetch date range");
        std::error_code ec;
        if (!std::filesystem::is_directory(dir_, ec))
            throw transport_error("fixture directory unavailable: " + dir_.string());
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(dir_))
            if (e.path().extension() == ".csv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        const Instant lo = midnight_utc(range.first);
        const Instant hi = midnight_utc(add_days(range.first, range.n_days + 1));
        std::vector<WeatherStationSeries> out;
        for (const auto& f : files) {
            std::ifstream in(f);
            if (!in) throw transport_error("cannot read fixture: " + f.string());
            for (auto& st : parse_weather_csv(in)) {
                if (!region.contains(st.location)) continue;
                std::erase_if(st.temps,
                              [&](const Sample& s) { return s.t < lo || s.t > hi; });
                if (!st.temps.empty()) out.push_back(std::move(st));
            }
        }
        return out;
    }

private:
    std::filesystem::path dir_;
};

// HTTP-backed fetcher skeleton. Credentials come from LUMITRACK_WEATHER_KEY;
// the key is appended to the request only and never appears in logs or errors.
class HttpWeatherFetcher final : public WeatherFetcher {
public:
    explicit HttpWeatherFetcher(std::string base_url) : base_url_(std::move(base_url)) {}

    std::vector<WeatherStationSeries> fetch(const Region& region,
                                            const DateRange& range) override;

private:
    std::string base_url_;
};

inline WeatherStore fetch_remote_weather(WeatherFetcher& fetcher, WeatherStore store,
                                         const Region& region, const DateRange& range) {
    for (auto& s : fetcher.fetch(region, range)) store.add(std::move(s));
    return store;
}

}  // namespace lumitrack

#include <httplib.h>

namespace lumitrack {

inline std::vector<WeatherStationSeries> HttpWeatherFetcher::fetch(
    const Region& region, const DateRange& range) {
    if (!region.valid()) throw input_error("invalid fetch region");
    if (range.n_days <= 0) throw input_error("empty fetch date range");
    const char* key = std::getenv("LUMITRACK_WEATHER_KEY");
    if (key == nullptr || *key == '\0')
        throw input_error("weather API credentials not configured");

    httplib::Client client(base_url_);
    client.set_connection_timeout(10);
    char query[256];
    std::snprintf(query, sizeof(query),
                  "/v1/history?lat_lo=%.4f&lat_hi=%.4f&lon_lo=%.4f&lon_hi=%.4f"
                  "&start=%s&days=%d",
                  region.lat_lo, region.lat_hi, region.lon_lo, region.lon_hi,
                  format_date(range.first).c_str(), range.n_days);
    httplib::Headers headers{{"X-Api-Key", key}};  // credential travels only here
    auto res = client.Get(query, headers);
    if (!res) throw transport_error("weather API unreachable");
    if (res->status != 200)
        throw transport_error("weather API returned status " + std::to_string(res->status));
    std::istringstream body(res->body);
    auto stations = parse_weather_csv(body);
    std::erase_if(stations, [&](const WeatherStationSeries& s) {
        return !region.contains(s.location);
    });
    return stations;
}

}  // namespace lumitrack
