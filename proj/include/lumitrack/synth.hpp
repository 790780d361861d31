#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lumitrack/astro.hpp"
#include "lumitrack/common.hpp"
#include "lumitrack/geo.hpp"
#include "lumitrack/sensor_io.hpp"
#include "lumitrack/timeutil.hpp"

namespace lumitrack {

struct SynthConfig {
    int n_sensors = 60;
    Region region{25.0, 49.0, -125.0, -67.0};
    DateRange dates{{2018, 9, 1}, 109};  // nights of Sep 1 .. Dec 18
    int n_stations = 0;                  // 0 = auto: jittered grid at 0.5 deg
    double cloud_strength = 0.5;         // in [0, 1]
    double temp_noise_sd = 0.5;          // deg C, sensor thermometer noise
    std::uint64_t seed = 20180901;
    // stations cover the region grown by this margin; candidate boxes that
    // leave the covered area produce dataset discards (as with real networks)
    double station_margin_deg = 1.0;

    void validate() const {
        if (!region.valid()) throw input_error("synth region degenerate");
        if (dates.n_days <= 0 || !valid_date(dates.first))
            throw input_error("synth date range empty");
        if (n_sensors <= 0) throw input_error("n_sensors must be positive");
        if (n_stations < 0) throw input_error("n_stations must be non-negative");
        if (cloud_strength < 0.0 || cloud_strength > 1.0)
            throw input_error("cloud_strength outside [0,1]");
        if (temp_noise_sd < 0.0) throw input_error("temp_noise_sd negative");
        if (station_margin_deg < 0.0) throw input_error("station margin negative");
    }
};

inline constexpr double kLuxMax = 1e5;
inline constexpr double kNightFloorLux = 0.1;
// logistic slope of the twilight ramp, per degree of solar elevation; steep
// enough that illuminance sweeps the usable threshold band within a couple of
// minutes of geometric rise/set, so threshold crossings track the almanac
inline constexpr double kTwilightSlope = 8.0;
inline constexpr double kCloudCorrSec = 45.0 * 60.0;
inline constexpr Instant kLightStepSec = 10;
inline constexpr Instant kTempStepSec = 15;

// ---- deterministic hash noise -------------------------------------------------

namespace detail {

// pure function of (stream, counter): standard normal via Box-Muller on two
// hashed uniforms; keeps lazily regenerated samples identical byte-for-byte
inline double hash_normal(std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t h1 = splitmix64(stream ^ splitmix64(counter));
    const std::uint64_t h2 = splitmix64(h1);
    const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

}  // namespace detail

// ---- clear-sky light ----------------------------------------------------------

namespace detail {

inline double clear_sky_unfloored(const GeoCoord& coord, Instant t) {
    const double el = solar_elevation_deg(coord, t);
    return kLuxMax / (1.0 + std::exp(-kTwilightSlope * (el + 0.833)));
}

}  // namespace detail

// smooth logistic twilight ramp centred on the rise/set elevation -0.833 deg
inline double clear_sky_light(const GeoCoord& coord, Instant t) {
    return std::max(kNightFloorLux, detail::clear_sky_unfloored(coord, t));
}

// ---- microclimate (random Fourier features, Gaussian kernel) -------------------

class Microclimate {
public:
    Microclimate(std::uint64_t seed, double sd = 1.5, double corr_len_deg = 2.0) {
        Rng rng(derive_seed(seed, "microclimate"));
        constexpr int kFeatures = 64;
        wlat_.reserve(kFeatures);
        wlon_.reserve(kFeatures);
        phase_.reserve(kFeatures);
        for (int i = 0; i < kFeatures; ++i) {
            wlat_.push_back(rng.normal() / corr_len_deg);
            wlon_.push_back(rng.normal() / corr_len_deg);
            phase_.push_back(rng.uniform(0.0, 2.0 * kPi));
        }
        amp_ = sd * std::sqrt(2.0 / kFeatures);
    }

    double at(const GeoCoord& c) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < wlat_.size(); ++i)
            acc += std::cos(wlat_[i] * c.lat + wlon_[i] * c.lon + phase_[i]);
        return amp_ * acc;
    }

private:
    std::vector<double> wlat_, wlon_, phase_;
    double amp_ = 0.0;
};

// ---- temperature field ----------------------------------------------------------

// T = 30 - 0.7 (lat - 25) - 0.08 days_past_anchor + 6 cos(2 pi (solar_hour - 15)/24)
//     + microclimate(lat, lon)
inline double temperature_field(const GeoCoord& coord, Instant t, Instant anchor,
                                const Microclimate& micro) {
    const double days = static_cast<double>(t - anchor) / kSecPerDay;
    const double utc_hours = static_cast<double>(t % kSecPerDay) / 3600.0;
    double solar_hour = std::fmod(utc_hours + coord.lon / 15.0, 24.0);
    if (solar_hour < 0) solar_hour += 24.0;
    const double diurnal = 6.0 * std::cos(2.0 * kPi * (solar_hour - 15.0) / 24.0);
    return 30.0 - 0.7 * (coord.lat - 25.0) - 0.08 * days + diurnal + micro.at(coord);
}

// ---- cloud attenuation -----------------------------------------------------------

// AR(1) log-attenuation sampled on the 10 s grid; the chain restarts from the
// stationary law at every UTC midnight so any sub-span regenerates identically
class CloudProcess {
public:
    CloudProcess(std::uint64_t sensor_stream, double strength)
        : stream_(sensor_stream), sigma_(strength * 1.0) {
        phi_ = std::exp(-static_cast<double>(kLightStepSec) / kCloudCorrSec);
        innov_sd_ = sigma_ * std::sqrt(1.0 - phi_ * phi_);
    }

    // log-attenuation at every 10 s tick in [t0, t1)
    std::vector<double> log_attenuation(Instant t0, Instant t1) const {
        std::vector<double> out;
        if (sigma_ == 0.0) {
            out.assign(static_cast<std::size_t>((t1 - t0) / kLightStepSec), 0.0);
            return out;
        }
        out.reserve(static_cast<std::size_t>((t1 - t0) / kLightStepSec));
        std::int64_t day = t0 / kSecPerDay - (t0 < 0 && t0 % kSecPerDay ? 1 : 0);
        double x = 0.0;
        Instant t = day * kSecPerDay;
        while (t < t1) {
            const Instant day_end = (day + 1) * kSecPerDay;
            const std::uint64_t day_stream =
                splitmix64(stream_ ^ static_cast<std::uint64_t>(day) * 0x9e3779b97f4a7c15ull);
            std::uint64_t k = 0;
            x = sigma_ * detail::hash_normal(day_stream, k++);
            for (; t < day_end && t < t1; t += kLightStepSec) {
                if (t >= t0) out.push_back(x);
                x = phi_ * x + innov_sd_ * detail::hash_normal(day_stream, k);
                ++k;
            }
            ++day;
            t = day * kSecPerDay;
        }
        return out;
    }

private:
    std::uint64_t stream_;
    double sigma_, phi_ = 0.0, innov_sd_ = 0.0;
};

// clear sky times attenuation, floored; 10 s cadence over [t0, t1)
inline std::vector<Sample> generate_light_curve(const GeoCoord& coord, Instant t0,
                                                Instant t1, double cloud_strength,
                                                std::uint64_t sensor_stream) {
    t0 -= t0 % kLightStepSec;
    const CloudProcess clouds(sensor_stream, cloud_strength);
    const auto logatt = clouds.log_attenuation(t0, t1);
    std::vector<Sample> out;
    out.reserve(logatt.size());
    Instant t = t0;
    for (const double la : logatt) {
        const double clear = detail::clear_sky_unfloored(coord, t);
        out.push_back({t, std::max(kNightFloorLux, clear * std::exp(la))});
        t += kLightStepSec;
    }
    return out;
}

// ---- the world --------------------------------------------------------------------

struct SensorInfo {
    std::string id;
    GeoCoord pos;
};

class SynthWorld {
public:
    static SynthWorld generate(const SynthConfig& cfg) {
        cfg.validate();
        SynthWorld w;
        w.cfg_ = cfg;
        w.micro_ = std::make_shared<Microclimate>(cfg.seed);
        // seasonal drift is anchored at Sep 1 of the campaign year
        w.temp_anchor_ = midnight_utc({cfg.dates.first.year, 9, 1});

        for (int i = 0; i < cfg.n_sensors; ++i) {
            char id[16];
            std::snprintf(id, sizeof(id), "s%04d", i);
            Rng rng(derive_seed(cfg.seed, std::string("sensor:") + id));
            const GeoCoord pos{rng.uniform(cfg.region.lat_lo, cfg.region.lat_hi),
                               rng.uniform(cfg.region.lon_lo, cfg.region.lon_hi)};
            w.sensors_.push_back({id, pos});
        }

        w.build_stations();

        for (const auto& s : w.sensors_) {
            const GeoCoord near = w.store_.stations()[w.store_.nearest_index(s.pos)].location;
            if (great_circle_deg(s.pos, near) > 3.0)
                throw input_error("station layout leaves sensor " + s.id +
                                  " without coverage within 3 degrees");
        }

        for (const auto& s : w.sensors_)
            for (int d = 0; d < cfg.dates.n_days; ++d)
                w.manifest_.push_back({s.id, add_days(cfg.dates.first, d), s.pos});
        return w;
    }

    const SynthConfig& config() const { return cfg_; }
    const std::vector<SensorInfo>& sensors() const { return sensors_; }
    const WeatherStore& store() const { return store_; }
    const std::vector<ManifestRow>& manifest() const { return manifest_; }
    const Microclimate& microclimate() const { return *micro_; }
    Instant temp_anchor() const { return temp_anchor_; }

    double field_at(const GeoCoord& c, Instant t) const {
        return temperature_field(c, t, temp_anchor_, *micro_);
    }

    int sensor_index(std::string_view id) const {
        for (std::size_t i = 0; i < sensors_.size(); ++i)
            if (sensors_[i].id == id) return static_cast<int>(i);
        throw input_error("unknown sensor: " + std::string(id));
    }

    // One night's log (10 s light, 15 s temperature) spanning night_center
    // +- pad; regenerating any sub-span is deterministic and allocation-light.
    // Default pad covers the longest candidate night (18 h at lat 59, Dec)
    // plus the +-2 h training offsets.
    SensorLog sensor_log_for_night(int sensor_idx, const DateUtc& date,
                                   Instant pad = 14 * kSecPerHour) const {
        const auto& s = sensors_.at(sensor_idx);
        const auto w = night_window(s.pos, date);
        if (!w) throw coverage_error("no night window for " + s.id + " on " + format_date(date));
        return log_over_span(sensor_idx, w->center - pad, w->center + pad);
    }

    // Whole-campaign log; used by the CSV exporter and small-world tests.
    SensorLog sensor_log_full(int sensor_idx) const {
        const Instant t0 = midnight_utc(cfg_.dates.first);
        const Instant t1 =
            midnight_utc(add_days(cfg_.dates.first, cfg_.dates.n_days)) + kSecPerDay;
        return log_over_span(sensor_idx, t0, t1);
    }

    SensorLog log_over_span(int sensor_idx, Instant t0, Instant t1) const {
        const auto& s = sensors_.at(sensor_idx);
        const std::uint64_t light_stream = derive_seed(cfg_.seed, "light:" + s.id);
        const std::uint64_t temp_stream = derive_seed(cfg_.seed, "temp:" + s.id);
        SensorLog log;
        log.id = s.id;
        log.truth = s.pos;
        log.light = generate_light_curve(s.pos, t0, t1, cfg_.cloud_strength, light_stream);
        Instant t = t0 - (t0 % kTempStepSec);
        if (t < t0) t += kTempStepSec;
        for (; t < t1; t += kTempStepSec) {
            const double noise =
                cfg_.temp_noise_sd *
                detail::hash_normal(temp_stream, static_cast<std::uint64_t>(t));
            log.temp.push_back({t, field_at(s.pos, t) + noise});
        }
        return log;
    }

    std::vector<SensorLog> materialize_logs() const {
        std::vector<SensorLog> logs;
        logs.reserve(sensors_.size());
        for (std::size_t i = 0; i < sensors_.size(); ++i)
            logs.push_back(sensor_log_full(static_cast<int>(i)));
        return logs;
    }

private:
    void build_stations() {
        const double m = cfg_.station_margin_deg;
        const double lat_lo = cfg_.region.lat_lo - m, lat_hi = cfg_.region.lat_hi + m;
        const double lon_lo = cfg_.region.lon_lo - m, lon_hi = cfg_.region.lon_hi + m;
        const double h = lat_hi - lat_lo, w = lon_hi - lon_lo;
        double spacing = 0.5;
        if (cfg_.n_stations > 0) spacing = std::sqrt(h * w / cfg_.n_stations);
        const int rows = std::max(2, static_cast<int>(std::lround(h / spacing)) + 1);
        const int cols = std::max(2, static_cast<int>(std::lround(w / spacing)) + 1);

        const Instant t0 = midnight_utc(cfg_.dates.first) - kSecPerDay;
        const int hours = (cfg_.dates.n_days + 3) * 24;

        int idx = 0;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c, ++idx) {
                char id[16];
                std::snprintf(id, sizeof(id), "w%05d", idx);
                Rng rng(derive_seed(cfg_.seed, std::string("station:") + id));
                GeoCoord pos{lat_lo + h * r / (rows - 1) + rng.uniform(-0.1, 0.1),
                             lon_lo + w * c / (cols - 1) + rng.uniform(-0.1, 0.1)};
                pos.lat = std::clamp(pos.lat, -89.9, 89.9);
                pos.lon = std::clamp(pos.lon, -180.0, 180.0);
                WeatherStationSeries st{id, pos, {}};
                st.temps.reserve(hours);
                for (int hh = 0; hh < hours; ++hh) {
                    const Instant t = t0 + Instant(hh) * kSecPerHour;
                    const double noise = 0.3 * rng.normal();
                    st.temps.push_back({t, field_at(pos, t) + noise});
                }
                store_.add(std::move(st));
            }
        }
    }

    SynthConfig cfg_;
    std::vector<SensorInfo> sensors_;
    WeatherStore store_;
    std::vector<ManifestRow> manifest_;
    std::shared_ptr<Microclimate> micro_;
    Instant temp_anchor_ = 0;
};

// ---- world export -----------------------------------------------------------------

// Directory layout: manifest.csv, weather.csv, sensors/<id>.csv
inline void write_world(const SynthWorld& world, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "sensors");
    write_stream_atomic(dir / "manifest.csv",
                        [&](std::ostream& out) { write_manifest(out, world.manifest()); });
    write_stream_atomic(dir / "weather.csv", [&](std::ostream& out) {
        write_weather_csv(out, world.store().stations());
    });
    for (std::size_t i = 0; i < world.sensors().size(); ++i) {
        const auto log = world.sensor_log_full(static_cast<int>(i));
        write_stream_atomic(dir / "sensors" / (log.id + ".csv"),
                            [&](std::ostream& out) { write_sensor_log(out, log); });
    }
}

}  // namespace lumitrack
