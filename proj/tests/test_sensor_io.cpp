#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lumitrack/sensor_io.hpp"

using namespace lumitrack;
namespace fs = std::filesystem;

namespace {

SensorLog roundtrip(const SensorLog& log) {
    std::ostringstream out;
    write_sensor_log(out, log);
    std::istringstream in(out.str());
    return parse_sensor_log(in, log.id);
}

WeatherStationSeries make_station(std::string id, GeoCoord at, Instant start, int hours,
                                  double base = 10.0, double slope = 0.0) {
    WeatherStationSeries st{std::move(id), at, {}};
    for (int h = 0; h < hours; ++h)
        st.temps.push_back({start + h * kSecPerHour, base + slope * h});
    return st;
}

}  // namespace

TEST_CASE("sensor log parsing", "[sensor-io]") {
    SECTION("well-formed three-row file") {
        std::istringstream in(
            "timestamp_utc,light_lux,temp_c\n"
            "2018-10-15T00:00:00Z,0.1,12.5\n"
            "2018-10-15T00:00:10Z,0.2,\n"
            "2018-10-15T00:00:20Z,0.3,12.6\n");
        const auto log = parse_sensor_log(in, "s1");
        REQUIRE(log.light.size() == 3);
        REQUIRE(log.temp.size() == 2);
        CHECK(log.light[1].v == 0.2);
        CHECK(log.temp[1].t == parse_rfc3339("2018-10-15T00:00:20Z").value());
    }
    SECTION("out-of-order timestamps rejected with line number") {
        std::istringstream in(
            "timestamp_utc,light_lux,temp_c\n"
            "2018-10-15T00:00:10Z,0.1,\n"
            "2018-10-15T00:00:00Z,0.2,\n");
        CHECK_THROWS_WITH(parse_sensor_log(in), Catch::Matchers::ContainsSubstring("line 3"));
    }
    SECTION("negative lux rejected") {
        std::istringstream in(
            "timestamp_utc,light_lux,temp_c\n"
            "2018-10-15T00:00:00Z,-1,\n");
        CHECK_THROWS_AS(parse_sensor_log(in), input_error);
    }
    SECTION("bad header rejected") {
        std::istringstream in("time,light,temp\n");
        CHECK_THROWS_AS(parse_sensor_log(in), input_error);
    }
    SECTION("row with no measurement rejected") {
        std::istringstream in(
            "timestamp_utc,light_lux,temp_c\n"
            "2018-10-15T00:00:00Z,,\n");
        CHECK_THROWS_AS(parse_sensor_log(in), input_error);
    }
}

TEST_CASE("sensor log round-trip is exact", "[sensor-io]") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ulux(0.0, 1e5), utmp(-20.0, 40.0);
    SensorLog log;
    log.id = "s42";
    Instant t = parse_rfc3339("2018-09-03T00:00:00Z").value();
    for (int i = 0; i < 500; ++i) {
        log.light.push_back({t + i * 10, ulux(rng)});
        if (i % 2 == 0) log.temp.push_back({t + i * 10 + 5, utmp(rng)});
    }
    const auto back = roundtrip(log);
    REQUIRE(back.light.size() == log.light.size());
    REQUIRE(back.temp.size() == log.temp.size());
    for (std::size_t i = 0; i < log.light.size(); ++i) {
        REQUIRE(back.light[i].t == log.light[i].t);
        REQUIRE(back.light[i].v == log.light[i].v);
    }
    for (std::size_t i = 0; i < log.temp.size(); ++i) {
        REQUIRE(back.temp[i].t == log.temp[i].t);
        REQUIRE(back.temp[i].v == log.temp[i].v);
    }
}

TEST_CASE("parser fuzzing never yields an invalid log", "[sensor-io]") {
    std::mt19937_64 rng(99);
    const std::string alphabet = "0123456789-:TZ,.\nabc ";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::uniform_int_distribution<int> len(0, 400);
    for (int trial = 0; trial < 300; ++trial) {
        std::string text = "timestamp_utc,light_lux,temp_c\n";
        const int n = len(rng);
        for (int i = 0; i < n; ++i) text.push_back(alphabet[pick(rng)]);
        std::istringstream in(text);
        try {
            const auto log = parse_sensor_log(in);
            REQUIRE(!(log.light.empty() && log.temp.empty()));
            for (std::size_t i = 1; i < log.light.size(); ++i)
                REQUIRE(log.light[i].t > log.light[i - 1].t);
            for (std::size_t i = 1; i < log.temp.size(); ++i)
                REQUIRE(log.temp[i].t > log.temp[i - 1].t);
            for (const auto& s : log.light) REQUIRE(s.v >= 0.0);
        } catch (const input_error&) {
            // rejection is a valid outcome; silent corruption is not
        }
    }
}

TEST_CASE("haversine properties", "[sensor-io]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ulat(-89.0, 89.0), ulon(-180.0, 180.0);
    for (int i = 0; i < 300; ++i) {
        const GeoCoord a{ulat(rng), ulon(rng)}, b{ulat(rng), ulon(rng)},
            c{ulat(rng), ulon(rng)};
        const double ab = haversine_km(a, b), ba = haversine_km(b, a);
        REQUIRE(ab == ba);
        REQUIRE(haversine_km(a, a) == 0.0);
        const double ac = haversine_km(a, c), cb = haversine_km(c, b);
        REQUIRE(ab <= ac + cb + 1e-6 * (ab + ac + cb));
    }
    CHECK(std::abs(haversine_km({0, 0}, {0, 180}) - kPi * kEarthRadiusKm) < 1.0);
}

TEST_CASE("nearest station", "[sensor-io]") {
    SECTION("single and two-station stores") {
        WeatherStore store;
        store.add(make_station("only", {40, -90}, 0, 3));
        CHECK(store.nearest_station({10, 10}) == "only");
        store.add(make_station("far", {42, -90}, 0, 3));
        CHECK(store.nearest_station({40.01, -90}) == "only");
        CHECK(store.nearest_station({41.99, -90}) == "far");
    }
    SECTION("empty store") {
        WeatherStore store;
        CHECK_THROWS_AS(store.nearest_station({0, 0}), input_error);
    }
    SECTION("matches brute force over randomized stores") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> ulat(-60.0, 60.0), ulon(-179.0, 179.0);
        for (int trial = 0; trial < 40; ++trial) {
            WeatherStore store;
            std::vector<WeatherStationSeries> all;
            std::uniform_int_distribution<int> n_st(1, 50);
            const int n = n_st(rng);
            for (int i = 0; i < n; ++i) {
                char id[8];
                std::snprintf(id, sizeof(id), "w%03d", i);
                all.push_back(make_station(id, {ulat(rng), ulon(rng)}, 0, 2));
                store.add(all.back());
            }
            for (int probe = 0; probe < 25; ++probe) {
                const GeoCoord q{ulat(rng), ulon(rng)};
                std::string best;
                double best_d = 1e300;
                for (const auto& st : all) {
                    const double d = haversine_km(q, st.location);
                    if (d < best_d || (d == best_d && st.station_id < best)) {
                        best_d = d;
                        best = st.station_id;
                    }
                }
                REQUIRE(store.nearest_station(q) == best);
            }
        }
    }
}

TEST_CASE("station night series", "[sensor-io]") {
    const Instant day = midnight_utc({2018, 10, 20});
    NightWindow w{day + 30 * kSecPerHour / 10, 0};  // 03:00, offsets off the hour grid
    w.center = day + 3 * kSecPerHour + 1800;
    w.length_sec = 10 * kSecPerHour;

    SECTION("17 samples at 8 h half-span") {
        WeatherStore store;
        store.add(make_station("a", {40, -90}, day - kSecPerDay, 72, 5.0, 0.0));
        const auto v = station_night_series(store, "a", w);
        REQUIRE(v.size() == 17);
        for (double x : v) CHECK(x == 5.0);
    }
    SECTION("linear ramp reproduced exactly") {
        WeatherStore store;
        store.add(make_station("a", {40, -90}, day - kSecPerDay, 72, 0.0, 0.5));
        const auto v = station_night_series(store, "a", w);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const Instant t = w.center + (std::int64_t(i) - 8) * kSecPerHour;
            const double hours = double(t - (day - kSecPerDay)) / 3600.0;
            REQUIRE(std::abs(v[i] - 0.5 * hours) < 1e-9);
        }
    }
    SECTION("small gaps interpolate, large gaps reject") {
        WeatherStationSeries st = make_station("a", {40, -90}, day - kSecPerDay, 72);
        // carve a 2 h bracket (one missing hour) and a 4 h bracket
        auto erase_hour = [&](Instant t) {
            std::erase_if(st.temps, [&](const Sample& s) { return s.t == t; });
        };
        erase_hour(w.center + kSecPerHour / 2 + 1800);  // no-op (off grid), keep explicit
        erase_hour(day + 5 * kSecPerHour);
        WeatherStore ok;
        ok.add(st);
        CHECK_NOTHROW(station_night_series(ok, "a", w));
        erase_hour(day + 6 * kSecPerHour);
        erase_hour(day + 7 * kSecPerHour);
        WeatherStore bad;
        bad.add(st);
        CHECK_THROWS_AS(station_night_series(bad, "a", w), coverage_error);
    }
    SECTION("span outside stored data rejects") {
        WeatherStore store;
        store.add(make_station("a", {40, -90}, day, 6));
        CHECK_THROWS_AS(station_night_series(store, "a", w), coverage_error);
    }
}

TEST_CASE("weather csv round-trip and merge", "[sensor-io]") {
    std::vector<WeatherStationSeries> stations;
    stations.push_back(make_station("w01", {40.25, -100.5}, 0, 30, 4.0, 0.25));
    stations.push_back(make_station("w02", {41.0, -99.0}, 0, 30, 9.0, -0.1));
    std::ostringstream out;
    write_weather_csv(out, stations);
    std::istringstream in(out.str());
    const auto back = parse_weather_csv(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].station_id == "w01");
    CHECK(back[0].location.lat == 40.25);
    REQUIRE(back[0].temps.size() == 30);
    CHECK(back[0].temps[7].v == stations[0].temps[7].v);

    SECTION("duplicate hour keeps first") {
        WeatherStore store;
        store.add(make_station("w01", {40.25, -100.5}, 0, 5, 1.0));
        store.add(make_station("w01", {40.25, -100.5}, 2 * kSecPerHour, 5, 99.0));
        const auto& st = store.at("w01");
        REQUIRE(st.temps.size() == 7);
        CHECK(st.temps[2].v == 1.0);   // original kept
        CHECK(st.temps[5].v == 99.0);  // extension appended
    }
    SECTION("misaligned timestamps rejected") {
        WeatherStationSeries st = make_station("w03", {40, -100}, 0, 3);
        st.temps[1].t += 30;
        WeatherStore store;
        CHECK_THROWS_AS(store.add(st), input_error);
    }
}

TEST_CASE("file-backed weather fetcher", "[sensor-io]") {
    const fs::path dir = fs::temp_directory_path() / "lt_fetch_fixture";
    fs::create_directories(dir);
    {
        std::vector<WeatherStationSeries> fixture;
        fixture.push_back(make_station("in1", {40, -100}, midnight_utc({2018, 9, 1}), 48));
        fixture.push_back(make_station("out1", {70, -100}, midnight_utc({2018, 9, 1}), 48));
        std::ostringstream out;
        write_weather_csv(out, fixture);
        write_file_atomic(dir / "fixture.csv", out.str());
    }
    FileWeatherFetcher fetcher(dir);
    const Region region{30, 50, -110, -90};
    const DateRange range{{2018, 9, 1}, 2};

    SECTION("fixture stations inside region land in the store") {
        const auto store = fetch_remote_weather(fetcher, WeatherStore{}, region, range);
        REQUIRE(store.size() == 1);
        CHECK_NOTHROW(store.at("in1"));
        CHECK_THROWS_AS(store.at("out1"), input_error);
    }
    SECTION("missing directory is a transport error") {
        FileWeatherFetcher broken(dir / "nope");
        CHECK_THROWS_AS(broken.fetch(region, range), transport_error);
    }
    SECTION("exported store fetches back identically") {
        const auto store = fetch_remote_weather(fetcher, WeatherStore{}, region, range);
        const auto again = fetch_remote_weather(fetcher, WeatherStore{}, region, range);
        REQUIRE(store.size() == again.size());
        const auto &a = store.at("in1"), &b = again.at("in1");
        REQUIRE(a.temps.size() == b.temps.size());
        for (std::size_t i = 0; i < a.temps.size(); ++i)
            REQUIRE(a.temps[i].v == b.temps[i].v);
    }
    fs::remove_all(dir);
}

TEST_CASE("http fetcher error taxonomy", "[sensor-io]") {
    HttpWeatherFetcher fetcher("http://127.0.0.1:9");  // discard port: nothing listens
    const Region region{30, 50, -110, -90};
    const DateRange range{{2018, 9, 1}, 2};

    SECTION("no credentials configured is an input error") {
        ::unsetenv("LUMITRACK_WEATHER_KEY");
        CHECK_THROWS_AS(fetcher.fetch(region, range), input_error);
    }
    SECTION("unreachable endpoint is a transport error, key never echoed") {
        ::setenv("LUMITRACK_WEATHER_KEY", "sekrit-key-value", 1);
        try {
            fetcher.fetch(region, range);
            FAIL("expected transport_error");
        } catch (const transport_error& e) {
            CHECK(std::string(e.what()).find("sekrit") == std::string::npos);
        }
        ::unsetenv("LUMITRACK_WEATHER_KEY");
    }
}

TEST_CASE("atomic write leaves no partial file", "[sensor-io]") {
    const fs::path dir = fs::temp_directory_path() / "lt_atomic";
    fs::create_directories(dir);
    const fs::path target = dir / "out.txt";
    write_file_atomic(target, "hello\n");
    std::ifstream in(target);
    std::string content((std::istreambuf_iterator<char>(in)), {});
    CHECK(content == "hello\n");
    CHECK_FALSE(fs::exists(dir / "out.txt.tmp"));
    fs::remove_all(dir);
}
