#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "lumitrack/eval.hpp"
#include "lumitrack/synth.hpp"

using namespace lumitrack;
namespace fs = std::filesystem;

namespace {

std::vector<ManifestRow> fake_manifest(int n_sensors, const DateUtc& first, int n_days) {
    std::vector<ManifestRow> rows;
    for (int s = 0; s < n_sensors; ++s)
        for (int d = 0; d < n_days; ++d)
            rows.push_back({"m" + std::to_string(s), add_days(first, d),
                            {34.0 + 1.5 * s, -101.0 + 2.0 * s}});
    return rows;
}

std::string json_of(const EvalReport& r) {
    std::ostringstream os;
    write_eval_json(os, r);
    return os.str();
}

// world with moderate clouds plus discriminators trained on its train split
struct Fixture {
    SynthWorld world;
    std::vector<ManifestRow> train_days;  // subsampled, used for training
    std::vector<ManifestRow> train_full;  // full training-sensor manifest
    std::vector<ManifestRow> test_days;
    Discriminator light;
    Discriminator temp;
    DayProvider provider;
};

const Fixture& fx() {
    static const Fixture f = [] {
        SynthConfig cfg;
        cfg.n_sensors = 8;
        cfg.region = {30.0, 44.0, -112.0, -82.0};
        cfg.dates = {{2018, 9, 1}, 110};
        cfg.cloud_strength = 0.5;
        cfg.seed = 60601;
        auto world = SynthWorld::generate(cfg);

        auto [train_full, test] = split_train_test(world.manifest(), 0.75, 5);
        std::vector<ManifestRow> train;
        for (std::size_t i = 0; i < train_full.size(); i += 4) train.push_back(train_full[i]);

        auto* wp = new SynthWorld(std::move(world));  // keep alive for the provider
        const DayProvider provider = [wp](const ManifestRow& row) {
            return wp->sensor_log_for_night(wp->sensor_index(row.sensor_id), row.date);
        };

        const auto light_set = build_light_training_set(train, provider, 61);
        std::vector<std::string> light_groups;
        for (const auto& p : light_set.prov) light_groups.push_back(p.sensor_id);
        TrainConfig lc;
        lc.epochs = 8;
        lc.seed = 71;
        std::cerr << "[fixture] training light discriminator on " << light_set.n()
                  << " examples\n";
        auto light = train_discriminator(light_discriminator_spec(), light_set.X,
                                         light_set.y, light_groups, lc, nullptr);

        const auto temp_set = build_temp_training_set(train, wp->store(), provider, 62);
        std::vector<std::string> temp_groups;
        for (const auto& p : temp_set.prov) temp_groups.push_back(p.sensor_id);
        TrainConfig tc;
        tc.epochs = 100;
        tc.seed = 72;
        std::cerr << "[fixture] training temp discriminator on " << temp_set.n()
                  << " examples\n";
        auto temp = train_discriminator(temp_discriminator_spec(), temp_set.X, temp_set.y,
                                        temp_groups, tc, nullptr);

        return Fixture{*wp,           std::move(train), std::move(train_full),
                       std::move(test), std::move(light.model), std::move(temp.model),
                       provider};
    }();
    return f;
}

// one moderately sized report computed once and reused by several cases
const EvalReport& small_report() {
    static const EvalReport r = [] {
        const auto& f = fx();
        std::vector<ManifestRow> days;
        for (const auto& row : f.test_days)
            if (row.date.day == 10 || row.date.day == 24) days.push_back(row);
        EvalConfig cfg;
        cfg.seed = 60601;
        std::ostringstream warn;
        return run_eval(f.train_days, days, f.provider, f.world.store(), f.light, f.temp,
                        cfg, &warn);
    }();
    return r;
}

}  // namespace

TEST_CASE("oracle self-test: zero error, full accounting, clipped buckets") {
    const auto manifest = fake_manifest(3, {2018, 9, 1}, 110);  // Sep 1 .. Dec 19
    const auto r = run_eval_oracle(manifest);

    CHECK(r.n_selected == 330);
    CHECK(r.n_evaluated == 330);
    CHECK(r.dropped.empty());
    CHECK(r.baseline_theta == 0.0);

    REQUIRE(r.rows.size() == 8);  // half-month buckets Sep a .. Dec b
    int total = 0;
    for (const auto& row : r.rows) {
        CHECK(row.method == "oracle");
        CHECK(row.lat_mae == 0.0);
        CHECK(row.lon_mae == 0.0);
        total += row.n_days;
    }
    CHECK(total == 330);
    CHECK(r.rows.front().bucket == "2018-09-01..2018-09-15");
    CHECK(r.rows.front().n_days == 45);
    CHECK(r.rows.back().bucket == "2018-12-16..2018-12-19");  // clipped to the range
    CHECK(r.rows.back().n_days == 12);
}

TEST_CASE("subsampling keeps every Nth day plus the equinox window") {
    const auto manifest = fake_manifest(2, {2018, 9, 1}, 110);
    EvalConfig cfg;
    cfg.day_stride = 3;
    cfg.equinox_keep_days = 10;
    const auto r = run_eval_oracle(manifest, cfg);

    // recompute the rule: sorted order here equals construction order
    const auto equinox = civil_days({2018, 9, 22});
    int expected = 0;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const bool on_stride = i % 3 == 0;
        const bool near = std::llabs(civil_days(manifest[i].date) - equinox) <= 10;
        expected += (on_stride || near) ? 1 : 0;
    }
    CHECK(r.n_selected == expected);
    CHECK(r.n_selected > 74);  // strictly more than the stride alone

    int total = 0;
    for (const auto& row : r.rows) total += row.n_days;
    CHECK(total == r.n_selected);

    // input order must not matter
    auto shuffled = manifest;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(json_of(run_eval_oracle(shuffled, cfg)) == json_of(r));
}

TEST_CASE("eval config validation") {
    const auto manifest = fake_manifest(2, {2018, 9, 1}, 4);
    EvalConfig bad;
    bad.day_stride = 0;
    CHECK_THROWS_AS(run_eval_oracle(manifest, bad), input_error);
    bad = {};
    bad.fine_step_deg = -0.1;
    CHECK_THROWS_AS(run_eval_oracle(manifest, bad), input_error);
    CHECK_THROWS_AS(run_eval_oracle({}, EvalConfig{}), input_error);
}

TEST_CASE("run_eval: structure, accounting, and complementarity on a trained world") {
    const auto& f = fx();
    EvalConfig cfg;
    cfg.day_stride = 3;
    cfg.equinox_keep_days = 10;
    cfg.seed = 60601;
    std::ostringstream warn;
    const auto r = run_eval(f.train_days, f.test_days, f.provider, f.world.store(), f.light,
                            f.temp, cfg, &warn);

    CHECK(r.baseline_theta >= kBaselineThetaLo);
    CHECK(r.baseline_theta <= kBaselineThetaHi);
    CHECK(r.n_selected == r.n_evaluated + static_cast<int>(r.dropped.size()));

    // every bucket reports all three methods, in fixed order
    std::map<std::string, std::vector<std::string>> methods_by_bucket;
    std::map<std::string, int> days_by_method;
    for (const auto& row : r.rows) {
        methods_by_bucket[row.bucket].push_back(row.method);
        days_by_method[row.method] += row.n_days;
        CHECK(row.lat_mae >= 0.0);
        CHECK(row.lon_mae >= 0.0);
        CHECK(std::isfinite(row.lat_mae));
        CHECK(std::isfinite(row.lon_mae));
    }
    for (const auto& [bucket, methods] : methods_by_bucket)
        CHECK(methods == std::vector<std::string>{"baseline", "light", "fused"});
    REQUIRE(days_by_method.size() == 3);
    for (const auto& [method, n] : days_by_method) CHECK(n == r.n_evaluated);

    std::cerr << "[eval] theta " << r.baseline_theta << ", evaluated " << r.n_evaluated
              << "/" << r.n_selected << " days\n";
    for (const auto& row : r.rows)
        std::cerr << "[eval] " << row.bucket << " " << row.method << " lat "
                  << row.lat_mae << " lon " << row.lon_mae << " n " << row.n_days << "\n";

    // equinox bucket: fusion must recover latitude the light net loses
    double light_eq = -1.0, fused_eq = -1.0;
    for (const auto& row : r.rows) {
        if (row.bucket != "2018-09-16..2018-09-30") continue;
        if (row.method == "light") light_eq = row.lat_mae;
        if (row.method == "fused") fused_eq = row.lat_mae;
    }
    REQUIRE(light_eq >= 0.0);
    REQUIRE(fused_eq >= 0.0);
    CHECK(fused_eq < light_eq);

    // report is a pure function of its inputs
    const auto r2 = run_eval(f.train_days, f.test_days, f.provider, f.world.store(), f.light,
                             f.temp, cfg, nullptr);
    CHECK(json_of(r2) == json_of(r));
}

TEST_CASE("run_eval rejects bad inputs") {
    const auto& f = fx();
    const Discriminator blank{light_discriminator_spec(), {}};
    CHECK_THROWS_AS(run_eval(f.train_days, f.test_days, f.provider, f.world.store(), blank,
                             f.temp),
                    input_error);
    // train/test sensor overlap
    auto leaky = f.test_days;
    leaky.push_back(f.train_days.front());
    CHECK_THROWS_AS(run_eval(f.train_days, leaky, f.provider, f.world.store(), f.light,
                             f.temp),
                    input_error);
    CHECK_THROWS_AS(run_eval({}, f.test_days, f.provider, f.world.store(), f.light, f.temp),
                    input_error);
    CHECK_THROWS_AS(run_eval(f.train_days, {}, f.provider, f.world.store(), f.light, f.temp),
                    input_error);
}

TEST_CASE("days a method cannot localize are dropped and enumerated") {
    const auto& f = fx();
    std::vector<ManifestRow> days;
    for (const auto& row : f.test_days)
        if (row.date.month == 10 && row.date.day <= 6) days.push_back(row);
    REQUIRE(days.size() >= 4);
    const auto& poisoned_row = days[1];

    const DayProvider poisoned = [&](const ManifestRow& row) {
        if (row.sensor_id == poisoned_row.sensor_id &&
            civil_days(row.date) == civil_days(poisoned_row.date))
            throw coverage_error("synthetic outage");
        return f.provider(row);
    };
    std::ostringstream warn;
    const auto r = run_eval(f.train_days, days, poisoned, f.world.store(), f.light, f.temp,
                            EvalConfig{}, &warn);

    CHECK(r.n_selected == static_cast<int>(days.size()));
    CHECK(r.n_evaluated == r.n_selected - 1);
    REQUIRE(r.dropped.size() == 1);
    CHECK(r.dropped[0].sensor_id == poisoned_row.sensor_id);
    CHECK(civil_days(r.dropped[0].date) == civil_days(poisoned_row.date));
    CHECK(r.dropped[0].reason == "synthetic outage");
    CHECK(warn.str().find("dropping " + poisoned_row.sensor_id) != std::string::npos);

    int total = 0;
    for (const auto& row : r.rows) total += row.n_days;
    CHECK(total == 3 * r.n_evaluated);
}

TEST_CASE("report serialization: CSV shape, JSON fields, atomic save") {
    const auto& r = small_report();
    REQUIRE(!r.rows.empty());

    std::ostringstream csv;
    write_eval_csv(csv, r);
    std::istringstream lines(csv.str());
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(line == "bucket,method,lat_mae_deg,lon_mae_deg,n_days");
    int n_lines = 0;
    while (std::getline(lines, line)) {
        ++n_lines;
        CHECK(std::count(line.begin(), line.end(), ',') == 4);
    }
    CHECK(n_lines == static_cast<int>(r.rows.size()));

    const auto js = json_of(r);
    CHECK(js.find("\"baseline_theta\": ") != std::string::npos);
    CHECK(js.find("\"n_selected\": " + std::to_string(r.n_selected)) != std::string::npos);
    CHECK(js.find("\"n_evaluated\": " + std::to_string(r.n_evaluated)) != std::string::npos);
    CHECK(js.find("\"seed\": 60601") != std::string::npos);
    CHECK(js.find("\"method\": \"fused\"") != std::string::npos);
    CHECK(js.find("\"dropped\": []") != std::string::npos);

    const auto dir = fs::temp_directory_path() / "lt_eval_report";
    fs::remove_all(dir);
    fs::create_directories(dir);
    save_eval_report(r, dir / "report.csv", dir / "report.json");
    CHECK(fs::exists(dir / "report.csv"));
    CHECK(fs::exists(dir / "report.json"));
    CHECK(!fs::exists(dir / "report.csv.tmp"));
    std::ifstream back(dir / "report.json");
    std::stringstream buf;
    buf << back.rdbuf();
    CHECK(buf.str() == js);
}

TEST_CASE("json escaping covers quotes, backslashes, and control bytes") {
    CHECK(eval_detail::json_escape("plain") == "plain");
    CHECK(eval_detail::json_escape("a\"b") == "a\\\"b");
    CHECK(eval_detail::json_escape("a\\b") == "a\\\\b");
    CHECK(eval_detail::json_escape("a\nb") == "a\\u000ab");
}

TEST_CASE("heatmap export: six files, fused max at the estimate, equinox ridge") {
    const auto& f = fx();
    // the spec's figure-analog day: a test sensor near Sep 28
    const ManifestRow* day = nullptr;
    for (const auto& row : f.test_days)
        if (row.date.month == 9 && row.date.day == 28) {
            day = &row;
            break;
        }
    REQUIRE(day != nullptr);

    const auto dir = fs::temp_directory_path() / "lt_eval_maps";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto out = export_heatmaps(f.light, f.temp, f.provider(*day), f.world.store(),
                                     *day, dir);

    REQUIRE(out.files.size() == 6);
    const std::string stem = day->sensor_id + "_" + format_date(day->date);
    const std::vector<std::string> expect{stem + "_light.pgm", stem + "_light.csv",
                                          stem + "_temp.pgm",  stem + "_temp.csv",
                                          stem + "_fused.pgm", stem + "_fused.csv"};
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(out.files[i].filename().string() == expect[i]);
        CHECK(fs::exists(out.files[i]));
    }

    // fine rasters are 201x201
    std::ifstream pgm(out.files[0], std::ios::binary);
    std::string header(15, '\0');
    pgm.read(header.data(), 15);
    CHECK(header == "P5\n201 201\n255\n");

    // parse a CSV raster back into offsets and values
    const auto load = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line;
        REQUIRE(std::getline(in, line));
        REQUIRE(line == "lat_offset,lon_offset,value");
        std::map<double, std::map<double, double>> cells;  // lat -> lon -> value
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string a, b, c;
            std::getline(row, a, ',');
            std::getline(row, b, ',');
            std::getline(row, c, ',');
            cells[std::stod(a)][std::stod(b)] = c == "nan" ? -1.0 : std::stod(c);
        }
        return cells;
    };

    // fused raster max sits at the returned estimate
    const auto fused = load(out.files[5]);
    double best = -1.0, best_lat = 0.0, best_lon = 0.0;
    for (const auto& [lat, by_lon] : fused)
        for (const auto& [lon, v] : by_lon)
            if (v > best) {
                best = v;
                best_lat = lat;
                best_lon = lon;
            }
    CHECK(best_lat == Catch::Approx(out.fused_estimate.coord.lat - day->truth.lat).margin(1e-9));
    CHECK(best_lon == Catch::Approx(out.fused_estimate.coord.lon - day->truth.lon).margin(1e-9));

    // light raster: latitude-elongated ridge through the argmax
    const auto light = load(out.files[1]);
    std::vector<double> lats, lons;
    for (const auto& [lat, by_lon] : light) lats.push_back(lat);
    for (const auto& [lon, v] : light.begin()->second) lons.push_back(lon);
    double lmax = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < lats.size(); ++i)
        for (std::size_t j = 0; j < lons.size(); ++j) {
            const double v = light.at(lats[i]).at(lons[j]);
            if (v > lmax) {
                lmax = v;
                bi = i;
                bj = j;
            }
        }
    const auto run_len = [&](bool along_lat) {
        int count = 1;
        const auto n = along_lat ? lats.size() : lons.size();
        for (std::size_t s = (along_lat ? bi : bj) + 1; s < n; ++s) {
            const double v = along_lat ? light.at(lats[s]).at(lons[bj])
                                       : light.at(lats[bi]).at(lons[s]);
            if (v < 0.5 * lmax) break;
            ++count;
        }
        for (std::size_t s = along_lat ? bi : bj; s-- > 0;) {
            const double v = along_lat ? light.at(lats[s]).at(lons[bj])
                                       : light.at(lats[bi]).at(lons[s]);
            if (v < 0.5 * lmax) break;
            ++count;
        }
        return count;
    };
    const int lat_extent = run_len(true), lon_extent = run_len(false);
    std::cerr << "[eval] light raster half-max extent: lat " << lat_extent << " lon "
              << lon_extent << " cells\n";
    CHECK(lat_extent > 3 * lon_extent);

    const Discriminator blank{light_discriminator_spec(), {}};
    CHECK_THROWS_AS(export_heatmaps(blank, f.temp, f.provider(*day), f.world.store(), *day,
                                    dir),
                    input_error);
}
