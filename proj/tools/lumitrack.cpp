// Pipeline driver: synthesize worlds, build datasets, train discriminators,
// localize single sensor-days, and run bucketed evaluations. Every artifact
// is written atomically and every command is deterministic under a fixed
// seed, so reruns reproduce outputs byte for byte.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lumitrack/eval.hpp"
#include "lumitrack/synth.hpp"

namespace fs = std::filesystem;
using namespace lumitrack;

namespace {

// ---- flag plumbing ---------------------------------------------------------

using FlagMap = std::map<std::string, std::string>;

FlagMap parse_flags(int argc, char** argv, std::initializer_list<const char*> allowed) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    FlagMap f;
    for (int i = 2; i < argc; ++i) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0)
            throw input_error("cli: expected a --flag, got '" + key + "'");
        key.erase(0, 2);
        if (!ok.count(key)) throw input_error("cli: unknown flag --" + key);
        if (i + 1 >= argc) throw input_error("cli: flag --" + key + " needs a value");
        f[key] = argv[++i];
    }
    return f;
}

std::string req(const FlagMap& f, const std::string& key) {
    const auto it = f.find(key);
    if (it == f.end()) throw input_error("cli: missing required flag --" + key);
    return it->second;
}

double flag_num(const FlagMap& f, const std::string& key, double def) {
    const auto it = f.find(key);
    if (it == f.end()) return def;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos == it->second.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw input_error("cli: flag --" + key + " wants a number, got '" + it->second + "'");
}

long long flag_int(const FlagMap& f, const std::string& key, long long def) {
    const auto it = f.find(key);
    if (it == f.end()) return def;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw input_error("cli: flag --" + key + " wants an integer, got '" + it->second + "'");
}

std::uint64_t flag_seed(const FlagMap& f, const std::string& key, std::uint64_t def) {
    const auto it = f.find(key);
    if (it == f.end()) return def;
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(it->second, &pos);
        if (pos == it->second.size() && it->second[0] != '-') return v;
    } catch (const std::exception&) {
    }
    throw input_error("cli: flag --" + key + " wants a non-negative seed, got '" + it->second +
                      "'");
}

DateUtc flag_date(const std::string& key, const std::string& s) {
    const auto d = parse_date(s);
    if (!d) throw input_error("cli: flag --" + key + " wants YYYY-MM-DD, got '" + s + "'");
    return *d;
}

std::vector<double> split_nums(const std::string& key, const std::string& s, std::size_t n) {
    std::vector<double> out;
    std::size_t at = 0;
    while (at <= s.size()) {
        const auto comma = s.find(',', at);
        const auto field = s.substr(at, comma == std::string::npos ? comma : comma - at);
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(field, &pos));
            if (pos != field.size()) throw input_error("trailing junk");
        } catch (const std::exception&) {
            throw input_error("cli: flag --" + key + " wants " + std::to_string(n) +
                              " comma-separated numbers, got '" + s + "'");
        }
        if (comma == std::string::npos) break;
        at = comma + 1;
    }
    if (out.size() != n)
        throw input_error("cli: flag --" + key + " wants " + std::to_string(n) +
                          " comma-separated numbers, got '" + s + "'");
    return out;
}

GeoCoord flag_coord(const std::string& key, const std::string& s) {
    const auto v = split_nums(key, s, 2);
    const GeoCoord c{v[0], v[1]};
    if (!valid_coord(c)) throw input_error("cli: flag --" + key + " is off the globe: '" + s + "'");
    return c;
}

int flag_hemisphere(const FlagMap& f, int def) {
    const auto it = f.find("hemisphere");
    if (it == f.end()) return def;
    if (it->second == "north" || it->second == "1") return 1;
    if (it->second == "south" || it->second == "-1") return -1;
    throw input_error("cli: --hemisphere wants north or south, got '" + it->second + "'");
}

// ---- artifact helpers --------------------------------------------------------

std::string jstr(const std::string& s) { return "\"" + eval_detail::json_escape(s) + "\""; }

void write_run_json(const fs::path& dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& fields) {
    write_stream_atomic(dir / "run.json", [&](std::ostream& out) {
        out << "{\n  \"command\": " << jstr(command);
        for (const auto& [k, v] : fields) out << ",\n  \"" << k << "\": " << v;
        out << "\n}\n";
    });
}

// Reads a world directory written by `synth`: manifest + weather eagerly,
// per-sensor logs on demand with a one-slot cache (day lists arrive sorted by
// sensor, so each log file is parsed once per pass).
class FileWorld {
public:
    explicit FileWorld(fs::path dir) : dir_(std::move(dir)) {
        std::ifstream m(dir_ / "manifest.csv");
        if (!m) throw input_error("cli: missing manifest: " + (dir_ / "manifest.csv").string());
        manifest_ = parse_manifest(m);
        std::ifstream w(dir_ / "weather.csv");
        if (!w) throw input_error("cli: missing weather data: " + (dir_ / "weather.csv").string());
        for (auto& series : parse_weather_csv(w)) store_.add(std::move(series));
    }

    const std::vector<ManifestRow>& manifest() const { return manifest_; }
    const WeatherStore& store() const { return store_; }

    // Valid only while this FileWorld is alive.
    DayProvider provider() const {
        return [this](const ManifestRow& row) { return day_log(row); };
    }

    SensorLog day_log(const ManifestRow& row) const {
        const auto w = night_window(row.truth, row.date);
        if (!w)
            throw coverage_error("cli: no night at " + row.sensor_id + " on " +
                                 format_date(row.date));
        const Instant pad = 14 * kSecPerHour;  // longest night plus training offsets
        const auto& full = full_log(row.sensor_id);
        SensorLog log;
        log.id = full.id;
        log.truth = row.truth;
        log.light = slice(full.light, w->center - pad, w->center + pad);
        log.temp = slice(full.temp, w->center - pad, w->center + pad);
        return log;
    }

private:
    static std::vector<Sample> slice(const std::vector<Sample>& xs, Instant lo, Instant hi) {
        const auto cmp = [](const Sample& s, Instant t) { return s.t < t; };
        const auto a = std::lower_bound(xs.begin(), xs.end(), lo, cmp);
        const auto b = std::lower_bound(a, xs.end(), hi, cmp);
        return {a, b};
    }

    const SensorLog& full_log(const std::string& id) const {
        if (cached_.id != id) {
            const auto path = dir_ / "sensors" / (id + ".csv");
            std::ifstream in(path);
            if (!in) throw input_error("cli: missing sensor log: " + path.string());
            cached_ = parse_sensor_log(in, id);
        }
        return cached_;
    }

    fs::path dir_;
    std::vector<ManifestRow> manifest_;
    WeatherStore store_;
    mutable SensorLog cached_;
};

std::vector<ManifestRow> read_manifest_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cli: cannot open manifest: " + path.string());
    return parse_manifest(in);
}

// ---- commands ----------------------------------------------------------------

int cmd_synth(const FlagMap& f) {
    const fs::path out_dir = req(f, "out-dir");
    SynthConfig cfg;
    cfg.seed = flag_seed(f, "seed", cfg.seed);
    cfg.cloud_strength = flag_num(f, "cloud-strength", cfg.cloud_strength);
    cfg.n_sensors = static_cast<int>(flag_int(f, "sensors", cfg.n_sensors));
    cfg.n_stations = static_cast<int>(flag_int(f, "stations", cfg.n_stations));
    cfg.dates.n_days = static_cast<int>(flag_int(f, "days", cfg.dates.n_days));
    if (const auto it = f.find("start-date"); it != f.end())
        cfg.dates.first = flag_date("start-date", it->second);
    if (const auto it = f.find("region"); it != f.end()) {
        const auto v = split_nums("region", it->second, 4);
        cfg.region = {v[0], v[1], v[2], v[3]};
    }

    const auto world = SynthWorld::generate(cfg);
    fs::create_directories(out_dir);
    write_world(world, out_dir);
    write_run_json(out_dir, "synth",
                   {{"seed", std::to_string(cfg.seed)},
                    {"sensors", std::to_string(cfg.n_sensors)},
                    {"stations", std::to_string(cfg.n_stations)},
                    {"start_date", jstr(format_date(cfg.dates.first))},
                    {"days", std::to_string(cfg.dates.n_days)},
                    {"region", "[" + detail::fmt_double(cfg.region.lat_lo) + ", " +
                                   detail::fmt_double(cfg.region.lat_hi) + ", " +
                                   detail::fmt_double(cfg.region.lon_lo) + ", " +
                                   detail::fmt_double(cfg.region.lon_hi) + "]"},
                    {"cloud_strength", detail::fmt_double(cfg.cloud_strength)}});
    std::cout << "wrote world: " << cfg.n_sensors << " sensors, " << world.manifest().size()
              << " sensor-days -> " << out_dir.string() << "\n";
    return 0;
}

int cmd_build_dataset(const FlagMap& f) {
    const fs::path world_dir = req(f, "world");
    const fs::path out_dir = req(f, "out-dir");
    const auto seed = flag_seed(f, "seed", 20180901);
    const double ratio = flag_num(f, "ratio", 0.8);
    const auto stride = flag_int(f, "stride", 1);
    if (stride < 1) throw input_error("cli: --stride must be >= 1");

    const FileWorld world(world_dir);
    auto split = split_train_test(world.manifest(), ratio, seed);
    std::vector<ManifestRow> train;
    for (std::size_t i = 0; i < split.first.size(); i += static_cast<std::size_t>(stride))
        train.push_back(split.first[i]);

    const auto provider = world.provider();
    const auto light = build_light_training_set(train, provider, derive_seed(seed, "light-ds"));
    const auto temp =
        build_temp_training_set(train, world.store(), provider, derive_seed(seed, "temp-ds"));

    fs::create_directories(out_dir);
    write_light_dataset(out_dir / "light.ds", light);
    write_temp_dataset(out_dir / "temp.ds", temp);
    write_stream_atomic(out_dir / "train_manifest.csv",
                        [&](std::ostream& out) { write_manifest(out, train); });
    write_stream_atomic(out_dir / "test_manifest.csv",
                        [&](std::ostream& out) { write_manifest(out, split.second); });
    write_run_json(out_dir, "build-dataset",
                   {{"world", jstr(world_dir.string())},
                    {"seed", std::to_string(seed)},
                    {"ratio", detail::fmt_double(ratio)},
                    {"stride", std::to_string(stride)}});
    std::cout << "wrote datasets: light " << light.n() << ", temp " << temp.n()
              << " examples from " << train.size() << " train days (" << split.second.size()
              << " test days held out) -> " << out_dir.string() << "\n";
    return 0;
}

int cmd_train(const FlagMap& f) {
    const fs::path ds_path = req(f, "dataset");
    const std::string which = req(f, "which");
    const fs::path out_dir = req(f, "out-dir");
    if (which != "light" && which != "temp")
        throw input_error("cli: --which wants light or temp, got '" + which + "'");
    const auto spec = which == "light" ? light_discriminator_spec() : temp_discriminator_spec();

    std::ifstream in(ds_path, std::ios::binary);
    if (!in) throw input_error("cli: cannot open dataset: " + ds_path.string());
    const auto records = read_records(in);
    if (records.dim != static_cast<std::size_t>(spec.in_ch) * spec.in_len)
        throw input_error("cli: dataset row dimension " + std::to_string(records.dim) +
                          " does not fit the " + which + " network");

    std::ifstream side(ds_path.string() + ".json");
    if (!side)
        throw input_error("cli: missing provenance sidecar: " + ds_path.string() + ".json");
    const auto groups = read_provenance_sensors(side);
    if (groups.size() != records.n())
        throw input_error("cli: provenance sidecar does not match the dataset");

    TrainConfig cfg;
    cfg.epochs = static_cast<int>(flag_int(f, "epochs", cfg.epochs));
    cfg.batch_size = static_cast<int>(flag_int(f, "batch-size", cfg.batch_size));
    cfg.lr = flag_num(f, "lr", cfg.lr);
    cfg.seed = flag_seed(f, "seed", cfg.seed);

    const auto result = train_discriminator(spec, records.X, records.y, groups, cfg, &std::cerr);
    if (result.report.diverged)
        std::cerr << "warning: training diverged; kept epoch " << result.report.last_good_epoch
                  << "\n";

    fs::create_directories(out_dir);
    const auto model_path = out_dir / (which + "_model.bin");
    save_discriminator(model_path, result.model);
    write_stream_atomic(out_dir / (which + "_train_report.json"), [&](std::ostream& out) {
        write_train_report(out, spec, cfg, result.report);
    });
    std::cout << "trained " << which << " on " << records.n() << " examples -> "
              << model_path.string() << "\n";
    return 0;
}

int cmd_localize(const FlagMap& f) {
    const fs::path log_path = req(f, "log");
    const fs::path weather_path = req(f, "weather");
    const auto date = flag_date("date", req(f, "date"));
    const auto ref = flag_coord("ref", req(f, "ref"));
    const fs::path out_dir = req(f, "out-dir");

    EvalConfig cfg;
    cfg.half_span_deg = flag_num(f, "half-span", cfg.half_span_deg);
    cfg.fine_step_deg = flag_num(f, "grid-step", cfg.fine_step_deg);
    cfg.validate();

    const auto light = load_discriminator(req(f, "light-model"), light_discriminator_spec());
    const auto temp = load_discriminator(req(f, "temp-model"), temp_discriminator_spec());

    std::string sensor_id = log_path.stem().string();
    if (const auto it = f.find("sensor"); it != f.end()) sensor_id = it->second;
    std::ifstream lin(log_path);
    if (!lin) throw input_error("cli: cannot open sensor log: " + log_path.string());
    const auto log = parse_sensor_log(lin, sensor_id);

    WeatherStore store;
    std::ifstream win(weather_path);
    if (!win) throw input_error("cli: cannot open weather data: " + weather_path.string());
    for (auto& series : parse_weather_csv(win)) store.add(std::move(series));

    const ManifestRow row{sensor_id, date, ref};
    fs::create_directories(out_dir);
    const auto maps = export_heatmaps(light, temp, log, store, row, out_dir, cfg);
    const auto& e = maps.fused_estimate;

    write_stream_atomic(
        out_dir / (sensor_id + "_" + format_date(date) + "_estimate.json"),
        [&](std::ostream& out) {
            out << "{\n";
            out << "  \"sensor\": " << jstr(sensor_id) << ",\n";
            out << "  \"date\": " << jstr(format_date(date)) << ",\n";
            out << "  \"reference\": [" << detail::fmt_double(ref.lat) << ", "
                << detail::fmt_double(ref.lon) << "],\n";
            out << "  \"estimate\": [" << detail::fmt_double(e.coord.lat) << ", "
                << detail::fmt_double(e.coord.lon) << "],\n";
            out << "  \"peak\": " << detail::fmt_double(e.peak) << ",\n";
            out << "  \"ill_conditioned\": " << (e.ill_conditioned ? "true" : "false") << ",\n";
            out << "  \"provenance\": " << jstr(e.provenance) << ",\n";
            out << "  \"half_span_deg\": " << detail::fmt_double(cfg.half_span_deg) << ",\n";
            out << "  \"grid_step_deg\": " << detail::fmt_double(cfg.fine_step_deg) << ",\n";
            out << "  \"rasters\": [";
            for (std::size_t i = 0; i < maps.files.size(); ++i)
                out << (i ? ", " : "") << jstr(maps.files[i].filename().string());
            out << "]\n}\n";
        });
    std::cout << "estimate " << sensor_id << " " << format_date(date) << ": lat "
              << detail::fmt_double(e.coord.lat) << " lon " << detail::fmt_double(e.coord.lon)
              << (e.ill_conditioned ? " (ill-conditioned)" : "") << "\n";
    return 0;
}

int cmd_eval(const FlagMap& f) {
    const fs::path world_dir = req(f, "world");
    const fs::path out_dir = req(f, "out-dir");
    const std::string light_path = req(f, "light-model");
    const std::string temp_path = req(f, "temp-model");

    EvalConfig cfg;
    cfg.half_span_deg = flag_num(f, "half-span", cfg.half_span_deg);
    cfg.fine_step_deg = flag_num(f, "grid-step", cfg.fine_step_deg);
    cfg.day_stride = static_cast<int>(flag_int(f, "stride", cfg.day_stride));
    cfg.equinox_keep_days =
        static_cast<int>(flag_int(f, "equinox-keep", cfg.equinox_keep_days));
    cfg.hemisphere_hint = flag_hemisphere(f, cfg.hemisphere_hint);
    cfg.seed = flag_seed(f, "seed", cfg.seed);
    cfg.validate();

    const bool oracle_light = light_path == "oracle";
    const bool oracle_temp = temp_path == "oracle";
    if (oracle_light != oracle_temp)
        throw input_error("cli: oracle mode wants both models set to 'oracle'");

    const FileWorld world(world_dir);
    std::vector<ManifestRow> train, test;
    if (f.count("train-manifest") != f.count("test-manifest"))
        throw input_error("cli: --train-manifest and --test-manifest go together");
    if (f.count("train-manifest")) {
        train = read_manifest_file(req(f, "train-manifest"));
        test = read_manifest_file(req(f, "test-manifest"));
    } else {
        // must mirror build-dataset so the held-out sensors line up
        const auto split_seed = flag_seed(f, "split-seed", 20180901);
        const double ratio = flag_num(f, "ratio", 0.8);
        auto split = split_train_test(world.manifest(), ratio, split_seed);
        train = std::move(split.first);
        test = std::move(split.second);
    }

    EvalReport report;
    if (oracle_light) {
        report = run_eval_oracle(test, cfg);
    } else {
        const auto light = load_discriminator(light_path, light_discriminator_spec());
        const auto temp = load_discriminator(temp_path, temp_discriminator_spec());
        report =
            run_eval(train, test, world.provider(), world.store(), light, temp, cfg, &std::cerr);
    }

    fs::create_directories(out_dir);
    save_eval_report(report, out_dir / "report.csv", out_dir / "report.json");
    write_run_json(out_dir, "eval",
                   {{"world", jstr(world_dir.string())},
                    {"light_model", jstr(light_path)},
                    {"temp_model", jstr(temp_path)},
                    {"seed", std::to_string(cfg.seed)},
                    {"day_stride", std::to_string(cfg.day_stride)},
                    {"equinox_keep_days", std::to_string(cfg.equinox_keep_days)},
                    {"half_span_deg", detail::fmt_double(cfg.half_span_deg)},
                    {"grid_step_deg", detail::fmt_double(cfg.fine_step_deg)}});
    std::cout << "eval: " << report.n_evaluated << "/" << report.n_selected
              << " days evaluated, theta " << detail::fmt_double(report.baseline_theta)
              << " -> " << (out_dir / "report.csv").string() << "\n";
    return 0;
}

int usage(std::ostream& out) {
    out << "usage: lumitrack <command> [--flag value ...]\n"
           "\n"
           "commands:\n"
           "  synth          generate a synthetic sensor world\n"
           "                 --out-dir DIR [--seed N] [--sensors N] [--stations N]\n"
           "                 [--days N] [--start-date YYYY-MM-DD]\n"
           "                 [--region latlo,lathi,lonlo,lonhi] [--cloud-strength X]\n"
           "  build-dataset  split a world and emit training record files\n"
           "                 --world DIR --out-dir DIR [--seed N] [--ratio X] [--stride N]\n"
           "  train          fit one discriminator from a record file\n"
           "                 --dataset FILE --which light|temp --out-dir DIR\n"
           "                 [--epochs N] [--batch-size N] [--lr X] [--seed N]\n"
           "  localize       likelihood rasters + estimate for one sensor-day\n"
           "                 --log FILE --weather FILE --light-model FILE --temp-model FILE\n"
           "                 --date YYYY-MM-DD --ref lat,lon --out-dir DIR\n"
           "                 [--half-span D] [--grid-step D] [--sensor ID]\n"
           "  eval           bucketed MAE report over a world's test split\n"
           "                 --world DIR --light-model FILE|oracle --temp-model FILE|oracle\n"
           "                 --out-dir DIR [--train-manifest F --test-manifest F]\n"
           "                 [--split-seed N] [--ratio X] [--stride N] [--equinox-keep N]\n"
           "                 [--half-span D] [--grid-step D] [--hemisphere north|south]\n"
           "                 [--seed N]\n"
           "\n"
           "exit codes: 0 ok, 2 bad input, 3 insufficient coverage, 4 numerical failure\n";
    return 0;
}

int fail(ExitCode code, const char* kind, std::string msg) {
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << kind << ": " << msg << "\n";
    return static_cast<int>(code);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) {
            usage(std::cerr);
            return static_cast<int>(ExitCode::input);
        }
        const std::string cmd = argv[1];
        if (cmd == "--help" || cmd == "-h" || cmd == "help") return usage(std::cout);
        if (cmd == "synth")
            return cmd_synth(parse_flags(argc, argv,
                                         {"out-dir", "seed", "sensors", "stations", "days",
                                          "start-date", "region", "cloud-strength"}));
        if (cmd == "build-dataset")
            return cmd_build_dataset(
                parse_flags(argc, argv, {"world", "out-dir", "seed", "ratio", "stride"}));
        if (cmd == "train")
            return cmd_train(parse_flags(argc, argv,
                                         {"dataset", "which", "out-dir", "epochs",
                                          "batch-size", "lr", "seed"}));
        if (cmd == "localize")
            return cmd_localize(parse_flags(argc, argv,
                                            {"log", "weather", "light-model", "temp-model",
                                             "date", "ref", "out-dir", "half-span",
                                             "grid-step", "sensor"}));
        if (cmd == "eval")
            return cmd_eval(parse_flags(argc, argv,
                                        {"world", "light-model", "temp-model", "out-dir",
                                         "train-manifest", "test-manifest", "split-seed",
                                         "ratio", "stride", "equinox-keep", "half-span",
                                         "grid-step", "hemisphere", "seed"}));
        throw input_error("cli: unknown command '" + cmd + "' (see --help)");
    } catch (const input_error& e) {
        return fail(ExitCode::input, "input", e.what());
    } catch (const coverage_error& e) {
        return fail(ExitCode::coverage, "coverage", e.what());
    } catch (const numeric_error& e) {
        return fail(ExitCode::numeric, "numeric", e.what());
    } catch (const std::exception& e) {
        return fail(ExitCode::input, "input", e.what());
    }
}
