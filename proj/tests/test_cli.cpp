#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "lumitrack/sensor_io.hpp"

using namespace lumitrack;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

const fs::path& scratch() {
    static const fs::path dir = [] {
        const auto d = fs::temp_directory_path() / "lt_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

CmdResult run_cli(const std::string& args) {
    static const std::string bin = [] {
#ifdef LUMITRACK_CLI_PATH
        return std::string(LUMITRACK_CLI_PATH);
#else
        const char* p = std::getenv("LUMITRACK_CLI_PATH");
        if (!p) throw std::runtime_error("LUMITRACK_CLI_PATH not set");
        return std::string(p);
#endif
    }();
    const auto outp = scratch() / "cmd.out";
    const auto errp = scratch() / "cmd.err";
    const std::string full = "'" + bin + "' " + args + " >'" + outp.string() + "' 2>'" +
                             errp.string() + "'";
    const int raw = std::system(full.c_str());
    CmdResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(outp);
    r.err = slurp(errp);
    return r;
}

void must(const CmdResult& r, const std::string& what) {
    if (r.code != 0)
        throw std::runtime_error("pipeline step failed (" + what + "): " + r.err);
}

// one small world driven through the whole pipeline, shared by all cases
struct Pipeline {
    fs::path world, ds, models;
};

const Pipeline& pipe() {
    static const Pipeline p = [] {
        Pipeline q;
        q.world = scratch() / "world";
        q.ds = scratch() / "ds";
        q.models = scratch() / "models";
        std::cerr << "[cli] building pipeline fixture\n";
        must(run_cli("synth --out-dir '" + q.world.string() +
                     "' --sensors 4 --days 16 --start-date 2018-09-12"
                     " --region 31,39,-102,-92 --cloud-strength 0.3 --seed 4242"),
             "synth");
        must(run_cli("build-dataset --world '" + q.world.string() + "' --out-dir '" +
                     q.ds.string() + "' --seed 99 --ratio 0.75"),
             "build-dataset");
        must(run_cli("train --dataset '" + (q.ds / "light.ds").string() +
                     "' --which light --out-dir '" + q.models.string() +
                     "' --epochs 3 --seed 11"),
             "train light");
        must(run_cli("train --dataset '" + (q.ds / "temp.ds").string() +
                     "' --which temp --out-dir '" + q.models.string() +
                     "' --epochs 40 --seed 12"),
             "train temp");
        return q;
    }();
    return p;
}

std::string eval_args(const Pipeline& p, const std::string& out_dir,
                      const std::string& models = {}) {
    const std::string light =
        models.empty() ? (p.models / "light_model.bin").string() : models;
    const std::string temp =
        models.empty() ? (p.models / "temp_model.bin").string() : models;
    return "eval --world '" + p.world.string() + "' --light-model '" + light +
           "' --temp-model '" + temp + "' --out-dir '" + out_dir +
           "' --split-seed 99 --ratio 0.75";
}

const fs::path& baseline_eval() {
    static const fs::path dir = [] {
        const auto d = scratch() / "ev";
        must(run_cli(eval_args(pipe(), d.string())), "eval");
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("help and usage errors") {
    const auto help = run_cli("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("usage: lumitrack") != std::string::npos);
    CHECK(help.out.find("exit codes:") != std::string::npos);

    CHECK(run_cli("").code == 2);
    const auto unk = run_cli("frobnicate");
    CHECK(unk.code == 2);
    CHECK(unk.err.find("error: input:") == 0);
    CHECK(run_cli("synth --bogus 1").code == 2);
    CHECK(run_cli("synth").code == 2);  // missing --out-dir
    CHECK(run_cli("synth --out-dir x --seed notanumber").code == 2);
    CHECK(run_cli("synth --out-dir x --start-date 2018-13-01").code == 2);
    CHECK(run_cli("localize --log a --weather b --light-model c --temp-model d"
                  " --date 2018-09-20 --ref 95,-200 --out-dir x")
              .code == 2);
}

TEST_CASE("synth writes a complete world directory") {
    const auto& p = pipe();
    CHECK(fs::exists(p.world / "manifest.csv"));
    CHECK(fs::exists(p.world / "weather.csv"));
    CHECK(fs::exists(p.world / "run.json"));
    std::ifstream m(p.world / "manifest.csv");
    const auto manifest = parse_manifest(m);
    CHECK(manifest.size() == 64);
    for (const auto& row : manifest)
        CHECK(fs::exists(p.world / "sensors" / (row.sensor_id + ".csv")));
    const auto run = slurp(p.world / "run.json");
    CHECK(run.find("\"command\": \"synth\"") != std::string::npos);
    CHECK(run.find("\"seed\": 4242") != std::string::npos);
}

TEST_CASE("build-dataset splits by sensor and records provenance") {
    const auto& p = pipe();
    CHECK(fs::exists(p.ds / "light.ds"));
    CHECK(fs::exists(p.ds / "light.ds.json"));
    CHECK(fs::exists(p.ds / "temp.ds"));
    CHECK(fs::exists(p.ds / "temp.ds.json"));

    std::ifstream tr(p.ds / "train_manifest.csv"), te(p.ds / "test_manifest.csv");
    const auto train = parse_manifest(tr);
    const auto test = parse_manifest(te);
    CHECK(train.size() == 48);
    CHECK(test.size() == 16);
    std::set<std::string> train_ids, test_ids;
    for (const auto& r : train) train_ids.insert(r.sensor_id);
    for (const auto& r : test) test_ids.insert(r.sensor_id);
    CHECK(train_ids.size() == 3);
    CHECK(test_ids.size() == 1);
    for (const auto& id : test_ids) CHECK(!train_ids.count(id));
}

TEST_CASE("train writes a loadable model and a report") {
    const auto& p = pipe();
    CHECK(fs::exists(p.models / "light_model.bin"));
    CHECK(fs::exists(p.models / "temp_model.bin"));
    const auto rep = slurp(p.models / "light_train_report.json");
    CHECK(rep.find("\"epochs\": 3") != std::string::npos);
    CHECK(rep.find("\"seed\": 11") != std::string::npos);
    CHECK(rep.find("\"history\": [") != std::string::npos);

    // dataset/spec mismatch is rejected up front
    const auto swap = run_cli("train --dataset '" + (p.ds / "temp.ds").string() +
                              "' --which light --out-dir '" + (scratch() / "x").string() +
                              "' --epochs 1");
    CHECK(swap.code == 2);
    CHECK(swap.err.find("does not fit") != std::string::npos);
}

TEST_CASE("localize emits rasters and an in-bounds estimate") {
    const auto& p = pipe();
    std::ifstream tr(p.ds / "train_manifest.csv");
    const auto train = parse_manifest(tr);
    const auto& row = train.at(8);
    std::ostringstream ref;
    ref << detail::fmt_double(row.truth.lat) << "," << detail::fmt_double(row.truth.lon);

    const auto out_dir = scratch() / "loc";
    const auto r = run_cli("localize --log '" +
                           (p.world / "sensors" / (row.sensor_id + ".csv")).string() +
                           "' --weather '" + (p.world / "weather.csv").string() +
                           "' --light-model '" + (p.models / "light_model.bin").string() +
                           "' --temp-model '" + (p.models / "temp_model.bin").string() +
                           "' --date " + format_date(row.date) + " --ref " + ref.str() +
                           " --out-dir '" + out_dir.string() + "'");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("estimate " + row.sensor_id) == 0);

    const std::string stem = row.sensor_id + "_" + format_date(row.date);
    for (const auto* suffix : {"_light.pgm", "_light.csv", "_temp.pgm", "_temp.csv",
                               "_fused.pgm", "_fused.csv", "_estimate.json"})
        CHECK(fs::exists(out_dir / (stem + suffix)));

    const auto est = slurp(out_dir / (stem + "_estimate.json"));
    CHECK(est.find("\"sensor\": \"" + row.sensor_id + "\"") != std::string::npos);
    const auto at = est.find("\"estimate\": [");
    REQUIRE(at != std::string::npos);
    double lat = 0, lon = 0;
    REQUIRE(std::sscanf(est.c_str() + at, "\"estimate\": [%lf, %lf]", &lat, &lon) == 2);
    CHECK(std::abs(lat - row.truth.lat) <= 10.0);
    CHECK(std::abs(lon - row.truth.lon) <= 10.0);

    // a date the log does not cover is a coverage failure, not a crash
    const auto miss = run_cli("localize --log '" +
                              (p.world / "sensors" / (row.sensor_id + ".csv")).string() +
                              "' --weather '" + (p.world / "weather.csv").string() +
                              "' --light-model '" + (p.models / "light_model.bin").string() +
                              "' --temp-model '" + (p.models / "temp_model.bin").string() +
                              "' --date 2019-03-01 --ref " + ref.str() + " --out-dir '" +
                              out_dir.string() + "'");
    CHECK(miss.code == 3);
    CHECK(miss.err.find("error: coverage:") == 0);
}

TEST_CASE("eval produces a bucketed report; oracle models give zero error") {
    const auto& p = pipe();
    const auto& ev = baseline_eval();
    CHECK(fs::exists(ev / "report.csv"));
    CHECK(fs::exists(ev / "report.json"));

    std::istringstream csv(slurp(ev / "report.csv"));
    std::string line;
    REQUIRE(std::getline(csv, line));
    CHECK(line == "bucket,method,lat_mae_deg,lon_mae_deg,n_days");
    int rows = 0, baseline = 0, light = 0, fused = 0;
    while (std::getline(csv, line)) {
        ++rows;
        baseline += line.find(",baseline,") != std::string::npos;
        light += line.find(",light,") != std::string::npos;
        fused += line.find(",fused,") != std::string::npos;
    }
    CHECK(rows >= 3);
    CHECK(baseline == light);
    CHECK(light == fused);

    const auto evo = scratch() / "evo";
    const auto o = run_cli(eval_args(p, evo.string(), "oracle"));
    REQUIRE(o.code == 0);
    std::istringstream ocsv(slurp(evo / "report.csv"));
    REQUIRE(std::getline(ocsv, line));
    int odays = 0;
    while (std::getline(ocsv, line)) {
        CHECK(line.find(",oracle,0,0,") != std::string::npos);
        std::size_t at = line.rfind(',');
        odays += std::stoi(line.substr(at + 1));
    }
    CHECK(odays == 16);

    // half oracle is a contradiction
    const auto mix = run_cli("eval --world '" + p.world.string() +
                             "' --light-model oracle --temp-model '" +
                             (p.models / "temp_model.bin").string() + "' --out-dir '" +
                             (scratch() / "evmix").string() + "'");
    CHECK(mix.code == 2);
}

TEST_CASE("eval accepts explicit train/test manifests") {
    const auto& p = pipe();
    const auto ev = scratch() / "ev_manifests";
    const auto r = run_cli(eval_args(p, ev.string()) + " --train-manifest '" +
                           (p.ds / "train_manifest.csv").string() + "' --test-manifest '" +
                           (p.ds / "test_manifest.csv").string() + "'");
    REQUIRE(r.code == 0);
    // same sets as the seeded split, so the same report
    CHECK(slurp(ev / "report.csv") == slurp(baseline_eval() / "report.csv"));
    CHECK(slurp(ev / "report.json") == slurp(baseline_eval() / "report.json"));

    const auto lonely = run_cli(eval_args(p, (scratch() / "ev_bad").string()) +
                                " --train-manifest '" +
                                (p.ds / "train_manifest.csv").string() + "'");
    CHECK(lonely.code == 2);
}

TEST_CASE("reruns are byte-identical and inputs stay untouched") {
    const auto& p = pipe();
    const auto manifest_before = slurp(p.world / "manifest.csv");
    const auto log_before = slurp(p.world / "sensors" / "s0000.csv");

    const auto ds2 = scratch() / "ds2";
    must(run_cli("build-dataset --world '" + p.world.string() + "' --out-dir '" +
                 ds2.string() + "' --seed 99 --ratio 0.75"),
         "build-dataset rerun");
    CHECK(slurp(ds2 / "light.ds") == slurp(p.ds / "light.ds"));
    CHECK(slurp(ds2 / "temp.ds") == slurp(p.ds / "temp.ds"));
    CHECK(slurp(ds2 / "light.ds.json") == slurp(p.ds / "light.ds.json"));
    CHECK(slurp(ds2 / "temp.ds.json") == slurp(p.ds / "temp.ds.json"));
    CHECK(slurp(ds2 / "train_manifest.csv") == slurp(p.ds / "train_manifest.csv"));

    const auto m2 = scratch() / "models2";
    must(run_cli("train --dataset '" + (p.ds / "light.ds").string() +
                 "' --which light --out-dir '" + m2.string() + "' --epochs 3 --seed 11"),
         "train rerun");
    CHECK(slurp(m2 / "light_model.bin") == slurp(p.models / "light_model.bin"));
    CHECK(slurp(m2 / "light_train_report.json") ==
          slurp(p.models / "light_train_report.json"));

    const auto ev2 = scratch() / "ev2";
    must(run_cli(eval_args(p, ev2.string())), "eval rerun");
    CHECK(slurp(ev2 / "report.csv") == slurp(baseline_eval() / "report.csv"));
    CHECK(slurp(ev2 / "report.json") == slurp(baseline_eval() / "report.json"));

    CHECK(slurp(p.world / "manifest.csv") == manifest_before);
    CHECK(slurp(p.world / "sensors" / "s0000.csv") == log_before);
}
