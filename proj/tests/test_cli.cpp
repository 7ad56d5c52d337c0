#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "uspose/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("uspose_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

struct CmdResult {
    int status = -1;
    std::string output;
};

// Runs the real binary through the shell, merging stderr into stdout.
CmdResult run_cli(const std::string& args, const std::string& env_prefix = "env -u USPOSE_OUT_ROOT") {
    const std::string cmd = env_prefix + " " + std::string(USPOSE_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[4096];
    size_t n = 0;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int rc = pclose(pipe);
    CmdResult r;
    r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.output = std::move(out);
    return r;
}

std::string normalize(std::string text) {
    const std::string bin = USPOSE_CLI_PATH;
    for (size_t pos = text.find(bin); pos != std::string::npos; pos = text.find(bin, pos))
        text.replace(pos, bin.size(), "uspose");
    return text;
}

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

// History rows end in a wall-clock duration column; drop it before comparing.
std::string strip_durations(const std::string& csv) {
    std::string out;
    size_t start = 0;
    while (start < csv.size()) {
        size_t end = csv.find('\n', start);
        if (end == std::string::npos) end = csv.size();
        const std::string line = csv.substr(start, end - start);
        out += line.substr(0, line.rfind(','));
        out += '\n';
        start = end + 1;
    }
    return out;
}

fs::path repo_path(const char* rel) { return fs::path(USPOSE_REPO_ROOT) / rel; }

const char* tiny_spec_arg =
    "--set model.spec="
    "'{\"kind\":\"cnn\",\"classes\":3,\"layers\":["
    "{\"type\":\"conv1d\",\"out_channels\":4,\"kernel\":5,\"stride\":2,\"padding\":0},"
    "{\"type\":\"relu\"},{\"type\":\"flatten\"},{\"type\":\"dense\",\"out_features\":3}]}'";

// One tiny dataset shared by the cases that need real recordings on disk.
const fs::path& shared_dataset() {
    static TempDir dir;
    static bool made = false;
    if (!made) {
        const auto r = run_cli("synth --out " + (dir.path / "data").string() +
                               " --config " + repo_path("configs/synth_smoke.json").string());
        REQUIRE(r.status == 0);
        made = true;
    }
    static fs::path data = dir.path / "data";
    return data;
}

}  // namespace

TEST_CASE("help output matches the golden files") {
    const std::pair<const char*, const char*> targets[] = {
        {"", "help_root.txt"},           {"synth", "help_synth.txt"}, {"preprocess", "help_preprocess.txt"},
        {"train", "help_train.txt"},     {"eval", "help_eval.txt"},   {"hpo", "help_hpo.txt"},
        {"bench", "help_bench.txt"},     {"report", "help_report.txt"},
    };
    for (const auto& [sub, golden] : targets) {
        CAPTURE(golden);
        const std::string args = sub[0] ? std::string(sub) + " --help" : std::string("--help");
        const auto r = run_cli(args);
        CHECK(r.status == 0);
        CHECK(normalize(r.output) == uspose::io::read_text(repo_path("tests/golden") / golden));
    }
}

TEST_CASE("help enumerates config keys with code defaults") {
    const auto r = run_cli("train --help");
    REQUIRE(r.status == 0);
    CHECK(contains(r.output, "train.learning_rate = 0.003"));
    CHECK(contains(r.output, "train.scheduler.kind = \"none\""));
    CHECK(contains(r.output, "split.train = 0.6"));
    CHECK(contains(r.output, "model.name = \"udacnn_ref\""));
}

TEST_CASE("missing or unknown arguments fail with exit 1") {
    CHECK(run_cli("").status == 1);
    CHECK(run_cli("--bogus").status == 1);
    const auto r = run_cli("synth --bogus --out /tmp/never");
    CHECK(r.status == 1);
    CHECK(contains(r.output, "--bogus"));
}

TEST_CASE("config violations are all listed, not first-only") {
    const auto r = run_cli("train --out /tmp/never --set nonsense.key=1 --set train.epochs=oops");
    CHECK(r.status == 1);
    CHECK(contains(r.output, "nonsense.key"));
    CHECK(contains(r.output, "train.epochs"));
    CHECK(contains(r.output, "configuration errors"));
}

TEST_CASE("bad override shapes are reported") {
    const auto r = run_cli("train --out /tmp/never --set notanassignment --set train.seed.deep=1");
    CHECK(r.status == 1);
    CHECK(contains(r.output, "notanassignment"));
    CHECK(contains(r.output, "train.seed.deep"));
}

TEST_CASE("malformed config files are validation failures") {
    TempDir tmp;
    uspose::io::write_text(tmp.path / "broken.json", "{nope");
    const auto r = run_cli("synth --out /tmp/never --config " + (tmp.path / "broken.json").string());
    CHECK(r.status == 1);
    CHECK(contains(r.output, "broken.json"));

    const auto missing = run_cli("synth --out /tmp/never --config " + (tmp.path / "absent.json").string());
    CHECK(missing.status == 1);
    CHECK(contains(missing.output, "absent.json"));
}

TEST_CASE("unknown config file keys are rejected with the file named") {
    TempDir tmp;
    uspose::io::write_json(tmp.path / "c.json", {{"synth", {{"chanels", 4}}}});
    const auto r = run_cli("synth --out /tmp/never --config " + (tmp.path / "c.json").string());
    CHECK(r.status == 1);
    CHECK(contains(r.output, "unknown key 'synth.chanels'"));
    CHECK(contains(r.output, "c.json"));
}

TEST_CASE("output directory must come from --out or the environment") {
    const auto bare = run_cli("synth");
    CHECK(bare.status == 1);
    CHECK(contains(bare.output, "USPOSE_OUT_ROOT"));

    TempDir tmp;
    const auto rooted = run_cli("synth --config " + repo_path("configs/synth_smoke.json").string(),
                                "USPOSE_OUT_ROOT=" + tmp.path.string());
    CHECK(rooted.status == 0);
    CHECK(fs::exists(tmp.path / "synth" / "s01" / "ses01" / "rf.f32"));
}

TEST_CASE("non-empty output directories are protected unless forced") {
    TempDir tmp;
    const std::string args = "synth --config " + repo_path("configs/synth_smoke.json").string() + " --out " +
                             (tmp.path / "out").string();
    CHECK(run_cli(args).status == 0);
    const auto blocked = run_cli(args);
    CHECK(blocked.status == 1);
    CHECK(contains(blocked.output, "--force"));
    uspose::io::write_text(tmp.path / "out" / "stray.txt", "x");
    CHECK(run_cli(args + " --force").status == 0);
    CHECK_FALSE(fs::exists(tmp.path / "out" / "stray.txt"));
    CHECK(fs::exists(tmp.path / "out" / "s01" / "ses01" / "rf.f32"));
}

TEST_CASE("runtime data failures exit 2") {
    TempDir tmp;
    fs::create_directories(tmp.path / "empty");
    const auto r = run_cli("train --out " + (tmp.path / "out").string() + " --set data.path=" +
                           (tmp.path / "empty").string());
    CHECK(r.status == 2);
    CHECK(contains(r.output, "error"));
}

TEST_CASE("synth then train twice produces identical checkpoint digests") {
    TempDir tmp;
    const std::string common = std::string("train --set data.path=") + shared_dataset().string() + " " +
                               tiny_spec_arg + " --set train.epochs=3 --set train.batch_size=8 --out ";
    const auto a = run_cli(common + (tmp.path / "a").string());
    REQUIRE(a.status == 0);
    const auto b = run_cli(common + (tmp.path / "b").string());
    REQUIRE(b.status == 0);

    CHECK(uspose::io::read_text(tmp.path / "a" / "digests.txt") ==
          uspose::io::read_text(tmp.path / "b" / "digests.txt"));
    CHECK(uspose::io::read_bytes(tmp.path / "a" / "checkpoint" / "params.f64") ==
          uspose::io::read_bytes(tmp.path / "b" / "checkpoint" / "params.f64"));
    CHECK(contains(a.output, "checkpoint_digest"));
    CHECK(contains(a.output, "test_accuracy"));
    CHECK(fs::exists(tmp.path / "a" / "history.csv"));
}

TEST_CASE("eval reproduces the accuracy stored at train time") {
    TempDir tmp;
    const auto t = run_cli(std::string("train --set data.path=") + shared_dataset().string() + " " +
                           tiny_spec_arg + " --set train.epochs=3 --set train.batch_size=8 --out " +
                           (tmp.path / "run").string());
    REQUIRE(t.status == 0);
    const auto e = run_cli("eval --set data.path=" + shared_dataset().string() + " --set checkpoint=" +
                           (tmp.path / "run" / "checkpoint").string() + " --out " + (tmp.path / "eval").string());
    REQUIRE(e.status == 0);

    const json meta = uspose::io::read_json(tmp.path / "run" / "checkpoint" / "meta.json");
    const json eval = uspose::io::read_json(tmp.path / "eval" / "eval.json");
    CHECK(eval.at("test_accuracy").get<double>() ==
          doctest::Approx(meta.at("test_accuracy").get<double>()).epsilon(1e-12));
}

TEST_CASE("preprocess writes one input bundle per session") {
    TempDir tmp;
    const auto r = run_cli("preprocess --set data.path=" + shared_dataset().string() +
                           " --set preprocess.modality=envelope_rf --out " + (tmp.path / "prep").string());
    REQUIRE(r.status == 0);
    const json meta = uspose::io::read_json(tmp.path / "prep" / "s01" / "ses01" / "inputs.json");
    CHECK(meta.at("modality") == "envelope_rf");
    CHECK(meta.at("frames").get<int>() == 36);
    CHECK(meta.at("channels").get<int>() == 2);
    const auto flat = uspose::io::read_f32_le(tmp.path / "prep" / "s01" / "ses01" / "inputs.f32");
    CHECK(flat.size() == 36u * 2u * meta.at("length").get<size_t>());
}

TEST_CASE("bench smoke config writes a two cell report") {
    TempDir tmp;
    const auto r = run_cli("bench --config " + repo_path("configs/bench_smoke.json").string() + " --out " +
                           (tmp.path / "bench").string());
    REQUIRE(r.status == 0);
    CHECK(contains(r.output, "model ranking"));
    const json report = uspose::io::read_json(tmp.path / "bench" / "report.json");
    CHECK(report.at("cells").size() == 2);
    CHECK(fs::exists(tmp.path / "bench" / "cells.csv"));
    CHECK(fs::exists(tmp.path / "bench" / "report.txt"));

    const auto rendered = run_cli("report --set input=" + (tmp.path / "bench" / "report.json").string() +
                                  " --out " + (tmp.path / "rerender").string());
    CHECK(rendered.status == 0);
    CHECK(uspose::io::read_text(tmp.path / "rerender" / "report.txt") ==
          uspose::io::read_text(tmp.path / "bench" / "report.txt"));
}

TEST_CASE("hpo budget override yields exactly that many history rows") {
    TempDir tmp;
    const auto r = run_cli("hpo --set space_file=" + repo_path("configs/vit_space.json").string() +
                           " --set tpe.budget=20 --set tpe.warmup=5 --out " + (tmp.path / "hpo").string());
    REQUIRE(r.status == 0);
    std::ifstream csv(tmp.path / "hpo" / "history.csv");
    std::string line;
    int rows = 0;
    REQUIRE(std::getline(csv, line));
    CHECK(contains(line, "trial,"));
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 20);
    CHECK(fs::exists(tmp.path / "hpo" / "best.json"));
    CHECK(fs::exists(tmp.path / "hpo" / "importance.txt"));
    CHECK(uspose::io::read_json(tmp.path / "hpo" / "study.json").at("trials").size() == 20);
}

TEST_CASE("hpo studies are replayable") {
    TempDir tmp;
    const std::string common = "hpo --config " + repo_path("configs/hpo_smoke.json").string() +
                               " --set space_file=" + repo_path("configs/vit_space.json").string() + " --out ";
    const auto a = run_cli(common + (tmp.path / "a").string());
    REQUIRE(a.status == 0);
    const auto b = run_cli(common + (tmp.path / "b").string());
    REQUIRE(b.status == 0);
    CHECK(strip_durations(uspose::io::read_text(tmp.path / "a" / "history.csv")) ==
          strip_durations(uspose::io::read_text(tmp.path / "b" / "history.csv")));
    CHECK(uspose::io::read_json(tmp.path / "a" / "best.json") ==
          uspose::io::read_json(tmp.path / "b" / "best.json"));
}

TEST_CASE("shipped search spaces load") {
    TempDir tmp;
    const auto r = run_cli("hpo --set space_file=" + repo_path("configs/ausnet_space.json").string() +
                           " --set tpe.budget=8 --set tpe.warmup=4 --out " + (tmp.path / "aus").string());
    CHECK(r.status == 0);
    CHECK(contains(r.output, "8/8 trials completed"));
}
