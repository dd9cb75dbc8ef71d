// End-to-end command-line behavior: exit codes, schema and scenario listings,
// bundle creation, byte-for-byte replay, and thread-count invariance.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "ergolab/pipeline.hpp"
#include "ergolab/report.hpp"

using namespace ergolab;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
    const char* env = std::getenv("ERGOLAB_BIN");
    return env && *env ? env : "./ergolab";
}

struct CmdResult {
    int code = -1;
    std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path cap = fs::path("runner-tmp") / ("cli-" + std::to_string(counter++) + ".log");
    fs::create_directories(cap.parent_path());
    const std::string cmd = cli_binary() + " " + args + " > " + cap.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    CmdResult res;
    res.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream in(cap);
    std::stringstream ss;
    ss << in.rdbuf();
    res.output = ss.str();
    return res;
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string small_run_config() {
    return "[run]\n"
           "scenario = ou-quadratic\n"
           "stages = check, simulate\n"
           "seed = 7\n"
           "[check]\n"
           "n_samples = 500\n"
           "[simulate]\n"
           "horizon = 2.0\n"
           "dt = 0.02\n"
           "n_paths = 400\n";
}

}  // namespace

TEST_CASE("schema prints machine-readable JSON") {
    const auto r = run_cli("schema");
    CHECK(r.code == 0);
    const auto js = nlohmann::json::parse(r.output);
    REQUIRE(js.contains("sections"));
    CHECK(js["sections"].is_array());
    CHECK(js["sections"].size() >= 4);
}

TEST_CASE("scenario listing names every registered model") {
    const auto r = run_cli("scenarios");
    CHECK(r.code == 0);
    for (const char* name : {"ou-quadratic", "lq-1d", "bounded-cost-1d", "periodic-1d",
                             "nondissipative-1d"})
        CHECK(r.output.find(name) != std::string::npos);
}

TEST_CASE("bad invocations exit with the input-error code") {
    CHECK(run_cli("run").code == 4);  // no config, no replay
    CHECK(run_cli("run does-not-exist.ini").code == 4);

    write_file("runner-tmp/unknown-key.ini",
               "[run]\nscenario = ou-quadratic\nbogus = 1\nstages = check\n");
    const auto r = run_cli("run runner-tmp/unknown-key.ini");
    CHECK(r.code == 4);
    CHECK(r.output.find("bogus") != std::string::npos);

    write_file("runner-tmp/no-stages.ini", "[run]\nscenario = ou-quadratic\nstages =\n");
    const auto r2 = run_cli("run runner-tmp/no-stages.ini");
    CHECK(r2.code == 4);
    CHECK(r2.output.find("no stages requested") != std::string::npos);

    write_file("runner-tmp/bad-scenario.ini", "[run]\nscenario = nope\nstages = check\n");
    CHECK(run_cli("run runner-tmp/bad-scenario.ini").code == 4);

    write_file("runner-tmp/ok.ini", small_run_config());
    const auto r3 = run_cli("run runner-tmp/ok.ini --replay some-manifest.json");
    CHECK(r3.code == 4);
    CHECK(r3.output.find("cannot be combined") != std::string::npos);
}

TEST_CASE("a failing structural check exits with the assumption code") {
    write_file("runner-tmp/nondis.ini",
               "[run]\nscenario = nondissipative-1d\nstages = check\n"
               "[check]\nn_samples = 500\n");
    const auto r = run_cli("run runner-tmp/nondis.ini --out runner-tmp/out-nondis");
    CHECK(r.code == 2);
    CHECK(r.output.find("structural checks") != std::string::npos);
}

TEST_CASE("a recorded run replays byte-for-byte and detects tampering") {
    fs::remove_all("runner-tmp/out-replay");
    write_file("runner-tmp/replay.ini", small_run_config());
    const auto r = run_cli("run runner-tmp/replay.ini --out runner-tmp/out-replay");
    CHECK(r.code == 0);
    CHECK(r.output.find("bundle:") != std::string::npos);

    const fs::path bundle = fs::path("runner-tmp/out-replay") / "ou-quadratic-s7";
    const fs::path manifest = bundle / "manifest.json";
    REQUIRE(fs::exists(manifest));

    const auto rep = run_cli("run --replay " + manifest.string());
    CHECK(rep.code == 0);
    CHECK(rep.output.find("byte-identical") != std::string::npos);

    // Flip bytes in a recorded output: the replay must refuse to certify.
    const fs::path victim = bundle / "assumptions.json";
    REQUIRE(fs::exists(victim));
    std::ofstream(victim, std::ios::binary | std::ios::app) << " ";
    const auto bad = run_cli("run --replay " + manifest.string());
    CHECK(bad.code == 3);
    CHECK(bad.output.find("differ") != std::string::npos);
}

TEST_CASE("pipeline outputs are identical across repeat runs and thread counts") {
    Config cfg = Config::parse_string(small_run_config(), "inline");
    const auto a = run_pipeline(cfg, "runner-tmp/det-a");
    const auto b = run_pipeline(cfg, "runner-tmp/det-b");
    Config cfg3 = cfg;
    cfg3.set("run", "threads", "3");
    const auto c = run_pipeline(cfg3, "runner-tmp/det-c");
    Config cfg1 = cfg;
    cfg1.set("run", "threads", "1");
    const auto d = run_pipeline(cfg1, "runner-tmp/det-d");

    const Manifest ma = parse_manifest(a.manifest_path);
    const Manifest mb = parse_manifest(b.manifest_path);
    const Manifest mc = parse_manifest(c.manifest_path);
    const Manifest md = parse_manifest(d.manifest_path);
    REQUIRE(!ma.outputs.empty());
    CHECK(ma.outputs == mb.outputs);
    CHECK(ma.outputs == mc.outputs);
    CHECK(ma.outputs == md.outputs);

    // Hash agreement is backed by the actual bytes as well.
    for (const auto& [rel, hash] : ma.outputs) {
        std::ifstream fa(fs::path("runner-tmp/det-a") / rel, std::ios::binary);
        std::ifstream fc(fs::path("runner-tmp/det-c") / rel, std::ios::binary);
        std::stringstream sa, sc;
        sa << fa.rdbuf();
        sc << fc.rdbuf();
        CHECK(sa.str() == sc.str());
    }
}
