#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

// CLI_BINARY is injected by the build; every test drives the real tool.
const std::string kCli = CLI_BINARY;

struct RunResult {
    int exit_code = -1;
    std::string stdout_text;
};

RunResult run(const std::string& args) {
    const fs::path out_file =
        fs::temp_directory_path() / "plsprune_cli_stdout.txt";
    const std::string cmd =
        kCli + " " + args + " > " + out_file.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(raw);
    std::ifstream in(out_file);
    r.stdout_text.assign((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("plsprune_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Small fast settings shared by the workflow tests.
const std::string kDataArgs =
    " --samples 600 --seed 11 --height 10 --width 10";
const std::string kTrainArgs = kDataArgs + " --epochs 2 --filters 4 6";

}  // namespace

TEST_CASE("missing required inputs exit with code 2") {
    CHECK(run("prune --samples 100").exit_code == 2);
    CHECK(run("compare --samples 100").exit_code == 2);
    CHECK(run("train --data idx --out /tmp/x").exit_code == 2);
    CHECK(run("report /nonexistent/report.json").exit_code == 2);
    CHECK(run("").exit_code == 2);           // subcommand required
    CHECK(run("--help").exit_code == 0);
}

TEST_CASE("train -> prune -> report round trip") {
    TempDir tmp;
    const std::string out = (tmp.path / "run").string();

    const RunResult train =
        run("train --out " + out + kTrainArgs);
    CHECK(train.exit_code == 0);
    CHECK(train.stdout_text.find("held-out accuracy") != std::string::npos);
    CHECK(fs::exists(tmp.path / "run/model.json"));
    CHECK(fs::exists(tmp.path / "run/train_log.json"));

    const RunResult prune = run(
        "prune --model " + out + "/model.json --out " + out + "/prune" +
        kDataArgs + " --iterations 2 --ft-epochs 1 --pls-sample-fraction 0.5");
    CHECK(prune.exit_code == 0);
    CHECK(fs::exists(tmp.path / "run/prune/report.json"));
    CHECK(fs::exists(tmp.path / "run/prune/report.csv"));
    CHECK(fs::exists(tmp.path / "run/prune/per_layer.csv"));
    CHECK(fs::exists(tmp.path / "run/prune/layer_flops.csv"));
    CHECK(fs::exists(tmp.path / "run/prune/pruned_model.json"));
    CHECK(fs::exists(tmp.path / "run/prune/scores_it1.csv"));
    CHECK(fs::exists(tmp.path / "run/prune/scores_it2.csv"));
    CHECK(fs::exists(tmp.path / "run/prune/plan_it1.json"));

    const auto report_json = nlohmann::json::parse(
        slurp(tmp.path / "run/prune/report.json"));
    CHECK(report_json.at("iterations").size() == 2);
    CHECK(report_json.at("aborted").get<bool>() == false);

    const RunResult report =
        run("report " + out + "/prune/report.json --out " + out + "/summary");
    CHECK(report.exit_code == 0);
    CHECK(report.stdout_text.find("per-layer removal") != std::string::npos);
    CHECK(fs::exists(tmp.path / "run/summary/report.csv"));
    CHECK(slurp(tmp.path / "run/summary/report.csv") ==
          slurp(tmp.path / "run/prune/report.csv"));
}

TEST_CASE("identical invocations write identical outputs") {
    TempDir tmp;
    const std::string out = (tmp.path / "a").string();
    REQUIRE(run("train --out " + out + kTrainArgs)
                .exit_code == 0);
    const std::string p1 = "prune --model " + out + "/model.json" + kDataArgs +
                           " --iterations 1 --ft-epochs 1"
                           " --pls-sample-fraction 0.5 --out ";
    REQUIRE(run(p1 + out + "/r1").exit_code == 0);
    REQUIRE(run(p1 + out + "/r2").exit_code == 0);
    CHECK(slurp(tmp.path / "a/r1/report.json") ==
          slurp(tmp.path / "a/r2/report.json"));
    CHECK(slurp(tmp.path / "a/r1/pruned_model.json") ==
          slurp(tmp.path / "a/r2/pruned_model.json"));
    CHECK(slurp(tmp.path / "a/r1/scores_it1.csv") ==
          slurp(tmp.path / "a/r2/scores_it1.csv"));
}

TEST_CASE("criterion flag switches the scorer") {
    TempDir tmp;
    const std::string out = (tmp.path / "c").string();
    REQUIRE(run("train --out " + out + kTrainArgs)
                .exit_code == 0);
    const RunResult res = run("prune --model " + out + "/model.json" +
                              kDataArgs +
                              " --iterations 1 --ft-epochs 1 --criterion l1"
                              " --out " + out + "/l1");
    CHECK(res.exit_code == 0);
    const std::string scores = slurp(tmp.path / "c/l1/scores_it1.csv");
    CHECK(scores.find(",l1,") != std::string::npos);
    const auto report_json =
        nlohmann::json::parse(slurp(tmp.path / "c/l1/report.json"));
    CHECK(report_json.at("config").at("criterion") == "l1");
}

TEST_CASE("single mode produces a one-row report") {
    TempDir tmp;
    const std::string out = (tmp.path / "s").string();
    REQUIRE(run("train --out " + out + kTrainArgs)
                .exit_code == 0);
    const RunResult res = run("prune --model " + out + "/model.json" +
                              kDataArgs +
                              " --mode single --ratio 0.4 --ft-epochs 1"
                              " --pls-sample-fraction 0.5 --out " + out +
                              "/single");
    CHECK(res.exit_code == 0);
    const auto report_json =
        nlohmann::json::parse(slurp(tmp.path / "s/single/report.json"));
    CHECK(report_json.at("iterations").size() == 1);
    CHECK(report_json.at("config").at("mode") == "single");
    // floor(0.4 * 10 filters) = 4 removed
    CHECK(report_json.at("iterations")[0].at("removed_count") == 4);
}

TEST_CASE("compare emits three criterion rows from one checkpoint") {
    TempDir tmp;
    const std::string out = (tmp.path / "k").string();
    REQUIRE(run("train --out " + out + kTrainArgs)
                .exit_code == 0);
    const RunResult res = run("compare --model " + out + "/model.json" +
                              kDataArgs +
                              " --ft-epochs 1 --pls-sample-fraction 0.5"
                              " --out " + out + "/cmp");
    CHECK(res.exit_code == 0);
    for (const char* name : {"pls", "l1", "apoz"}) {
        CHECK(res.stdout_text.find(name) != std::string::npos);
    }
    const std::string csv = slurp(tmp.path / "k/cmp/criteria.csv");
    std::size_t lines = 0;
    for (char c : csv) lines += c == '\n';
    CHECK(lines == 4);
    CHECK(csv.find("pls,") != std::string::npos);
}

TEST_CASE("config file values are overridden by flags") {
    TempDir tmp;
    const fs::path cfg = tmp.path / "cfg.json";
    {
        std::ofstream out(cfg);
        out << R"({"seed": 3, "out": ")" << (tmp.path / "fromfile").string()
            << R"(", "data": {"samples": 500, "height": 10, "width": 10},
                 "train": {"epochs": 1}, "model": {"filters": [4, 6]}})";
    }
    REQUIRE(run("train --config " + cfg.string()).exit_code == 0);
    CHECK(fs::exists(tmp.path / "fromfile/model.json"));

    REQUIRE(run("train --config " + cfg.string() + " --out " +
                (tmp.path / "fromflag").string())
                .exit_code == 0);
    CHECK(fs::exists(tmp.path / "fromflag/model.json"));
}
