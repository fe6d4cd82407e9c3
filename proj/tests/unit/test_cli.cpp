#include "oracles.hpp"

#include "vigil/report.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <unistd.h>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "vigil");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = vigil::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string src(const std::string& rel) { return oracle::source_path(rel).string(); }

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vigil-cli-" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Cli, VersionAndUsage) {
    EXPECT_EQ(cli({"--version"}).code, 0);
    EXPECT_EQ(cli({}).code, 1);
    EXPECT_EQ(cli({"bogus"}).code, 1);
    EXPECT_EQ(cli({"evaluate"}).code, 1);
}

TEST(Cli, ScanLabeledCorpus) {
    const auto r = cli({"scan", src("tests/fixtures/labeled"), "--registry", src("data/rules.json"), "--kb",
                        src("data/seed_kb.json"), "--check-labels", src("tests/fixtures/labeled/labels.json")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("labels: 24/24 files match"), std::string::npos);
    const auto j = cli({"scan", src("tests/fixtures/labeled/vuln_sql_concat.py"), "--json"});
    EXPECT_EQ(j.code, 0);
    EXPECT_TRUE(json::accept(j.out));
}

TEST(Cli, MissingInputsExitOne) {
    EXPECT_EQ(cli({"evaluate", "--config", "/nonexistent.json"}).code, 1);
    EXPECT_EQ(cli({"simulate", "--config", "/nonexistent.json"}).code, 1);
    EXPECT_EQ(cli({"stats", "anova", "--input", "/nonexistent.csv"}).code, 1);
    EXPECT_EQ(cli({"verify"}).code, 1);
}

TEST(Cli, SimulateWritesVerifiableTrace) {
    const fs::path dir = scratch("sim");
    const auto trace = (dir / "t.jsonl").string();
    const auto r = cli({"simulate", "--config", src("data/episodes/code_freeze.json"), "--steps", "50", "--trace", trace});
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = json::parse(r.out);
    EXPECT_EQ(j.at("n_total"), 50);
    EXPECT_EQ(cli({"verify", "--trace", trace}).code, 0);
    std::string text = oracle::read_file(trace);
    text[text.size() / 2] ^= 0x01;
    std::ofstream(trace, std::ios::binary | std::ios::trunc) << text;
    EXPECT_NE(cli({"verify", "--trace", trace}).code, 0);
    const auto again = cli({"simulate", "--config", src("data/episodes/code_freeze.json"), "--steps", "50"});
    EXPECT_EQ(json::parse(again.out).at("chain_head"), j.at("chain_head"));
}

TEST(Cli, StatsSubcommands) {
    const fs::path dir = scratch("stats");
    std::ofstream(dir / "g.csv") << "group,value\na,1\na,2\na,3\nb,2\nb,3\nb,4\n";
    std::ofstream(dir / "xy.csv") << "x,y\n1,3\n2,5\n3,7\n";
    std::ofstream(dir / "pl.csv") << "level,count\n1,8\n2,2.2973967099940698\n3,1.1073163907693486\n";
    const auto a = cli({"stats", "anova", "--input", (dir / "g.csv").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_NEAR(json::parse(a.out).at("f_stat").get<double>(), 1.5, 1e-12);
    const auto t = cli({"stats", "tukey", "--input", (dir / "g.csv").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_EQ(json::parse(t.out).at("pairs").size(), 1u);
    const auto g = cli({"stats", "regress", "--input", (dir / "xy.csv").string()});
    EXPECT_NEAR(json::parse(g.out).at("slope").get<double>(), 2.0, 1e-12);
    const auto p = cli({"stats", "powerlaw", "--input", (dir / "pl.csv").string()});
    EXPECT_NEAR(json::parse(p.out).at("alpha").get<double>(), 1.8, 1e-9);
    EXPECT_EQ(cli({"stats", "anova", "--input", (dir / "xy.csv").string()}).code, 1);
}

TEST(Cli, EvaluateReportVerifyRoundTrip) {
    const fs::path dir = scratch("eval");
    json cfg = json::parse(oracle::read_file(oracle::source_path("data/grid_config.json")));
    const fs::path data = oracle::source_path("data");
    for (const char* key : {"corpus", "mock_bank", "registry", "kb"}) cfg[key] = (data / cfg[key].get<std::string>()).string();
    for (auto& e : cfg["agentsim"]["episodes"]) e = (data / e.get<std::string>()).string();
    cfg["sampling"]["k"] = 4;
    cfg["trials"] = 1;
    cfg["output_dir"] = "out";
    std::ofstream(dir / "config.json") << cfg.dump(2);
    const auto e = cli({"evaluate", "--config", (dir / "config.json").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
    EXPECT_EQ(cli({"verify", "--dir", (dir / "out").string()}).code, 0);
    const auto r = cli({"report", "--results", (dir / "out" / "results.json").string(), "--output", (dir / "re").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(oracle::read_file(dir / "out" / "manifest.json"), oracle::read_file(dir / "re" / "manifest.json"));
    std::ofstream(dir / "out" / "stats.json", std::ios::app) << " ";
    EXPECT_NE(cli({"verify", "--dir", (dir / "out").string()}).code, 0);
}

TEST(Cli, BinaryExitCodes) {
    EXPECT_EQ(std::system((std::string(VIGIL_CLI_PATH) + " --version > /dev/null").c_str()), 0);
    EXPECT_NE(std::system((std::string(VIGIL_CLI_PATH) + " evaluate --config /nonexistent 2> /dev/null").c_str()), 0);
}
