#include "oracles.hpp"

#include "vigil/error.hpp"
#include "vigil/report.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <unistd.h>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vigil;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vigil-report-" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

json small_config() {
    json j = json::parse(oracle::read_file(oracle::source_path("data/grid_config.json")));
    j["sampling"]["k"] = 6;
    j["trials"] = 1;
    j["models"] = json::array({j["models"][0], j["models"][5]});
    j["agentsim"]["episodes"] = json::array({"episodes/permissive_recovery.json"});
    return j;
}

RunConfig config_from(const json& j) { return parse_run_config(j, oracle::source_path("data")); }

}  // namespace

TEST(RunConfig, ResolvesPathsAndDefaults) {
    const auto c = config_from(small_config());
    EXPECT_EQ(c.corpus, oracle::source_path("data/corpus/prompts_200.csv"));
    EXPECT_EQ(c.models.size(), 2u);
    EXPECT_EQ(c.models[1].worker_index, 2u);
    EXPECT_EQ(c.specificity_levels.size(), 3u);
    EXPECT_EQ(c.max_retries, 3u);
    EXPECT_EQ(c.episodes.size(), 1u);
}

TEST(RunConfig, RejectsInvalid) {
    auto j = small_config();
    j["corpus"] = "corpus/missing.csv";
    try {
        config_from(j);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("missing.csv"), std::string::npos);
    }
    j = small_config();
    j.erase("mock_bank");
    EXPECT_THROW(config_from(j), InputError);
    j = small_config();
    j["models"].push_back(j["models"][0]);
    EXPECT_THROW(config_from(j), InputError);
    j = small_config();
    j["specificity_levels"] = {"low", "ultra"};
    EXPECT_THROW(config_from(j), InputError);
    j = small_config();
    j["trials"] = 0;
    EXPECT_THROW(config_from(j), InputError);
    j = small_config();
    j.erase("kb");
    EXPECT_THROW(config_from(j), InputError);
    EXPECT_THROW(load_run_config("/nonexistent/config.json"), InputError);
}

TEST(Grid, CellOrderSeedsAndWorkerIndependence) {
    auto cfg = config_from(small_config());
    const auto a = run_grid(cfg);
    ASSERT_EQ(a.cells.size(), 2u * 6 * 3);
    for (std::size_t i = 1; i < a.cells.size(); ++i) {
        const auto& p = a.cells[i - 1];
        const auto& q = a.cells[i];
        if (p.model == q.model) {
            EXPECT_LE(std::tie(p.prompt_id, p.specificity), std::tie(q.prompt_id, q.specificity));
        }
    }
    for (const auto& c : a.cells) EXPECT_EQ(c.seed, cell_seed(42, c.model, c.prompt_id, c.specificity, c.trial));
    cfg.workers = 3;
    const auto b = run_grid(cfg);
    EXPECT_EQ(bundle_to_json(a, aggregate_metrics(a)).dump(), bundle_to_json(b, aggregate_metrics(b)).dump());
}

TEST(Grid, UnknownMockBankIsInputError) {
    auto j = small_config();
    j["models"][1]["endpoint"] = "mock:no-such-bank";
    EXPECT_THROW(run_grid(config_from(j)), InputError);
}

TEST(Grid, BackendFailureMarksCellsErrored) {
    auto j = small_config();
    j["models"][1]["endpoint"] = "echo broken >&2; exit 3";
    const auto bundle = run_grid(config_from(j));
    const auto table = aggregate_metrics(bundle);
    ASSERT_EQ(table.size(), 2u);
    EXPECT_EQ(table[0].errored_cells, 0u);
    EXPECT_EQ(table[1].errored_cells, table[1].cells);
    EXPECT_FALSE(table[1].response_time.has_value());
    for (const auto& c : bundle.cells) {
        if (c.model == table[1].model) {
            EXPECT_TRUE(c.errored);
            EXPECT_NE(c.error.find("backend"), std::string::npos);
        }
    }
}

TEST(Aggregate, SumsOverCells) {
    const auto bundle = run_grid(config_from(small_config()));
    const auto table = aggregate_metrics(bundle);
    for (const auto& row : table) {
        std::uint64_t sev = 0, fab = 0;
        std::size_t loc = 0;
        for (const auto& c : bundle.cells) {
            if (c.model != row.model || c.errored) continue;
            sev += oracle::severity_score(c.vulns);
            loc += c.loc;
            for (const auto& h : c.hallucinations) fab += h.kind == HalluKind::FabricatedModule;
        }
        EXPECT_EQ(row.severity_total, sev);
        EXPECT_EQ(row.loc_total, loc);
        EXPECT_EQ(row.hallucinations_fabricated_module, fab);
        EXPECT_DOUBLE_EQ(row.vulnerability_density, loc ? static_cast<double>(sev) / static_cast<double>(loc) : 0.0);
        ASSERT_TRUE(row.agent);
        EXPECT_EQ(row.agent->counts.n_total, 200u);
    }
}

TEST(Emit, CsvColumnsManifestAndTamper) {
    const auto bundle = run_grid(config_from(small_config()));
    const auto table = aggregate_metrics(bundle);
    const std::string csv = metrics_csv(table);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "model,autonomous_failure_rate,deception_rate,recovery_success_rate,constraint_adherence,cwe_diversity,"
              "vulnerability_density,hallucinations_fabricated_module,hallucinations_fake_api,hallucinations_parameter,"
              "response_time_p50_ms,response_time_p95_ms,errored_cells");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    const fs::path out = scratch("emit");
    const auto files = emit_reports(table, bundle, out);
    EXPECT_TRUE(std::is_sorted(files.begin(), files.end()));
    for (const char* f : {"results.json", "metrics.csv", "stats.json", "manifest.json", "plots/heatmap.csv"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    EXPECT_TRUE(verify_manifest(out).empty());
    {
        std::ofstream o(out / "metrics.csv", std::ios::app);
        o << "x";
    }
    EXPECT_EQ(verify_manifest(out), std::vector<std::string>{"metrics.csv"});
}

TEST(Emit, ResultsRoundTripReproducesManifest) {
    const auto bundle = run_grid(config_from(small_config()));
    const fs::path a = scratch("a"), b = scratch("b");
    emit_reports(aggregate_metrics(bundle), bundle, a);
    const json j = json::parse(oracle::read_file(a / "results.json"));
    const auto again = bundle_from_json(j, a);
    emit_reports(aggregate_metrics(again), again, b);
    EXPECT_EQ(oracle::read_file(a / "manifest.json"), oracle::read_file(b / "manifest.json"));
}

TEST(Emit, TamperedTraceIsRejectedOnReload) {
    const auto bundle = run_grid(config_from(small_config()));
    const fs::path a = scratch("t");
    emit_reports(aggregate_metrics(bundle), bundle, a);
    const json j = json::parse(oracle::read_file(a / "results.json"));
    const fs::path trace = a / j.at("agents")[0].at("episodes")[0].at("trace_file").get<std::string>();
    std::string text = oracle::read_file(trace);
    text[text.find("\"note\":\"") + 8] = 'X';
    std::ofstream(trace, std::ios::binary | std::ios::trunc) << text;
    EXPECT_THROW(bundle_from_json(j, a), InputError);
}

TEST(Stats, ReportFlagsPublishedR2) {
    const auto bundle = run_grid(config_from(small_config()));
    const json s = compute_report_stats(bundle, aggregate_metrics(bundle));
    EXPECT_EQ(s.at("published_reference").at("r_squared_recoverable_from_aggregates"), false);
    EXPECT_EQ(s.at("published_reference").at("rows").size(), 6u);
    EXPECT_EQ(s.at("severity_anova").at("df_between"), 1);
    EXPECT_EQ(s.at("deception_vs_inverse_params").at("n"), 2);
}
