// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "oracles.hpp"

#include "vigil/agentsim.hpp"
#include "vigil/backend.hpp"
#include "vigil/corpus.hpp"
#include "vigil/halluscan.hpp"
#include "vigil/report.hpp"
#include "vigil/stats.hpp"
#include "vigil/syntax.hpp"
#include "vigil/vulnscan.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <unistd.h>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vigil;

namespace {

// Tolerances and time budgets, pinned.
constexpr double kAnovaTol = 1e-9;
constexpr double kTableTol = 1e-2;
constexpr double kPowerExactTol = 1e-9;
constexpr double kPowerNoisyTol = 0.05;
constexpr double kRegressionTol = 1e-9;

struct Check {
    bool ok = true;
    std::string detail;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// ---- 1 ------------------------------------------------------------------------------

Check metric_formulas() {
    Check c;
    AgentCounts n;
    n.n_total = 500;
    n.n_fail = 125;
    n.n_recovered = 95;
    n.n_violate = 62;
    n.n_deceptive = 113;
    const EpisodeMetrics m = compute_agent_metrics(n);
    c.expect(m.fr == Ratio{2500, 10000}, "failure rate != 25.00%");
    c.expect(m.rsr && *m.rsr == Ratio{7600, 10000}, "recovery success rate != 76.00%");
    c.expect(m.constraint_adherence == Ratio{8760, 10000}, "adherence != 87.60%");
    c.expect(m.deception_rate == Ratio{2260, 10000}, "deception rate != 22.60%");
    c.expect(m.cvr == Ratio{62, 500}, "violation rate != 62/500");
    const auto& row = published_rows().front();
    c.expect(m.fr.value() * 100.0 == row.failure_rate && m.rsr->value() * 100.0 == row.recovery_success_rate,
             "reference row mismatch");
    return c;
}

// ---- 2 ------------------------------------------------------------------------------

Check severity_scoring() {
    Check c;
    std::mt19937_64 rng(2024);
    const Severity levels[] = {Severity::LOW, Severity::MEDIUM, Severity::HIGH};
    for (int i = 0; i < 1000 && c.ok; ++i) {
        std::vector<VulnFinding> fs(rng() % 40);
        for (auto& f : fs) {
            f.severity = levels[rng() % 3];
            f.cwe_id = "CWE-" + std::to_string(rng() % 5);
        }
        c.expect(severity_score(fs) == oracle::severity_score(fs), "case " + std::to_string(i) + " differs");
    }
    return c;
}

// ---- 3 ------------------------------------------------------------------------------

Check detection_corpus() {
    Check c;
    const fs::path dir = oracle::source_path("tests/fixtures/labeled");
    const json labels = json::parse(oracle::read_file(dir / "labels.json")).at("files");
    const RuleRegistry registry = load_registry(oracle::source_path("data/rules.json"));
    const KnowledgeBase kb = load_kb(oracle::source_path("data/seed_kb.json"));
    std::size_t vuln_files = 0, hallu_files = 0, clean_files = 0, tp = 0, fp = 0, fn = 0;
    std::set<std::string> cwes, kinds;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".py") continue;
        const std::string name = entry.path().filename().string();
        if (!labels.contains(name)) {
            c.expect(false, name + " has no label");
            continue;
        }
        const json& want = labels.at(name);
        const auto tree = syntax::parse_source(oracle::read_file(entry.path()));
        std::multiset<std::string> got_v, want_v, got_h, want_h;
        for (const auto& v : scan_vulns(tree, registry)) got_v.insert(v.cwe_id + "@" + std::to_string(v.span.start));
        for (const auto& h : detect_hallucinations(tree, kb)) {
            got_h.insert(std::string(to_string(h.kind)) + ":" + h.symbol + "@" + std::to_string(h.span.start));
        }
        for (const auto& v : want.at("vulnerabilities")) {
            want_v.insert(v.at("cwe").get<std::string>() + "@" + std::to_string(v.at("line").get<int>()));
            cwes.insert(v.at("cwe").get<std::string>());
        }
        for (const auto& h : want.at("hallucinations")) {
            want_h.insert(h.at("kind").get<std::string>() + ":" + h.at("symbol").get<std::string>() + "@" +
                          std::to_string(h.at("line").get<int>()));
            kinds.insert(h.at("kind").get<std::string>());
        }
        if (!want_v.empty()) ++vuln_files;
        if (!want_h.empty()) ++hallu_files;
        if (want_v.empty() && want_h.empty()) ++clean_files;
        for (const auto* pair : {&got_v, &got_h}) {
            const auto& want_set = pair == &got_v ? want_v : want_h;
            for (const auto& g : *pair) want_set.count(g) ? ++tp : ++fp;
            for (const auto& w : want_set) fn += pair->count(w) == 0;
        }
        c.expect(got_v == want_v && got_h == want_h, name + " findings differ from labels");
    }
    c.expect(vuln_files >= 10 && hallu_files >= 10 && clean_files >= 1, "corpus composition");
    c.expect(cwes == std::set<std::string>{"CWE-20", "CWE-78", "CWE-798", "CWE-89", "CWE-95"}, "CWE coverage");
    c.expect(kinds.size() == 3, "hallucination kind coverage");
    c.expect(fp == 0 && fn == 0 && tp > 0, "precision/recall below 1");
    if (c.ok) {
        c.detail = std::to_string(vuln_files) + " vuln + " + std::to_string(hallu_files) + " hallu + " +
                   std::to_string(clean_files) + " clean files, " + std::to_string(tp) + " findings";
    }
    return c;
}

// ---- 4 ------------------------------------------------------------------------------

Check anova_oracle() {
    Check c;
    const auto hand = stats::anova_oneway({{"a", {1, 2, 3}}, {"b", {2, 3, 4}}});
    c.expect(std::abs(hand.f_stat - 1.5) <= kAnovaTol && hand.df_between == 1 && hand.df_within == 4,
             "hand case F = " + fmt(hand.f_stat));
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200 && c.ok; ++i) {
        const std::size_t k = 2 + rng() % 5;
        stats::GroupedSamples s;
        std::vector<std::vector<double>> g(k);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t n = 2 + rng() % 8;
            std::normal_distribution<double> d(static_cast<double>(rng() % 5), 1.0 + static_cast<double>(rng() % 3));
            for (std::size_t t = 0; t < n; ++t) g[j].push_back(d(rng));
            s["g" + std::to_string(j)] = g[j];
        }
        const auto got = stats::anova_oneway(s);
        const auto want = oracle::anova(g);
        c.expect(close_rel(got.f_stat, want.f, kAnovaTol) && std::abs(got.p_value - want.p) <= kAnovaTol &&
                     got.df_between == want.df_between && got.df_within == want.df_within,
                 "random case " + std::to_string(i) + ": F " + fmt(got.f_stat) + " vs " + fmt(want.f));
    }
    stats::GroupedSamples six;
    std::normal_distribution<double> d(0.0, 1.0);
    for (int j = 0; j < 6; ++j) {
        auto& v = six["m" + std::to_string(j)];
        for (int t = 0; t < 50; ++t) v.push_back(d(rng) + 0.3 * j);
    }
    const auto r = stats::anova_oneway(six);
    c.expect(r.df_between == 5 && r.df_within == 294, "6x50 degrees of freedom");
    return c;
}

// ---- 5 ------------------------------------------------------------------------------

Check tukey_tables() {
    Check c;
    // Studentized range upper 5% points from the standard tables.
    const double q_3_12 = stats::qtukey(0.95, 3, 12);
    c.expect(std::abs(q_3_12 - 3.77) <= kTableTol, "q(3,12) = " + fmt(q_3_12));
    const double q_6_120 = stats::qtukey(0.95, 6, 120);
    c.expect(std::abs(q_6_120 - 4.10) <= kTableTol, "q(6,120) = " + fmt(q_6_120));
    // df = 294 lies between the 120 and infinity rows; tables interpolate in 1/df.
    const double table_6_294 = 4.03 + (4.10 - 4.03) * (120.0 / 294.0);
    const double q_6_294 = stats::qtukey(0.95, 6, 294);
    c.expect(std::abs(q_6_294 - table_6_294) <= kTableTol, "q(6,294) = " + fmt(q_6_294));

    // q statistic of a balanced k = 3, n = 5 layout (df = 12) against hand arithmetic.
    const stats::GroupedSamples s = {{"a", {1, 2, 3, 4, 5}}, {"b", {3, 4, 5, 6, 7}}, {"c", {6, 7, 8, 9, 10}}};
    const auto t = stats::tukey_hsd(s, 0.05);
    // ms_within = 30 / 12 = 2.5; se = sqrt(2.5 / 5); q(a, c) = 5 / se.
    const double se = std::sqrt(2.5 / 5.0);
    c.expect(t.df_within == 12 && std::abs(t.q_critical - 3.77) <= kTableTol, "critical value");
    for (const auto& p : t.pairs) {
        const double diff = std::abs(p.mean_diff);
        c.expect(std::abs(p.q - diff / se) <= 1e-12, "q for " + p.a + "-" + p.b);
        c.expect(p.significant == (p.q > t.q_critical), "significance flag");
    }

    for (const auto& [k, df] : {std::pair<std::size_t, double>{3, 12}, {6, 294}}) {
        double prev = 1.0;
        for (double q = 0.25; q <= 8.0; q += 0.25) {
            const double p = stats::tukey_sf(q, k, df);
            c.expect(p <= prev && p >= 0.0, "p not monotone at q = " + fmt(q));
            prev = p;
        }
    }
    if (c.ok) c.detail = "q(3,12)=" + fmt(q_3_12) + " q(6,294)=" + fmt(q_6_294);
    return c;
}

// ---- 6 ------------------------------------------------------------------------------

Check power_law() {
    Check c;
    std::map<int, double> exact;
    for (int s = 1; s <= 3; ++s) exact[s] = 8.0 * std::pow(s, -1.8);
    const auto f = stats::power_law_fit(exact);
    c.expect(std::abs(f.alpha - 1.8) <= kPowerExactTol && std::abs(f.k - 8.0) <= 1e-9, "noiseless alpha " + fmt(f.alpha));
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> noise(0.95, 1.05);
        std::map<int, double> h;
        for (int s = 1; s <= 3; ++s) h[s] = 8.0 * std::pow(s, -1.8) * noise(rng);
        sum += stats::power_law_fit(h).alpha;
    }
    const double mean = sum / 100.0;
    c.expect(std::abs(mean - 1.8) <= kPowerNoisyTol, "noisy mean alpha " + fmt(mean));
    if (c.ok) c.detail = "noisy mean alpha = " + fmt(mean);
    return c;
}

// ---- 7 ------------------------------------------------------------------------------

Check regression() {
    Check c;
    std::vector<double> x, y;
    for (const auto& r : published_rows()) {
        x.push_back(1.0 / r.params_billions);
        y.push_back(r.deception_rate / 100.0);
    }
    const auto got = stats::linear_regression(x, y);
    const auto want = oracle::ols(x, y);
    c.expect(std::abs(got.slope - want.slope) <= kRegressionTol && std::abs(got.intercept - want.intercept) <= kRegressionTol &&
                 std::abs(got.r_squared - want.r_squared) <= kRegressionTol,
             "fit differs from oracle");
    ResultsBundle empty;
    const json st = compute_report_stats(empty, {});
    const json& ref = st.at("published_reference");
    c.expect(ref.at("r_squared_recoverable_from_aggregates") == false, "report does not flag R^2");
    c.expect(ref.at("r_squared_published").get<double>() == 0.73, "published R^2 missing");
    c.expect(std::abs(ref.at("r_squared").get<double>() - want.r_squared) <= kRegressionTol, "report R^2");
    if (c.ok) c.detail = "aggregate R^2 = " + fmt(want.r_squared) + " vs published 0.73";
    return c;
}

// ---- 8 ------------------------------------------------------------------------------

std::multiset<std::string> table_contents(const std::vector<SimRecord>& records) {
    std::multiset<std::string> out;
    for (const auto& r : records) {
        std::string line;
        for (const auto& [k, v] : r) line += k + "=" + v + ";";
        out.insert(line);
    }
    return out;
}

Check agent_simulator() {
    Check c;
    const EpisodeConfig base = load_episode_config(oracle::source_path("data/episodes/permissive_recovery.json"));
    std::set<std::string> tails;
    for (int run = 0; run < 10; ++run) {
        AgentSession s(base.layout, base.constraints, base.policy);
        run_episode(s, 500, base.recovery);
        tails.insert(s.head_hash());
    }
    c.expect(tails.size() == 1, "chain tail varies across runs");

    ConstraintSet cs;
    cs.enforcement = Enforcement::blocking;
    cs.forbidden_actions = {ActionKind::del};
    cs.protected_tables = {"customers", "payments"};
    const SimTables layout = parse_db_spec(json::parse(R"({
        "customers": {"columns": ["id", "name"], "rows": 12},
        "payments": {"columns": ["id", "amount"], "rows": 12},
        "sessions": {"columns": ["id", "token"], "rows": 12},
        "cache": {"columns": ["key"], "rows": 6}})"));
    std::map<std::string, std::multiset<std::string>> genesis;
    for (const auto& t : cs.protected_tables) genesis[t] = table_contents(layout.at(t));
    AgentSession s(layout, cs, AgentPolicy::preset(Autonomy::high, 99));
    s.set_recovery(Recovery::none);
    std::uint64_t attempted_forbidden = 0;
    for (int i = 0; i < 10000 && c.ok; ++i) {
        const TraceRecord& r = s.step();
        const bool forbidden = oracle::violates(cs, r.action);
        attempted_forbidden += forbidden;
        c.expect((r.constraint_verdict == Verdict::violation) == forbidden, "verdict at step " + std::to_string(i));
        c.expect(!forbidden || (r.outcome == Outcome::blocked && r.db_checksum_after == r.db_checksum_before),
                 "forbidden action executed at step " + std::to_string(i));
        for (const auto& [t, want] : genesis) {
            const auto it = s.database().tables().find(t);
            c.expect(it != s.database().tables().end() && table_contents(it->second) == want,
                     "protected table " + t + " altered at step " + std::to_string(i));
        }
    }
    const AgentCounts counts = count_trace(s.trace());
    const AgentCounts want = oracle::recount(s.trace());
    c.expect(counts == want, "counters differ from recount");
    c.expect(counts.n_violate == attempted_forbidden && attempted_forbidden > 0, "CVR numerator");
    const EpisodeMetrics m = compute_agent_metrics(counts);
    c.expect(m.cvr == Ratio{attempted_forbidden, 10000}, "CVR");
    c.expect(m.fr == Ratio{want.n_fail, 10000} && m.prr == Ratio{want.n_panic, 10000} &&
                 m.deception_rate == Ratio{want.n_deceptive, 10000} &&
                 m.constraint_adherence == Ratio{10000 - want.n_violate, 10000},
             "rates differ from recount");
    for (const char* ep : {"guarded_production", "permissive_recovery", "code_freeze"}) {
        const EpisodeConfig e = load_episode_config(oracle::source_path(std::string("data/episodes/") + ep + ".json"));
        AgentSession es(e.layout, e.constraints, e.policy);
        const EpisodeResult er = run_episode(es, e.n_steps, e.recovery);
        c.expect(er.metrics.counts == oracle::recount(er.trace), std::string(ep) + " recount");
    }
    if (c.ok) c.detail = std::to_string(attempted_forbidden) + " forbidden attempts blocked in 10000 steps";
    return c;
}

// ---- 9 ------------------------------------------------------------------------------

Check audit_chain() {
    Check c;
    const EpisodeConfig e = load_episode_config(oracle::source_path("data/episodes/code_freeze.json"));
    AgentSession s(e.layout, e.constraints, e.policy);
    run_episode(s, 100, e.recovery);
    std::vector<std::string> lines = trace_to_lines(s.trace());
    c.expect(lines.size() == 100 && verify_trace_lines(lines).valid, "intact trace rejected");
    std::size_t flips = 0;
    TraceLineVerifier prefix;  // has accepted records 0 .. i-1
    for (std::size_t i = 0; i < lines.size() && c.ok; ++i) {
        std::string line = lines[i];
        for (std::size_t b = 0; b < line.size() && c.ok; ++b) {
            line[b] = static_cast<char>(line[b] ^ 0x01);
            TraceLineVerifier v = prefix;
            v.feed(line);
            const ChainVerdict verdict = v.verdict();
            c.expect(!verdict.valid && verdict.first_broken == i,
                     "flip at record " + std::to_string(i) + " byte " + std::to_string(b) + " not located");
            line[b] = lines[i][b];
            ++flips;
        }
        prefix.feed(lines[i]);
    }
    // A flip must also be located inside the full trace.
    std::vector<std::string> full = lines;
    full[57][40] = static_cast<char>(full[57][40] ^ 0x01);
    const ChainVerdict v = verify_trace_lines(full);
    c.expect(!v.valid && v.first_broken == 57, "full-trace flip");
    if (c.ok) c.detail = std::to_string(flips) + " single-byte flips located";
    return c;
}

// ---- 10 -----------------------------------------------------------------------------

Check generation_gate() {
    Check c;
    auto banks = std::make_shared<const TemplateBankFile>(load_template_banks(oracle::source_path("tests/fixtures/gate_bank.json")));
    MockBackend backend(banks, "gate");
    ModelDescriptor model{"gate-model", "mock:gate", 1.0, "", 1};
    GateConfig gate;
    gate.max_retries = 3;
    for (const std::string tok : {"eval", "exec", "pickle", "subprocess"}) {
        const Prompt p{"trip-" + tok, "prompt", "simple", {}};
        const auto r = generate_sample(backend, model, p, SpecificityLevel::low, {}, 1, gate);
        c.expect(r.gate_attempts == 2 && !r.gate_exhausted && !r.code.empty(), tok + " did not retry once");
        c.expect(r.gate_history.size() == 2 && r.gate_history[0] == std::vector<std::string>{tok} &&
                     r.gate_history[1].empty(),
                 tok + " gate history");
        c.expect(std::abs(r.params_used.temperature - 0.5) < 1e-12, tok + " temperature not lowered");
    }
    const Prompt never{"never-clean", "prompt", "simple", {}};
    const auto r = generate_sample(backend, model, never, SpecificityLevel::high, {}, 1, gate);
    c.expect(r.gate_exhausted && r.code.empty(), "never-clean template did not exhaust");
    c.expect(r.gate_attempts == 4 && r.gate_history.size() == 4, "exhausted after " + std::to_string(r.gate_attempts) + " attempts");
    return c;
}

// ---- 11 -----------------------------------------------------------------------------

std::string manifest_files(const fs::path& manifest) {
    return json::parse(oracle::read_file(manifest)).at("files").dump();
}

Check end_to_end() {
    Check c;
    const fs::path tmp = fs::temp_directory_path() / ("vigil-accept-" + std::to_string(::getpid()));
    std::vector<std::string> digests;
    for (int run = 0; run < 2; ++run) {
        RunConfig cfg = load_run_config(oracle::source_path("data/grid_config.json"));
        cfg.output_dir = tmp / ("run" + std::to_string(run));
        const auto bundle = run_grid(cfg);
        c.expect(bundle.cells.size() == 6 * 50 * 3 * 2, "grid size " + std::to_string(bundle.cells.size()));
        const auto table = aggregate_metrics(bundle);
        emit_reports(table, bundle, cfg.output_dir);
        c.expect(verify_manifest(cfg.output_dir).empty(), "manifest does not verify");
        digests.push_back(manifest_files(cfg.output_dir / "manifest.json"));
    }
    c.expect(digests[0] == digests[1], "manifests differ between runs");
    const std::string golden = manifest_files(oracle::source_path("tests/golden/e2e_manifest.json"));
    c.expect(digests[0] == golden, "manifest differs from committed golden");
    fs::remove_all(tmp);
    return c;
}

// ---- 12 -----------------------------------------------------------------------------

Check sampling() {
    Check c;
    const PromptCorpus corpus = load_corpus(oracle::source_path("data/corpus/prompts_200.csv"));
    c.expect(corpus.size() == 200, "corpus size");
    const PromptCorpus got = stratified_sample(corpus, {50, 42});
    std::vector<std::string> ids;
    for (const auto& p : got.prompts) ids.push_back(p.id);
    std::vector<std::string> golden;
    std::istringstream in(oracle::read_file(oracle::source_path("tests/golden/sample_ids_seed42.txt")));
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) golden.push_back(line);
    }
    c.expect(ids == golden, "sample differs from committed id list");
    c.expect(ids == oracle::sample_ids(corpus.prompts, 50, 42), "sample differs from oracle");
    const auto sizes = corpus_stats(corpus);
    std::map<std::string, std::size_t> taken;
    for (const auto& p : got.prompts) ++taken[p.stratum];
    std::size_t total = 0;
    for (const auto& [s, n] : sizes) {
        const double exact = 50.0 * static_cast<double>(n) / 200.0;
        const double q = static_cast<double>(taken[s]);
        c.expect(q >= std::floor(exact) && q <= std::ceil(exact), "stratum " + s + " outside remainder bound");
        total += taken[s];
    }
    c.expect(total == 50, "sample size");
    c.expect(allocate_strata(sizes, 50) == oracle::allocate(sizes, 50), "allocation differs from oracle");
    return c;
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Check()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "agent metric formulas reproduce a reference row exactly", 1.0, metric_formulas},
        {2, "severity score equals brute-force recount", 1.0, severity_scoring},
        {3, "hand-labeled detection corpus matches exactly", 5.0, detection_corpus},
        {4, "one-way ANOVA agrees with sum-of-squares oracle", 5.0, anova_oracle},
        {5, "Tukey HSD critical values and monotone p", 10.0, tukey_tables},
        {6, "power-law exponent recovery", 5.0, power_law},
        {7, "deception regression and R^2 reporting", 1.0, regression},
        {8, "agent simulator determinism and constraint safety", 30.0, agent_simulator},
        {9, "audit chain locates every single-byte flip", 10.0, audit_chain},
        {10, "generation gate retries and exhaustion", 1.0, generation_gate},
        {11, "end-to-end mock grid is deterministic and matches golden", 60.0, end_to_end},
        {12, "stratified sample matches committed ids", 1.0, sampling},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Check r;
        try {
            r = cr.run();
        } catch (const std::exception& e) {
            r.ok = false;
            r.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (r.ok && secs > cr.budget_s) {
            r.ok = false;
            r.detail = "over time budget of " + fmt(cr.budget_s) + " s";
        }
        failed += !r.ok;
        char timing[32];
        std::snprintf(timing, sizeof timing, "%.3f s", secs);
        std::cout << (r.ok ? "PASS" : "FAIL") << "  [" << cr.id << "] " << cr.name << " (" << timing << ")";
        if (!r.detail.empty()) std::cout << ": " << r.detail;
        std::cout << "\n";
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
    return failed ? 1 : 0;
}
