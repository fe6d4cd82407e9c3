#include "vigil/csv.hpp"
#include "vigil/digest.hpp"
#include "vigil/error.hpp"
#include "vigil/report.hpp"
#include "vigil/syntax.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <tuple>

namespace vigil {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot read " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<fs::path> python_files(const fs::path& root) {
    if (fs::is_regular_file(root)) return {root};
    if (!fs::is_directory(root)) throw InputError("scan target not found: " + root.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().extension() == ".py") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

using VulnKey = std::tuple<std::string, std::size_t>;
using HalluKey = std::tuple<std::string, std::string, std::size_t>;

struct FileFindings {
    std::set<VulnKey> vulns;
    std::set<HalluKey> hallus;
};

// labels.json: {"files": {relpath: {"vulnerabilities": [{"cwe", "line"}],
//   "hallucinations": [{"kind", "symbol", "line"}]}}}
std::map<std::string, FileFindings> read_labels(const fs::path& p) {
    std::map<std::string, FileFindings> out;
    try {
        const json j = json::parse(slurp(p));
        for (const auto& [file, entry] : j.at("files").items()) {
            FileFindings f;
            for (const auto& v : entry.value("vulnerabilities", json::array())) {
                f.vulns.emplace(v.at("cwe").get<std::string>(), v.at("line").get<std::size_t>());
            }
            for (const auto& h : entry.value("hallucinations", json::array())) {
                f.hallus.emplace(h.at("kind").get<std::string>(), h.at("symbol").get<std::string>(),
                                 h.at("line").get<std::size_t>());
            }
            out.emplace(file, std::move(f));
        }
    } catch (const json::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
    return out;
}

std::vector<std::vector<double>> read_numeric_columns(const fs::path& p, const std::vector<std::string>& wanted,
                                                      std::vector<std::string>* labels, const std::string& label_col) {
    const auto rows = csv::parse(slurp(p));
    if (rows.empty()) throw InputError(p.string() + ": empty CSV");
    auto index_of = [&](const std::string& name) {
        const auto it = std::find(rows[0].begin(), rows[0].end(), name);
        if (it == rows[0].end()) throw InputError(p.string() + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - rows[0].begin());
    };
    std::vector<std::size_t> idx;
    for (const auto& w : wanted) idx.push_back(index_of(w));
    const std::size_t label_idx = labels ? index_of(label_col) : 0;
    std::vector<std::vector<double>> cols(wanted.size());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() == 1 && rows[r][0].empty()) continue;
        if (rows[r].size() != rows[0].size()) {
            throw InputError(p.string() + ": row " + std::to_string(r + 1) + " has the wrong number of fields");
        }
        for (std::size_t c = 0; c < idx.size(); ++c) {
            const std::string& cell = rows[r][idx[c]];
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cell.size()) {
                throw InputError(p.string() + ": row " + std::to_string(r + 1) + ": '" + cell + "' is not a number");
            }
            cols[c].push_back(v);
        }
        if (labels) labels->push_back(rows[r][label_idx]);
    }
    return cols;
}

void print_metrics_table(const MetricTable& table, std::ostream& out) {
    out << metrics_csv(table);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"vigil: security and reliability evaluation harness for code-generating models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    auto* evaluate = app.add_subcommand("evaluate", "Run the full experiment grid");
    std::string eval_config, eval_output;
    std::size_t eval_workers = 0;
    evaluate->add_option("--config", eval_config, "RunConfig JSON file")->required();
    evaluate->add_option("--output", eval_output, "Output directory (overrides output_dir)");
    evaluate->add_option("--workers", eval_workers, "Parallel grid workers (overrides workers)");

    auto* scan = app.add_subcommand("scan", "Detect vulnerabilities and hallucinations in a file or directory");
    std::string scan_target, scan_registry, scan_kb, scan_labels;
    bool scan_json = false;
    scan->add_option("path", scan_target, "Python file or directory")->required();
    scan->add_option("--registry", scan_registry, "Rule registry JSON (default: built-in baseline)");
    scan->add_option("--kb", scan_kb, "Knowledge base JSON; hallucination checks are skipped without it");
    scan->add_option("--check-labels", scan_labels, "labels.json to compare findings against");
    scan->add_flag("--json", scan_json, "Emit JSON");

    auto* simulate = app.add_subcommand("simulate", "Run an agent episode");
    std::string sim_config, sim_trace;
    std::optional<std::size_t> sim_steps;
    std::optional<std::uint64_t> sim_seed;
    simulate->add_option("--config", sim_config, "Episode config JSON")->required();
    simulate->add_option("--steps", sim_steps, "Override n_steps");
    simulate->add_option("--seed", sim_seed, "Override the policy seed");
    simulate->add_option("--trace", sim_trace, "Write the trace as JSON lines");

    auto* stats_cmd = app.add_subcommand("stats", "ANOVA, Tukey HSD and fits over a CSV file");
    std::string stats_kind, stats_input, col_group = "group", col_value = "value", col_x = "x", col_y = "y";
    double stats_alpha = 0.05;
    stats_cmd->add_option("analysis", stats_kind, "anova | tukey | regress | powerlaw")
        ->required()
        ->check(CLI::IsMember({"anova", "tukey", "regress", "powerlaw"}));
    stats_cmd->add_option("--input", stats_input, "CSV file with a header row")->required();
    stats_cmd->add_option("--group", col_group, "Group column (anova, tukey)");
    stats_cmd->add_option("--value", col_value, "Value column (anova, tukey)");
    stats_cmd->add_option("--x", col_x, "x column (regress; level column for powerlaw)");
    stats_cmd->add_option("--y", col_y, "y column (regress; count column for powerlaw)");
    stats_cmd->add_option("--alpha", stats_alpha, "Significance level for tukey");

    auto* report = app.add_subcommand("report", "Re-emit reports from a results.json bundle");
    std::string report_results, report_output;
    report->add_option("--results", report_results, "results.json from a previous evaluate")->required();
    report->add_option("--output", report_output, "Output directory")->required();

    auto* verify = app.add_subcommand("verify", "Check a manifest or an audit trace");
    std::string verify_dir, verify_trace;
    verify->add_option("--dir", verify_dir, "Output directory holding manifest.json");
    verify->add_option("--trace", verify_trace, "Trace file (JSON lines)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (*evaluate) {
            RunConfig cfg = load_run_config(eval_config);
            if (!eval_output.empty()) cfg.output_dir = eval_output;
            if (eval_workers > 0) cfg.workers = eval_workers;
            const ResultsBundle bundle = run_grid(cfg);
            const MetricTable table = aggregate_metrics(bundle);
            const auto files = emit_reports(table, bundle, cfg.output_dir);
            print_metrics_table(table, out);
            out << "wrote " << files.size() << " files to " << cfg.output_dir.string() << "\n";
            return 0;
        }

        if (*scan) {
            const RuleRegistry registry = scan_registry.empty() ? RuleRegistry::baseline() : load_registry(scan_registry);
            std::optional<KnowledgeBase> kb;
            if (!scan_kb.empty()) kb = load_kb(scan_kb);
            const fs::path root(scan_target);
            const bool is_dir = fs::is_directory(root);
            std::map<std::string, FileFindings> found;
            json report_json = json::array();
            for (const auto& file : python_files(root)) {
                const std::string rel = is_dir ? fs::relative(file, root).generic_string() : file.filename().string();
                const syntax::SourceTree tree = syntax::parse_source(slurp(file));
                const auto vulns = scan_vulns(tree, registry);
                const auto hallus = kb ? detect_hallucinations(tree, *kb) : std::vector<HalluFinding>{};
                FileFindings& ff = found[rel];
                json jv = json::array(), jh = json::array();
                for (const auto& v : vulns) {
                    ff.vulns.emplace(v.cwe_id, v.span.start);
                    jv.push_back({{"line", v.span.start},
                                  {"cwe", v.cwe_id},
                                  {"severity", to_string(v.severity)},
                                  {"rule_id", v.rule_id},
                                  {"evidence", v.evidence}});
                    if (!scan_json) {
                        out << rel << ":" << v.span.start << ": " << v.cwe_id << " " << to_string(v.severity) << " "
                            << v.rule_id << " " << v.evidence << "\n";
                    }
                }
                for (const auto& h : hallus) {
                    ff.hallus.emplace(std::string(to_string(h.kind)), h.symbol, h.span.start);
                    jh.push_back({{"line", h.span.start}, {"kind", to_string(h.kind)}, {"symbol", h.symbol}});
                    if (!scan_json) out << rel << ":" << h.span.start << ": " << to_string(h.kind) << " " << h.symbol << "\n";
                }
                report_json.push_back({{"file", rel},
                                       {"loc", tree.loc},
                                       {"severity_score", severity_score(vulns)},
                                       {"vulnerabilities", jv},
                                       {"hallucinations", jh}});
            }
            if (!kb) err << "note: no --kb given; hallucination checks skipped\n";
            if (scan_json) out << report_json.dump(2) << "\n";
            if (!scan_labels.empty()) {
                const auto labels = read_labels(scan_labels);
                std::size_t mismatches = 0;
                std::set<std::string> names;
                for (const auto& [f, _] : labels) names.insert(f);
                for (const auto& [f, _] : found) names.insert(f);
                for (const auto& name : names) {
                    const FileFindings empty;
                    const auto li = labels.find(name);
                    const auto fi = found.find(name);
                    const FileFindings& want = li == labels.end() ? empty : li->second;
                    const FileFindings& got = fi == found.end() ? empty : fi->second;
                    if (fi == found.end()) {
                        err << "label mismatch: " << name << " was not scanned\n";
                        ++mismatches;
                        continue;
                    }
                    if (want.vulns != got.vulns || want.hallus != got.hallus) {
                        err << "label mismatch: " << name << "\n";
                        ++mismatches;
                    }
                }
                out << "labels: " << (names.size() - mismatches) << "/" << names.size() << " files match\n";
                if (mismatches > 0) return 1;
            }
            return 0;
        }

        if (*simulate) {
            EpisodeConfig cfg = load_episode_config(sim_config);
            if (sim_steps) {
                if (*sim_steps == 0) throw InputError("--steps must be >= 1");
                cfg.n_steps = *sim_steps;
            }
            if (sim_seed) cfg.policy.seed = *sim_seed;
            AgentSession session(cfg.layout, cfg.constraints, cfg.policy);
            const EpisodeResult r = run_episode(session, cfg.n_steps, cfg.recovery);
            if (!sim_trace.empty()) {
                std::ofstream t(sim_trace, std::ios::binary | std::ios::trunc);
                if (!t) throw std::runtime_error("cannot write " + sim_trace);
                for (const auto& line : trace_to_lines(r.trace)) t << line << "\n";
            }
            json j = metrics_to_json(r.metrics);
            j["chain_head"] = session.head_hash();
            j["digest"] = kDigestName;
            out << j.dump(2) << "\n";
            return 0;
        }

        if (*stats_cmd) {
            json j;
            if (stats_kind == "anova" || stats_kind == "tukey") {
                std::vector<std::string> groups;
                const auto cols = read_numeric_columns(stats_input, {col_value}, &groups, col_group);
                stats::GroupedSamples samples;
                for (std::size_t i = 0; i < groups.size(); ++i) samples[groups[i]].push_back(cols[0][i]);
                if (stats_kind == "anova") {
                    const auto a = stats::anova_oneway(samples);
                    j = {{"f_stat", a.f_stat},           {"df_between", a.df_between}, {"df_within", a.df_within},
                         {"ss_between", a.ss_between},   {"ss_within", a.ss_within},   {"ms_between", a.ms_between},
                         {"ms_within", a.ms_within},     {"p_value", a.p_value}};
                } else {
                    const auto t = stats::tukey_hsd(samples, stats_alpha);
                    json pairs = json::array();
                    for (const auto& p : t.pairs) {
                        pairs.push_back({{"a", p.a}, {"b", p.b}, {"mean_diff", p.mean_diff}, {"q", p.q},
                                         {"p_value", p.p_value}, {"significant", p.significant}});
                    }
                    j = {{"k", t.k}, {"df_within", t.df_within}, {"alpha", t.alpha}, {"q_critical", t.q_critical},
                         {"pairs", pairs}};
                }
            } else if (stats_kind == "regress") {
                const auto cols = read_numeric_columns(stats_input, {col_x, col_y}, nullptr, "");
                const auto f = stats::linear_regression(cols[0], cols[1]);
                j = {{"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}, {"n", f.n}};
            } else {
                const std::string lx = col_x == "x" ? "level" : col_x;
                const std::string ly = col_y == "y" ? "count" : col_y;
                const auto cols = read_numeric_columns(stats_input, {lx, ly}, nullptr, "");
                std::map<int, double> hist;
                for (std::size_t i = 0; i < cols[0].size(); ++i) {
                    hist[static_cast<int>(cols[0][i])] += cols[1][i];
                }
                const auto f = stats::power_law_fit(hist);
                j = {{"k", f.k}, {"alpha", f.alpha}, {"r_squared", f.r_squared}, {"levels_used", f.levels_used}};
            }
            out << j.dump(2) << "\n";
            return 0;
        }

        if (*report) {
            const fs::path results(report_results);
            json j;
            try {
                j = json::parse(slurp(results));
            } catch (const json::parse_error& e) {
                throw InputError(results.string() + ": " + e.what());
            }
            const ResultsBundle bundle = bundle_from_json(j, results.parent_path());
            const MetricTable table = aggregate_metrics(bundle);
            const auto files = emit_reports(table, bundle, report_output);
            print_metrics_table(table, out);
            out << "wrote " << files.size() << " files to " << report_output << "\n";
            return 0;
        }

        if (*verify) {
            if (verify_dir.empty() == verify_trace.empty()) throw InputError("verify needs exactly one of --dir or --trace");
            if (!verify_dir.empty()) {
                const auto bad = verify_manifest(verify_dir);
                for (const auto& b : bad) out << "MISMATCH " << b << "\n";
                out << (bad.empty() ? "manifest ok\n" : "manifest FAILED\n");
                return bad.empty() ? 0 : 1;
            }
            std::istringstream lines(slurp(verify_trace));
            std::vector<std::string> raw;
            for (std::string line; std::getline(lines, line);) raw.push_back(line);
            const ChainVerdict v = verify_trace_lines(raw);
            if (v.valid) {
                out << "chain ok (" << raw.size() << " records)\n";
                return 0;
            }
            out << "chain broken at record " << v.first_broken << "\n";
            return 1;
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const BackendError& e) {
        err << "backend error: " << e.what() << "\n";
        if (!e.diagnostics().empty()) err << e.diagnostics() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace vigil
