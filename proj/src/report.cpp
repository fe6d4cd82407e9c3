#include "vigil/report.hpp"

#include "vigil/csv.hpp"
#include "vigil/digest.hpp"
#include "vigil/error.hpp"
#include "vigil/prng.hpp"
#include "vigil/syntax.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace vigil {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw InputError("cannot read " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json read_json(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw InputError(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + p.string());
}

std::string safe_name(std::string_view s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_';
    return out.empty() ? "_" : out;
}

ModelDescriptor parse_model(const json& jm) {
    ModelDescriptor m;
    m.name = jm.at("name").get<std::string>();
    m.endpoint = jm.at("endpoint").get<std::string>();
    m.param_count_billions = jm.at("param_count_billions").get<double>();
    m.quantization_tag = jm.value("quantization", std::string{});
    if (m.name.empty()) throw InputError("models: empty model name");
    if (!(m.param_count_billions > 0.0)) throw InputError("models: '" + m.name + "' needs param_count_billions > 0");
    return m;
}

json model_json(const ModelDescriptor& m) {
    return {{"name", m.name},
            {"endpoint", m.endpoint},
            {"param_count_billions", m.param_count_billions},
            {"quantization", m.quantization_tag},
            {"worker_index", m.worker_index}};
}

SpecificityLevel require_level(const json& j) {
    const auto s = j.get<std::string>();
    const auto l = parse_specificity(s);
    if (!l) throw InputError("unknown specificity level '" + s + "'");
    return *l;
}

json params_json(const GenerationParams& p) {
    return {{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}, {"seed", p.seed}};
}

GenerationParams params_from_json(const json& j) {
    GenerationParams p;
    p.temperature = j.at("temperature").get<double>();
    p.top_p = j.at("top_p").get<double>();
    p.max_tokens = j.at("max_tokens").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

json vuln_json(const VulnFinding& f) {
    return {{"rule_id", f.rule_id},
            {"cwe", f.cwe_id},
            {"severity", to_string(f.severity)},
            {"line_start", f.span.start},
            {"line_end", f.span.end},
            {"evidence", f.evidence}};
}

VulnFinding vuln_from_json(const json& j) {
    VulnFinding f;
    f.rule_id = j.at("rule_id").get<std::string>();
    f.cwe_id = j.at("cwe").get<std::string>();
    const auto sev = parse_severity(j.at("severity").get<std::string>());
    if (!sev) throw InputError("results: unknown severity");
    f.severity = *sev;
    f.span = {j.at("line_start").get<std::size_t>(), j.at("line_end").get<std::size_t>()};
    f.evidence = j.at("evidence").get<std::string>();
    return f;
}

std::optional<HalluKind> parse_hallu_kind(std::string_view s) {
    for (auto k : {HalluKind::FabricatedModule, HalluKind::FakeAPI, HalluKind::ParameterHallucination}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

json hallu_json(const HalluFinding& f) {
    return {{"kind", to_string(f.kind)},
            {"symbol", f.symbol},
            {"context", f.context},
            {"line_start", f.span.start},
            {"line_end", f.span.end}};
}

HalluFinding hallu_from_json(const json& j) {
    HalluFinding f;
    const auto kind = parse_hallu_kind(j.at("kind").get<std::string>());
    if (!kind) throw InputError("results: unknown hallucination kind");
    f.kind = *kind;
    f.symbol = j.at("symbol").get<std::string>();
    f.context = j.at("context").get<std::string>();
    f.span = {j.at("line_start").get<std::size_t>(), j.at("line_end").get<std::size_t>()};
    return f;
}

json counts_json(const AgentCounts& c) {
    return {{"n_total", c.n_total},         {"n_fail", c.n_fail},       {"n_violate", c.n_violate},
            {"n_recovered", c.n_recovered}, {"n_panic", c.n_panic},     {"n_deceptive", c.n_deceptive}};
}

AgentCounts counts_from_json(const json& j) {
    AgentCounts c;
    c.n_total = j.at("n_total").get<std::uint64_t>();
    c.n_fail = j.at("n_fail").get<std::uint64_t>();
    c.n_violate = j.at("n_violate").get<std::uint64_t>();
    c.n_recovered = j.at("n_recovered").get<std::uint64_t>();
    c.n_panic = j.at("n_panic").get<std::uint64_t>();
    c.n_deceptive = j.at("n_deceptive").get<std::uint64_t>();
    return c;
}

std::string trace_path(std::string_view model, std::string_view episode) {
    return "traces/" + safe_name(model) + "/" + safe_name(episode) + ".jsonl";
}

json fit_json(const stats::FitResult& f) {
    return {{"slope", f.slope},   {"intercept", f.intercept}, {"r_squared", f.r_squared},
            {"n", f.n},           {"ss_res", f.ss_res},       {"ss_tot", f.ss_tot},
            {"max_abs_residual", f.max_abs_residual}};
}

json summary_json(const stats::DistributionSummary& s) {
    return {{"n", s.n},     {"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min},
            {"p50", s.p50}, {"p95", s.p95},   {"max", s.max},       {"histogram", {{"lo", s.bins.lo}, {"hi", s.bins.hi}, {"counts", s.bins.counts}}}};
}

const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"autonomous_failure_rate", "deception_rate",
                                                   "recovery_success_rate",   "constraint_adherence",
                                                   "cwe_diversity",           "vulnerability_density"};
    return names;
}

std::optional<double> metric_value(const MetricRow& r, std::string_view name) {
    if (name == "autonomous_failure_rate") return r.agent ? std::optional(r.agent->fr.value()) : std::nullopt;
    if (name == "deception_rate") return r.agent ? std::optional(r.agent->deception_rate.value()) : std::nullopt;
    if (name == "recovery_success_rate") {
        return r.agent && r.agent->rsr ? std::optional(r.agent->rsr->value()) : std::nullopt;
    }
    if (name == "constraint_adherence") {
        return r.agent ? std::optional(r.agent->constraint_adherence.value()) : std::nullopt;
    }
    if (name == "panic_response_rate") return r.agent ? std::optional(r.agent->prr.value()) : std::nullopt;
    if (name == "cwe_diversity") return static_cast<double>(r.cwe_diversity);
    if (name == "vulnerability_density") return r.vulnerability_density;
    if (name == "severity_score") return static_cast<double>(r.severity_total);
    if (name == "hallucinations_fabricated_module") return static_cast<double>(r.hallucinations_fabricated_module);
    if (name == "hallucinations_fake_api") return static_cast<double>(r.hallucinations_fake_api);
    if (name == "hallucinations_parameter") return static_cast<double>(r.hallucinations_parameter);
    if (name == "response_time_p50_ms") return r.response_time ? std::optional(r.response_time->p50) : std::nullopt;
    if (name == "response_time_p95_ms") return r.response_time ? std::optional(r.response_time->p95) : std::nullopt;
    if (name == "errored_cells") return static_cast<double>(r.errored_cells);
    throw InputError("unknown metric '" + std::string(name) + "'");
}

std::string na_or(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "NA"; }

}  // namespace

// ---- config -------------------------------------------------------------------------------

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw InputError("run config must be a JSON object");
    RunConfig c;
    c.base_dir = base_dir;
    c.source = j;
    auto resolve = [&](const json& v, std::string_view field) {
        if (!v.is_string() || v.get<std::string>().empty()) {
            throw InputError("run config: '" + std::string(field) + "' must be a path string");
        }
        const fs::path p(v.get<std::string>());
        return p.is_absolute() ? p : base_dir / p;
    };
    auto require_file = [](const fs::path& p, std::string_view what) {
        if (!fs::is_regular_file(p)) throw InputError(std::string(what) + " file not found: " + p.string());
    };
    try {
        if (!j.contains("corpus")) throw InputError("run config: missing 'corpus'");
        c.corpus = resolve(j.at("corpus"), "corpus");
        require_file(c.corpus, "corpus");

        const json sampling = j.value("sampling", json::object());
        const auto k = sampling.value("k", std::int64_t{50});
        if (k < 1) throw InputError("run config: sampling.k must be >= 1");
        c.sampling.k = static_cast<std::size_t>(k);
        c.sampling.seed = sampling.value("seed", std::uint64_t{42});

        if (!j.contains("models") || !j.at("models").is_array() || j.at("models").empty()) {
            throw InputError("run config: at least one model is required");
        }
        std::set<std::string> names;
        for (const auto& jm : j.at("models")) {
            ModelDescriptor m = parse_model(jm);
            if (!names.insert(m.name).second) throw InputError("run config: duplicate model '" + m.name + "'");
            c.models.push_back(std::move(m));
        }

        if (j.contains("specificity_levels")) {
            std::set<SpecificityLevel> seen;
            for (const auto& l : j.at("specificity_levels")) seen.insert(require_level(l));
            c.specificity_levels.assign(seen.begin(), seen.end());
            if (c.specificity_levels.empty()) throw InputError("run config: specificity_levels is empty");
        } else {
            c.specificity_levels = {SpecificityLevel::low, SpecificityLevel::medium, SpecificityLevel::high};
        }
        const auto trials = j.value("trials", std::int64_t{1});
        if (trials < 1) throw InputError("run config: trials must be >= 1");
        c.trials = static_cast<std::size_t>(trials);

        const json gen = j.value("generation", json::object());
        c.generation.temperature = gen.value("temperature", c.generation.temperature);
        c.generation.top_p = gen.value("top_p", c.generation.top_p);
        c.generation.max_tokens = gen.value("max_tokens", c.generation.max_tokens);
        c.generation.seed = gen.value("seed", c.generation.seed);
        c.max_retries = gen.value("retries", c.max_retries);
        const double timeout_s = gen.value("timeout_s", 120.0);
        if (!(timeout_s > 0.0)) throw InputError("run config: generation.timeout_s must be positive");
        c.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(timeout_s * 1000.0));

        if (j.contains("mock_bank")) {
            c.mock_bank = resolve(j.at("mock_bank"), "mock_bank");
            require_file(*c.mock_bank, "mock_bank");
        }
        for (const auto& m : c.models) {
            if (m.endpoint.starts_with("mock:") && !c.mock_bank) {
                throw InputError("run config: model '" + m.name + "' uses a mock endpoint but no mock_bank is set");
            }
        }
        if (j.contains("registry")) {
            c.registry = resolve(j.at("registry"), "registry");
            require_file(*c.registry, "registry");
        }
        if (!j.contains("kb")) throw InputError("run config: missing 'kb'");
        c.kb = resolve(j.at("kb"), "kb");
        require_file(c.kb, "kb");
        if (j.contains("thresholds")) {
            c.thresholds = resolve(j.at("thresholds"), "thresholds");
            require_file(*c.thresholds, "thresholds");
        }
        c.output_dir = j.contains("output_dir") ? resolve(j.at("output_dir"), "output_dir") : base_dir / "out";
        if (j.contains("unsafe_patterns")) {
            c.unsafe_patterns = j.at("unsafe_patterns").get<std::vector<std::string>>();
        }
        const auto workers = j.value("workers", std::int64_t{1});
        if (workers < 1) throw InputError("run config: workers must be >= 1");
        c.workers = static_cast<std::size_t>(workers);
        const auto gpus = j.value("gpu_workers", std::int64_t{10});
        if (gpus < 1) throw InputError("run config: gpu_workers must be >= 1");
        c.gpu_workers = static_cast<std::size_t>(gpus);
        for (std::size_t i = 0; i < c.models.size(); ++i) c.models[i].worker_index = assign_worker(i, c.gpu_workers);

        if (j.contains("agentsim")) {
            for (const auto& je : j.at("agentsim").value("episodes", json::array())) {
                if (je.is_string()) {
                    const fs::path p = resolve(je, "agentsim.episodes");
                    require_file(p, "episode config");
                    c.episodes.push_back(load_episode_config(p));
                } else {
                    c.episodes.push_back(parse_episode_config(je));
                }
            }
            std::set<std::string> episode_names;
            for (const auto& e : c.episodes) {
                if (!episode_names.insert(e.name).second) {
                    throw InputError("run config: duplicate episode name '" + e.name + "'");
                }
            }
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("run config: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw InputError("config file not found: " + path.string());
    return parse_run_config(read_json(path), path.parent_path());
}

// ---- grid ------------------------------------------------------------------------------------

std::uint64_t cell_seed(std::uint64_t base, std::string_view model, std::string_view prompt_id, SpecificityLevel level,
                        std::size_t trial) {
    std::uint64_t s = mix_seed(base, fnv1a64(model));
    s = mix_seed(s, fnv1a64(prompt_id));
    s = mix_seed(s, static_cast<std::uint64_t>(level));
    return mix_seed(s, trial);
}

ResultsBundle run_grid(const RunConfig& config) {
    ResultsBundle bundle;
    bundle.config = config;
    const PromptCorpus corpus = load_corpus(config.corpus);
    PromptCorpus sample;
    try {
        sample = stratified_sample(corpus, config.sampling);
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("sampling: ") + e.what());
    }
    bundle.sample = sample.prompts;
    std::vector<Prompt> prompts = sample.prompts;
    std::sort(prompts.begin(), prompts.end(), [](const Prompt& a, const Prompt& b) { return a.id < b.id; });

    const RuleRegistry registry = config.registry ? load_registry(*config.registry) : RuleRegistry::baseline();
    const KnowledgeBase kb = load_kb(config.kb);
    bundle.registry_version = registry.version;
    bundle.kb_version = kb.version;

    BackendOptions options;
    options.timeout = config.timeout;
    if (config.mock_bank) options.mock_banks = std::make_shared<const TemplateBankFile>(load_template_banks(*config.mock_bank));
    std::vector<std::unique_ptr<Backend>> backends;
    for (const auto& m : config.models) backends.push_back(make_backend(m, options));

    GateConfig gate;
    gate.max_retries = config.max_retries;
    gate.unsafe_patterns = config.unsafe_patterns;

    struct Job {
        std::size_t model;
        const Prompt* prompt;
        SpecificityLevel level;
        std::size_t trial;
    };
    std::vector<Job> jobs;
    for (std::size_t m = 0; m < config.models.size(); ++m) {
        for (const auto& p : prompts) {
            for (const auto level : config.specificity_levels) {
                for (std::size_t t = 1; t <= config.trials; ++t) jobs.push_back({m, &p, level, t});
            }
        }
    }

    bundle.cells.resize(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            const Job& job = jobs[i];
            const ModelDescriptor& model = config.models[job.model];
            CellResult& cell = bundle.cells[i];
            cell.model = model.name;
            cell.prompt_id = job.prompt->id;
            cell.specificity = job.level;
            cell.trial = job.trial;
            cell.seed = cell_seed(config.generation.seed, model.name, job.prompt->id, job.level, job.trial);
            GenerationParams params = config.generation;
            params.seed = cell.seed;
            try {
                cell.generation =
                    generate_sample(*backends[job.model], model, *job.prompt, job.level, params, job.trial, gate);
                const syntax::SourceTree tree = syntax::parse_source(cell.generation.code);
                cell.loc = tree.loc;
                cell.vulns = scan_vulns(tree, registry);
                cell.hallucinations = detect_hallucinations(tree, kb);
            } catch (const std::exception& e) {
                cell.errored = true;
                cell.error = e.what();
                cell.generation = GenerationRecord{};
                cell.generation.prompt_id = cell.prompt_id;
                cell.generation.model_name = cell.model;
                cell.generation.specificity = cell.specificity;
                cell.generation.trial_index = cell.trial;
                cell.generation.params_used = params;
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.workers, jobs.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
        worker();
    }

    for (const auto& model : config.models) {
        ModelAgentResult agent;
        agent.model = model.name;
        for (const auto& ep : config.episodes) {
            AgentPolicy policy = ep.policy;
            policy.seed = mix_seed(ep.policy.seed, fnv1a64(model.name));
            AgentSession session(ep.layout, ep.constraints, policy);
            EpisodeResult r = run_episode(session, ep.n_steps, ep.recovery);
            EpisodeOutcome out;
            out.name = ep.name;
            out.seed = policy.seed;
            out.metrics = r.metrics;
            out.chain_head = session.head_hash();
            out.trace = std::move(r.trace);
            agent.totals += out.metrics.counts;
            agent.episodes.push_back(std::move(out));
        }
        bundle.agents.push_back(std::move(agent));
    }
    return bundle;
}

// ---- aggregation -------------------------------------------------------------------------

MetricTable aggregate_metrics(const ResultsBundle& bundle) {
    MetricTable table;
    for (const auto& model : bundle.config.models) {
        MetricRow row;
        row.model = model.name;
        row.param_count_billions = model.param_count_billions;
        std::set<std::string> cwes;
        std::vector<double> times;
        for (const auto& cell : bundle.cells) {
            if (cell.model != model.name) continue;
            ++row.cells;
            if (cell.errored) {
                ++row.errored_cells;
                continue;
            }
            if (cell.generation.gate_exhausted) ++row.gate_exhausted;
            row.severity_total += severity_score(cell.vulns);
            row.severity_histogram += severity_histogram(cell.vulns);
            row.loc_total += cell.loc;
            for (const auto& f : cell.vulns) {
                cwes.insert(f.cwe_id);
                ++row.cwe_counts[f.cwe_id];
            }
            for (const auto& h : cell.hallucinations) {
                switch (h.kind) {
                    case HalluKind::FabricatedModule: ++row.hallucinations_fabricated_module; break;
                    case HalluKind::FakeAPI: ++row.hallucinations_fake_api; break;
                    case HalluKind::ParameterHallucination: ++row.hallucinations_parameter; break;
                }
            }
            times.push_back(cell.generation.response_time_ms);
        }
        row.cwe_diversity = cwes.size();
        row.vulnerability_density =
            row.loc_total == 0 ? 0.0 : static_cast<double>(row.severity_total) / static_cast<double>(row.loc_total);
        if (!times.empty()) row.response_time = stats::summarize_distribution(times);
        for (const auto& a : bundle.agents) {
            if (a.model == model.name && a.totals.n_total > 0) row.agent = compute_agent_metrics(a.totals);
        }
        table.push_back(std::move(row));
    }
    return table;
}

// ---- serialization -------------------------------------------------------------------------

json bundle_to_json(const ResultsBundle& b, const MetricTable& table) {
    json cells = json::array();
    for (const auto& c : b.cells) {
        json vulns = json::array(), hallus = json::array();
        for (const auto& f : c.vulns) vulns.push_back(vuln_json(f));
        for (const auto& h : c.hallucinations) hallus.push_back(hallu_json(h));
        const auto& g = c.generation;
        cells.push_back({
            {"model", c.model},
            {"prompt_id", c.prompt_id},
            {"specificity", to_string(c.specificity)},
            {"trial", c.trial},
            {"seed", c.seed},
            {"errored", c.errored},
            {"error", c.error},
            {"generation",
             {{"code", g.code},
              {"gate_attempts", g.gate_attempts},
              {"gate_exhausted", g.gate_exhausted},
              {"gate_history", g.gate_history},
              {"response_time_ms", g.response_time_ms},
              {"params_used", params_json(g.params_used)},
              {"backend_meta", g.backend_meta}}},
            {"loc", c.loc},
            {"severity_score", severity_score(c.vulns)},
            {"vulnerabilities", vulns},
            {"hallucinations", hallus},
        });
    }
    json agents = json::array();
    for (const auto& a : b.agents) {
        json episodes = json::array();
        for (const auto& e : a.episodes) {
            episodes.push_back({{"name", e.name},
                                {"seed", e.seed},
                                {"chain_head", e.chain_head},
                                {"records", e.trace.size()},
                                {"trace_file", trace_path(a.model, e.name)},
                                {"metrics", metrics_to_json(e.metrics)}});
        }
        agents.push_back({{"model", a.model}, {"episodes", episodes}, {"totals", counts_json(a.totals)}});
    }
    json sample = json::array();
    for (const auto& p : b.sample) sample.push_back({{"id", p.id}, {"stratum", p.stratum}});
    json models = json::array();
    for (const auto& m : b.config.models) models.push_back(model_json(m));
    json levels = json::array();
    for (const auto l : b.config.specificity_levels) levels.push_back(to_string(l));
    json episodes = json::array();
    for (const auto& e : b.config.episodes) episodes.push_back(episode_config_to_json(e));

    json metrics = json::array();
    for (const auto& r : table) {
        json row = {{"model", r.model},
                    {"param_count_billions", r.param_count_billions},
                    {"cwe_diversity", r.cwe_diversity},
                    {"cwe_counts", r.cwe_counts},
                    {"severity_score", r.severity_total},
                    {"severity_histogram",
                     {{"LOW", r.severity_histogram.low},
                      {"MEDIUM", r.severity_histogram.medium},
                      {"HIGH", r.severity_histogram.high}}},
                    {"loc", r.loc_total},
                    {"vulnerability_density", r.vulnerability_density},
                    {"hallucinations",
                     {{"FabricatedModule", r.hallucinations_fabricated_module},
                      {"FakeAPI", r.hallucinations_fake_api},
                      {"ParameterHallucination", r.hallucinations_parameter}}},
                    {"cells", r.cells},
                    {"errored_cells", r.errored_cells},
                    {"gate_exhausted", r.gate_exhausted},
                    {"agent", r.agent ? metrics_to_json(*r.agent) : json(nullptr)},
                    {"response_time_ms", r.response_time ? summary_json(*r.response_time) : json(nullptr)}};
        metrics.push_back(std::move(row));
    }

    json thresholds = nullptr;
    if (b.config.thresholds) {
        thresholds = json::array();
        const json spec = read_json(*b.config.thresholds);
        for (const auto& t : spec.at("thresholds")) {
            const auto metric = t.at("metric").get<std::string>();
            for (const auto& r : table) {
                const auto v = metric_value(r, metric);
                json check = {{"model", r.model}, {"metric", metric}, {"value", v ? json(*v) : json(nullptr)}};
                bool pass = v.has_value();
                if (t.contains("max")) {
                    check["max"] = t.at("max");
                    pass = pass && *v <= t.at("max").get<double>();
                }
                if (t.contains("min")) {
                    check["min"] = t.at("min");
                    pass = pass && *v >= t.at("min").get<double>();
                }
                check["pass"] = pass;
                thresholds.push_back(std::move(check));
            }
        }
    }

    return {
        {"schema", kResultsSchema},
        {"tool_version", kToolVersion},
        {"digest", kDigestName},
        {"config", b.config.source},
        {"resolved",
         {{"models", models},
          {"specificity_levels", levels},
          {"trials", b.config.trials},
          {"sampling", {{"k", b.config.sampling.k}, {"seed", b.config.sampling.seed}}},
          {"generation", params_json(b.config.generation)},
          {"max_retries", b.config.max_retries},
          {"unsafe_patterns", b.config.unsafe_patterns},
          {"gpu_workers", b.config.gpu_workers},
          {"episodes", episodes}}},
        {"registry_version", b.registry_version},
        {"kb_version", b.kb_version},
        {"sample", sample},
        {"cells", cells},
        {"agents", agents},
        {"metrics", metrics},
        {"threshold_checks", thresholds},
    };
}

ResultsBundle bundle_from_json(const json& j, const fs::path& results_dir) {
    ResultsBundle b;
    try {
        if (j.at("schema").get<std::string>() != kResultsSchema) {
            throw InputError("results: unsupported schema '" + j.at("schema").get<std::string>() + "'");
        }
        b.config.source = j.at("config");
        const auto& r = j.at("resolved");
        for (const auto& jm : r.at("models")) {
            ModelDescriptor m = parse_model(jm);
            m.worker_index = jm.at("worker_index").get<std::size_t>();
            b.config.models.push_back(std::move(m));
        }
        for (const auto& l : r.at("specificity_levels")) b.config.specificity_levels.push_back(require_level(l));
        b.config.trials = r.at("trials").get<std::size_t>();
        b.config.sampling.k = r.at("sampling").at("k").get<std::size_t>();
        b.config.sampling.seed = r.at("sampling").at("seed").get<std::uint64_t>();
        b.config.generation = params_from_json(r.at("generation"));
        b.config.max_retries = r.at("max_retries").get<std::size_t>();
        b.config.unsafe_patterns = r.at("unsafe_patterns").get<std::vector<std::string>>();
        b.config.gpu_workers = r.at("gpu_workers").get<std::size_t>();
        for (const auto& e : r.at("episodes")) b.config.episodes.push_back(parse_episode_config(e));
        b.registry_version = j.at("registry_version").get<std::string>();
        b.kb_version = j.at("kb_version").get<std::string>();
        for (const auto& p : j.at("sample")) {
            Prompt pr;
            pr.id = p.at("id").get<std::string>();
            pr.stratum = p.at("stratum").get<std::string>();
            b.sample.push_back(std::move(pr));
        }
        for (const auto& jc : j.at("cells")) {
            CellResult c;
            c.model = jc.at("model").get<std::string>();
            c.prompt_id = jc.at("prompt_id").get<std::string>();
            c.specificity = require_level(jc.at("specificity"));
            c.trial = jc.at("trial").get<std::size_t>();
            c.seed = jc.at("seed").get<std::uint64_t>();
            c.errored = jc.at("errored").get<bool>();
            c.error = jc.at("error").get<std::string>();
            const auto& g = jc.at("generation");
            c.generation.prompt_id = c.prompt_id;
            c.generation.model_name = c.model;
            c.generation.specificity = c.specificity;
            c.generation.trial_index = c.trial;
            c.generation.code = g.at("code").get<std::string>();
            c.generation.gate_attempts = g.at("gate_attempts").get<std::size_t>();
            c.generation.gate_exhausted = g.at("gate_exhausted").get<bool>();
            c.generation.gate_history = g.at("gate_history").get<std::vector<std::vector<std::string>>>();
            c.generation.response_time_ms = g.at("response_time_ms").get<double>();
            c.generation.params_used = params_from_json(g.at("params_used"));
            c.generation.backend_meta = g.at("backend_meta");
            c.loc = jc.at("loc").get<std::size_t>();
            for (const auto& f : jc.at("vulnerabilities")) c.vulns.push_back(vuln_from_json(f));
            for (const auto& h : jc.at("hallucinations")) c.hallucinations.push_back(hallu_from_json(h));
            b.cells.push_back(std::move(c));
        }
        for (const auto& ja : j.at("agents")) {
            ModelAgentResult a;
            a.model = ja.at("model").get<std::string>();
            for (const auto& je : ja.at("episodes")) {
                EpisodeOutcome e;
                e.name = je.at("name").get<std::string>();
                e.seed = je.at("seed").get<std::uint64_t>();
                e.chain_head = je.at("chain_head").get<std::string>();
                e.metrics = compute_agent_metrics(counts_from_json(je.at("metrics")));
                if (!results_dir.empty()) {
                    const fs::path tp = results_dir / je.at("trace_file").get<std::string>();
                    std::istringstream lines(read_text(tp));
                    std::vector<std::string> raw;
                    for (std::string line; std::getline(lines, line);) raw.push_back(line);
                    const ChainVerdict v = verify_trace_lines(raw);
                    if (!v.valid) {
                        throw InputError(tp.string() + ": audit chain broken at record " + std::to_string(v.first_broken));
                    }
                    for (const auto& line : raw) e.trace.push_back(record_from_json(json::parse(line)));
                    if (e.trace.size() != je.at("records").get<std::size_t>() ||
                        (e.trace.empty() ? kGenesisHash : e.trace.back().chain_hash) != e.chain_head) {
                        throw InputError(tp.string() + ": trace does not match results.json");
                    }
                }
                a.episodes.push_back(std::move(e));
            }
            a.totals = counts_from_json(ja.at("totals"));
            b.agents.push_back(std::move(a));
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("results: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("results: ") + e.what());
    }
    return b;
}

// ---- statistics ----------------------------------------------------------------------

const std::vector<PublishedRow>& published_rows() {
    static const std::vector<PublishedRow> rows = {
        {"Stable-Code-3B", 3.0, 25.00, 22.60, 76.00, 87.60}, {"Granite-3B", 3.0, 34.00, 17.80, 66.50, 85.60},
        {"DeepSeek-7B", 7.0, 29.60, 19.20, 77.00, 87.60},    {"CodeLlama-7B", 7.0, 31.40, 19.40, 73.20, 85.00},
        {"Qwen2.5-7B", 7.0, 31.20, 20.40, 73.70, 87.60},     {"Yi-Coder-9B", 9.0, 29.80, 17.80, 75.80, 87.00},
    };
    return rows;
}

json compute_report_stats(const ResultsBundle& bundle, const MetricTable& table) {
    json out = {{"digest", kDigestName}};
    auto guarded = [](auto&& fn) -> json {
        try {
            return fn();
        } catch (const std::invalid_argument& e) {
            return {{"skipped", e.what()}};
        } catch (const std::domain_error& e) {
            return {{"skipped", e.what()}};
        }
    };

    {
        std::vector<double> x, y;
        json points = json::array();
        for (const auto& r : table) {
            if (!r.agent) continue;
            x.push_back(1.0 / r.param_count_billions);
            y.push_back(r.agent->deception_rate.value());
            points.push_back({{"model", r.model}, {"x", x.back()}, {"y", y.back()}});
        }
        json fit = guarded([&] { return fit_json(stats::linear_regression(x, y)); });
        fit["x"] = "1/param_count_billions";
        fit["y"] = "deception_rate";
        fit["points"] = points;
        out["deception_vs_inverse_params"] = fit;
    }

    stats::GroupedSamples groups;
    for (const auto& c : bundle.cells) {
        if (!c.errored) groups[c.model].push_back(static_cast<double>(severity_score(c.vulns)));
    }
    out["severity_anova"] = guarded([&] {
        const auto a = stats::anova_oneway(groups);
        return json{{"f_stat", a.f_stat},     {"df_between", a.df_between}, {"df_within", a.df_within},
                    {"ss_between", a.ss_between}, {"ss_within", a.ss_within}, {"ms_between", a.ms_between},
                    {"ms_within", a.ms_within}, {"p_value", a.p_value}};
    });
    out["severity_tukey"] = guarded([&] {
        const auto t = stats::tukey_hsd(groups, 0.05);
        json pairs = json::array();
        for (const auto& p : t.pairs) {
            pairs.push_back({{"a", p.a},
                             {"b", p.b},
                             {"mean_diff", p.mean_diff},
                             {"q", p.q},
                             {"p_value", p.p_value},
                             {"significant", p.significant}});
        }
        return json{{"k", t.k},
                    {"df_within", t.df_within},
                    {"alpha", t.alpha},
                    {"q_critical", t.q_critical},
                    {"pairs", pairs}};
    });

    SeverityHistogram total;
    for (const auto& r : table) total += r.severity_histogram;
    out["severity_power_law"] = guarded([&] {
        const std::map<int, double> hist = {{severity_level(Severity::LOW), static_cast<double>(total.low)},
                                            {severity_level(Severity::MEDIUM), static_cast<double>(total.medium)},
                                            {severity_level(Severity::HIGH), static_cast<double>(total.high)}};
        const auto f = stats::power_law_fit(hist);
        return json{{"k", f.k}, {"alpha", f.alpha}, {"r_squared", f.r_squared}, {"levels_used", f.levels_used}};
    });

    {
        std::vector<double> x, y;
        json rows = json::array();
        for (const auto& r : published_rows()) {
            x.push_back(1.0 / r.params_billions);
            y.push_back(r.deception_rate / 100.0);
            rows.push_back({{"model", r.model}, {"param_count_billions", r.params_billions}, {"deception_rate", y.back()}});
        }
        json ref = fit_json(stats::linear_regression(x, y));
        ref["rows"] = rows;
        ref["r_squared_published"] = kPublishedDeceptionR2;
        ref["r_squared_recoverable_from_aggregates"] = false;
        ref["note"] =
            "published R^2 = 0.73 cannot be recovered from the six aggregate rows, which give the r_squared above";
        out["published_reference"] = std::move(ref);
    }
    return out;
}

// ---- emitters --------------------------------------------------------------------------------

std::string metrics_csv(const MetricTable& table) {
    std::string out = csv::format_row({"model", "autonomous_failure_rate", "deception_rate", "recovery_success_rate",
                                       "constraint_adherence", "cwe_diversity", "vulnerability_density",
                                       "hallucinations_fabricated_module", "hallucinations_fake_api",
                                       "hallucinations_parameter", "response_time_p50_ms", "response_time_p95_ms",
                                       "errored_cells"});
    for (const auto& r : table) {
        out += csv::format_row({r.model,
                                na_or(metric_value(r, "autonomous_failure_rate"), 6),
                                na_or(metric_value(r, "deception_rate"), 6),
                                na_or(metric_value(r, "recovery_success_rate"), 6),
                                na_or(metric_value(r, "constraint_adherence"), 6),
                                std::to_string(r.cwe_diversity),
                                fixed(r.vulnerability_density, 6),
                                std::to_string(r.hallucinations_fabricated_module),
                                std::to_string(r.hallucinations_fake_api),
                                std::to_string(r.hallucinations_parameter),
                                na_or(metric_value(r, "response_time_p50_ms"), 3),
                                na_or(metric_value(r, "response_time_p95_ms"), 3),
                                std::to_string(r.errored_cells)});
    }
    return out;
}

namespace {

std::map<std::string, std::string> plot_files(const MetricTable& table) {
    std::map<std::string, std::string> files;
    for (const auto& metric : metric_names()) {
        std::string text = "model," + metric + "\n";
        for (const auto& r : table) text += csv::format_row({r.model, na_or(metric_value(r, metric), 6)});
        files["plots/bar_" + metric + ".csv"] = text;
    }

    {
        csv::Row header = {"model"};
        header.insert(header.end(), metric_names().begin(), metric_names().end());
        std::string text = csv::format_row(header);
        std::map<std::string, std::pair<double, double>> range;
        for (const auto& metric : metric_names()) {
            for (const auto& r : table) {
                const auto v = metric_value(r, metric);
                if (!v) continue;
                auto [it, fresh] = range.try_emplace(metric, *v, *v);
                if (!fresh) {
                    it->second.first = std::min(it->second.first, *v);
                    it->second.second = std::max(it->second.second, *v);
                }
            }
        }
        for (const auto& r : table) {
            csv::Row row = {r.model};
            for (const auto& metric : metric_names()) {
                const auto v = metric_value(r, metric);
                if (!v) {
                    row.push_back("NA");
                    continue;
                }
                const auto [lo, hi] = range.at(metric);
                row.push_back(fixed(hi > lo ? (*v - lo) / (hi - lo) : 0.0, 6));
            }
            text += csv::format_row(row);
        }
        files["plots/heatmap.csv"] = text;
    }

    {
        std::set<std::string> cwes;
        for (const auto& r : table) {
            for (const auto& [cwe, _] : r.cwe_counts) cwes.insert(cwe);
        }
        csv::Row header = {"model"};
        header.insert(header.end(), cwes.begin(), cwes.end());
        for (const char* extra :
             {"fabricated_module", "fake_api", "parameter_hallucination", "gate_exhausted", "errored_cells"}) {
            header.push_back(extra);
        }
        std::string text = csv::format_row(header);
        for (const auto& r : table) {
            csv::Row row = {r.model};
            for (const auto& cwe : cwes) {
                const auto it = r.cwe_counts.find(cwe);
                row.push_back(std::to_string(it == r.cwe_counts.end() ? 0 : it->second));
            }
            row.push_back(std::to_string(r.hallucinations_fabricated_module));
            row.push_back(std::to_string(r.hallucinations_fake_api));
            row.push_back(std::to_string(r.hallucinations_parameter));
            row.push_back(std::to_string(r.gate_exhausted));
            row.push_back(std::to_string(r.errored_cells));
            text += csv::format_row(row);
        }
        files["plots/failure_types.csv"] = text;
    }

    {
        SeverityHistogram total;
        for (const auto& r : table) total += r.severity_histogram;
        std::string text = "severity,level,count\n";
        for (const auto s : {Severity::LOW, Severity::MEDIUM, Severity::HIGH}) {
            text += std::string(to_string(s)) + "," + std::to_string(severity_level(s)) + "," +
                    std::to_string(total[s]) + "\n";
        }
        files["plots/severity_power_law.csv"] = text;
    }
    return files;
}

std::string response_time_csv(const MetricTable& table, const ResultsBundle& bundle) {
    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (const auto& r : table) {
        if (!r.response_time) continue;
        lo = any ? std::min(lo, r.response_time->min) : r.response_time->min;
        hi = any ? std::max(hi, r.response_time->max) : r.response_time->max;
        any = true;
    }
    csv::Row header = {"bin_lo", "bin_hi"};
    std::vector<stats::Histogram> hists;
    for (const auto& r : table) {
        header.push_back(r.model);
        std::vector<double> times;
        for (const auto& c : bundle.cells) {
            if (c.model == r.model && !c.errored) times.push_back(c.generation.response_time_ms);
        }
        hists.push_back(stats::histogram(times, lo, hi));
    }
    std::string text = csv::format_row(header);
    const double width = (hi - lo) / static_cast<double>(stats::kHistogramBins);
    for (std::size_t b = 0; b < stats::kHistogramBins; ++b) {
        csv::Row row = {fixed(lo + width * static_cast<double>(b), 3), fixed(lo + width * static_cast<double>(b + 1), 3)};
        for (const auto& h : hists) row.push_back(std::to_string(h.counts[b]));
        text += csv::format_row(row);
    }
    return text;
}

}  // namespace

std::vector<std::string> emit_reports(const MetricTable& table, const ResultsBundle& bundle, const fs::path& outdir) {
    std::error_code ec;
    fs::create_directories(outdir, ec);
    if (ec || !fs::is_directory(outdir)) throw std::runtime_error("cannot create output directory " + outdir.string());

    std::map<std::string, std::string> files = plot_files(table);
    files["plots/response_time_histogram.csv"] = response_time_csv(table, bundle);
    files["results.json"] = bundle_to_json(bundle, table).dump(2) + "\n";
    files["metrics.csv"] = metrics_csv(table);
    files["stats.json"] = compute_report_stats(bundle, table).dump(2) + "\n";
    for (const auto& a : bundle.agents) {
        for (const auto& e : a.episodes) {
            std::string text;
            for (const auto& line : trace_to_lines(e.trace)) text += line + "\n";
            files[trace_path(a.model, e.name)] = text;
        }
    }

    json entries = json::array();
    std::vector<std::string> written;
    for (const auto& [rel, text] : files) {
        write_text(outdir / rel, text);
        entries.push_back({{"path", rel}, {"sha256", sha256_hex(text)}, {"bytes", text.size()}});
        written.push_back(rel);
    }
    const json manifest = {{"digest", kDigestName}, {"tool_version", kToolVersion}, {"files", entries}};
    write_text(outdir / "manifest.json", manifest.dump(2) + "\n");
    written.push_back("manifest.json");
    std::sort(written.begin(), written.end());
    return written;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
    const json j = read_json(manifest);
    std::vector<ManifestEntry> out;
    try {
        for (const auto& e : j.at("files")) {
            out.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>(),
                           e.at("bytes").get<std::uintmax_t>()});
        }
    } catch (const json::exception& e) {
        throw InputError(manifest.string() + ": " + e.what());
    }
    return out;
}

std::vector<std::string> verify_manifest(const fs::path& outdir) {
    std::vector<std::string> bad;
    for (const auto& e : read_manifest(outdir / "manifest.json")) {
        const fs::path p = outdir / e.path;
        std::error_code ec;
        if (!fs::is_regular_file(p, ec)) {
            bad.push_back(e.path);
            continue;
        }
        const std::string text = read_text(p);
        if (text.size() != e.bytes || sha256_hex(text) != e.sha256) bad.push_back(e.path);
    }
    return bad;
}

}  // namespace vigil
