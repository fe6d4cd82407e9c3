#pragma once

#include "vigil/agentsim.hpp"
#include "vigil/backend.hpp"
#include "vigil/corpus.hpp"
#include "vigil/halluscan.hpp"
#include "vigil/stats.hpp"
#include "vigil/vulnscan.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace vigil {

inline constexpr std::string_view kResultsSchema = "vigil-results/1";
inline constexpr std::string_view kToolVersion = VIGIL_VERSION;

// Relative paths resolve against the directory holding the config file.
//
// {"corpus": path, "sampling": {"k", "seed"}, "models": [{"name", "endpoint",
//  "param_count_billions", "quantization"?}], "specificity_levels": [..],
//  "trials": n, "generation": {"temperature", "top_p", "max_tokens", "seed",
//  "retries", "timeout_s"}, "mock_bank"?, "registry"?, "kb", "output_dir",
//  "unsafe_patterns"?, "workers"?, "gpu_workers"?, "agentsim": {"episodes":
//  [episode config | path]}, "thresholds"?}
struct RunConfig {
    std::filesystem::path base_dir;
    std::filesystem::path corpus;
    SamplingConfig sampling;
    std::vector<ModelDescriptor> models;
    std::vector<SpecificityLevel> specificity_levels;
    std::size_t trials = 1;
    GenerationParams generation;
    std::size_t max_retries = 3;
    std::chrono::milliseconds timeout{120000};
    std::optional<std::filesystem::path> mock_bank;
    std::optional<std::filesystem::path> registry;
    std::filesystem::path kb;
    std::optional<std::filesystem::path> thresholds;
    std::filesystem::path output_dir;
    std::vector<std::string> unsafe_patterns = default_unsafe_patterns();
    std::size_t workers = 1;
    std::size_t gpu_workers = 10;
    std::vector<EpisodeConfig> episodes;
    // The config as written, echoed into results.json.
    nlohmann::json source;
};

// Throws InputError naming the offending field or missing file.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct CellResult {
    std::string model;
    std::string prompt_id;
    SpecificityLevel specificity = SpecificityLevel::low;
    std::size_t trial = 1;
    std::uint64_t seed = 0;
    bool errored = false;
    std::string error;
    GenerationRecord generation;
    std::size_t loc = 0;
    std::vector<VulnFinding> vulns;
    std::vector<HalluFinding> hallucinations;
};

struct EpisodeOutcome {
    std::string name;
    std::uint64_t seed = 0;
    EpisodeMetrics metrics;
    std::string chain_head;
    std::vector<TraceRecord> trace;
};

struct ModelAgentResult {
    std::string model;
    std::vector<EpisodeOutcome> episodes;
    AgentCounts totals;
};

struct ResultsBundle {
    RunConfig config;
    std::vector<Prompt> sample;
    std::vector<CellResult> cells;  // (model order, prompt id, specificity, trial)
    std::vector<ModelAgentResult> agents;
    std::string registry_version;
    std::string kb_version;
};

// Cell seed: generation seed mixed with model, prompt id, specificity, trial.
std::uint64_t cell_seed(std::uint64_t base, std::string_view model, std::string_view prompt_id,
                        SpecificityLevel level, std::size_t trial);

// Backend failures mark the cell errored and the grid continues.
ResultsBundle run_grid(const RunConfig& config);

struct MetricRow {
    std::string model;
    double param_count_billions = 0.0;
    std::optional<EpisodeMetrics> agent;
    std::size_t cwe_diversity = 0;
    std::uint64_t severity_total = 0;
    SeverityHistogram severity_histogram;
    std::size_t loc_total = 0;
    double vulnerability_density = 0.0;
    std::uint64_t hallucinations_fabricated_module = 0;
    std::uint64_t hallucinations_fake_api = 0;
    std::uint64_t hallucinations_parameter = 0;
    std::map<std::string, std::uint64_t> cwe_counts;
    std::optional<stats::DistributionSummary> response_time;
    std::size_t cells = 0;
    std::size_t errored_cells = 0;
    std::size_t gate_exhausted = 0;
};

using MetricTable = std::vector<MetricRow>;

// Errored cells count only toward errored_cells.
MetricTable aggregate_metrics(const ResultsBundle& bundle);

nlohmann::json bundle_to_json(const ResultsBundle& bundle, const MetricTable& table);
// Rebuilds a bundle from results.json. With `results_dir` set, traces are
// re-read from their files and their audit chains verified.
ResultsBundle bundle_from_json(const nlohmann::json& j, const std::filesystem::path& results_dir = {});

// Regression of deception rate on 1/params, ANOVA and Tukey over per-cell
// severity scores by model, the severity power law, and the same regression
// over the published six-model rows with a note on the published R^2.
nlohmann::json compute_report_stats(const ResultsBundle& bundle, const MetricTable& table);

struct PublishedRow {
    std::string model;
    double params_billions;
    double failure_rate;
    double deception_rate;
    double recovery_success_rate;
    double constraint_adherence;
};
// Percentages as published.
const std::vector<PublishedRow>& published_rows();
inline constexpr double kPublishedDeceptionR2 = 0.73;

std::string metrics_csv(const MetricTable& table);

// Writes results.json, metrics.csv, stats.json, plots/*.csv, traces/*.jsonl
// and manifest.json; returns the written paths (relative, sorted).
std::vector<std::string> emit_reports(const MetricTable& table, const ResultsBundle& bundle,
                                      const std::filesystem::path& outdir);

struct ManifestEntry {
    std::string path;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
// Paths whose digest or size no longer match, or that are missing.
std::vector<std::string> verify_manifest(const std::filesystem::path& outdir);

// Exit status: 0 success, 1 validation error or usage, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vigil
