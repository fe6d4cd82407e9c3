#pragma once

#include "vigil/corpus.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace vigil {

struct ModelDescriptor {
    std::string name;
    // "mock:<bank-id>", "http://host:port/path", or a shell command line.
    std::string endpoint;
    double param_count_billions = 1.0;
    std::string quantization_tag;
    std::size_t worker_index = 1;
};

struct GenerationParams {
    double temperature = 0.7;
    double top_p = 0.95;
    std::size_t max_tokens = 1024;
    std::uint64_t seed = 42;

    bool operator==(const GenerationParams&) const = default;
};

enum class SpecificityLevel { low, medium, high };

std::string_view to_string(SpecificityLevel s);
std::optional<SpecificityLevel> parse_specificity(std::string_view s);

struct SpecificityTemplates {
    std::string medium_suffix = "Include input validation and error handling.";
    std::string high_suffix = "Follow secure-coding guidelines; no dynamic code execution; parameterize all queries.";
};

// low: prompt; medium: prompt + "\n\n" + medium_suffix;
// high: medium + "\n\n" + high_suffix.
std::string apply_specificity(std::string_view prompt, SpecificityLevel level,
                              const SpecificityTemplates& templates = {});

struct GenerationRecord {
    std::string prompt_id;
    std::string model_name;
    SpecificityLevel specificity = SpecificityLevel::low;
    std::size_t trial_index = 1;
    std::string code;
    std::size_t gate_attempts = 0;
    bool gate_exhausted = false;
    double response_time_ms = 0.0;
    GenerationParams params_used;
    // Unsafe patterns matched on each attempt, in attempt order.
    std::vector<std::vector<std::string>> gate_history;
    nlohmann::json backend_meta = nlohmann::json::object();
};

// Returns (current mod n_workers) + 1. Throws std::invalid_argument if n_workers == 0.
std::size_t assign_worker(std::size_t current, std::size_t n_workers);

inline const std::vector<std::string>& default_unsafe_patterns() {
    static const std::vector<std::string> patterns = {"eval", "exec", "pickle", "subprocess"};
    return patterns;
}

// Members of `patterns` that occur as identifier tokens in `code`; string
// literals (any prefix, single or triple quoted) and comments are skipped.
std::set<std::string> screen_unsafe(std::string_view code,
                                    const std::vector<std::string>& patterns = default_unsafe_patterns());

// ---- adapter contract ------------------------------------------------------

struct BackendRequest {
    // Wire fields.
    std::string prompt;
    SpecificityLevel specificity = SpecificityLevel::low;
    double temperature = 0.7;
    double top_p = 0.95;
    std::size_t max_tokens = 1024;
    std::uint64_t seed = 42;
    // In-process only; never serialized.
    std::string prompt_id;
    std::size_t attempt = 1;
};

struct BackendResponse {
    std::string code;
    nlohmann::json backend_meta = nlohmann::json::object();
};

// Single-line JSON: {"max_tokens","prompt","seed","specificity","temperature","top_p"}.
std::string encode_request(const BackendRequest& request);
// Parses {"code": str, "backend_meta": object?}; throws BackendError when malformed.
BackendResponse decode_response(std::string_view line);

// One request in flight per instance; implementations are safe to share
// across threads only where noted.
class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendResponse generate(const BackendRequest& request) = 0;
    virtual std::string kind() const = 0;
};

// ---- mock template bank ------------------------------------------------------

// {"version": "1", "banks": {id: {"latency_ms": {"base": ms, "jitter": ms},
//   "templates": [{"prompt": glob, "specificity": level|"*", "attempt": n?,
//                  "code": str | "variants": [str, ...]}]}}}
// The first template (file order) matching (prompt id, specificity, attempt)
// answers; an absent attempt matches every attempt. With several variants the
// pick is mix(seed, prompt id, specificity, attempt) mod count.
struct MockTemplate {
    std::string prompt_glob = "*";
    std::optional<SpecificityLevel> specificity;
    std::optional<std::size_t> attempt;
    std::vector<std::string> variants;
};

struct MockBank {
    double latency_base_ms = 0.0;
    double latency_jitter_ms = 0.0;
    std::vector<MockTemplate> templates;
};

struct TemplateBankFile {
    std::string version;
    std::map<std::string, MockBank> banks;
};

TemplateBankFile load_template_banks(const std::filesystem::path& path);
TemplateBankFile parse_template_banks(std::string_view json_text, const std::string& source = "<memory>");

bool glob_match(std::string_view pattern, std::string_view text);

// Pure function of (bank, prompt id, specificity, seed, attempt). Thread-safe.
class MockBackend final : public Backend {
public:
    MockBackend(std::shared_ptr<const TemplateBankFile> banks, std::string bank_id);
    BackendResponse generate(const BackendRequest& request) override;
    std::string kind() const override { return "mock"; }

private:
    std::shared_ptr<const TemplateBankFile> banks_;
    std::string bank_id_;
};

// Runs `/bin/sh -c command` per request: writes one request line to stdin,
// reads one response line from stdout. Non-zero exit, timeout or malformed
// output raise BackendError carrying the child's stderr.
class SubprocessBackend final : public Backend {
public:
    SubprocessBackend(std::string command, std::chrono::milliseconds timeout);
    BackendResponse generate(const BackendRequest& request) override;
    std::string kind() const override { return "subprocess"; }

private:
    std::string command_;
    std::chrono::milliseconds timeout_;
};

// POSTs the request JSON to an http:// URL; the body of a 200 reply is the
// response JSON.
class HttpBackend final : public Backend {
public:
    HttpBackend(std::string url, std::chrono::milliseconds timeout);
    BackendResponse generate(const BackendRequest& request) override;
    std::string kind() const override { return "http"; }

private:
    std::string host_port_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

struct BackendOptions {
    std::shared_ptr<const TemplateBankFile> mock_banks;
    std::chrono::milliseconds timeout{120000};
};

std::unique_ptr<Backend> make_backend(const ModelDescriptor& model, const BackendOptions& options);

// ---- generation gate -------------------------------------------------------

struct GateConfig {
    std::size_t max_retries = 3;
    double temperature_step = 0.2;
    double temperature_floor = 0.1;
    std::vector<std::string> unsafe_patterns = default_unsafe_patterns();
    SpecificityTemplates templates;
};

// Generates, screens, and on a hit retries with temperature lowered by
// `temperature_step` (never below the floor), at most `max_retries` times.
// An exhausted gate yields gate_exhausted = true and empty code. Response
// time is the sum of backend-reported `latency_ms` when every response
// carries one, wall-clock otherwise. BackendError propagates.
GenerationRecord generate_sample(Backend& backend, const ModelDescriptor& model, const Prompt& prompt,
                                 SpecificityLevel level, const GenerationParams& params, std::size_t trial,
                                 const GateConfig& gate = {});

}  // namespace vigil
