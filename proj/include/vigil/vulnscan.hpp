#pragma once

#include "vigil/syntax.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vigil {

enum class Severity { LOW, MEDIUM, HIGH };

std::string_view to_string(Severity s);
std::optional<Severity> parse_severity(std::string_view s);
// Severity weight: HIGH = 3, MEDIUM = 2, LOW = 1.
constexpr std::uint64_t severity_weight(Severity s) noexcept {
    switch (s) {
        case Severity::LOW: return 1;
        case Severity::MEDIUM: return 2;
        case Severity::HIGH: return 3;
    }
    return 0;
}
// Numeric level for the power-law fit: LOW = 1, MEDIUM = 2, HIGH = 3.
constexpr int severity_level(Severity s) noexcept { return static_cast<int>(s) + 1; }

struct VulnFinding {
    std::string cwe_id;
    Severity severity = Severity::LOW;
    syntax::Span span;
    std::string evidence;
    std::string rule_id;

    bool operator==(const VulnFinding&) const = default;
};

enum class PatternKind {
    StringBuildSink,      // callee leaf in `callees`, first argument a string built with non-literal parts
    ShellSink,            // callee resolves to <module>.<leaf>; shell keyword enabled or non-literal command
    DynamicEval,          // builtin eval/exec on a non-literal argument
    HardcodedCredential,  // non-empty string literal assigned to a name matching `name_regex`
    UnvalidatedInput,     // source-call value reaches any sink rule's callee without a sanitizer
};

std::string_view to_string(PatternKind k);

struct Rule {
    std::string rule_id;
    std::string cwe_id;
    Severity severity = Severity::LOW;
    PatternKind kind = PatternKind::StringBuildSink;
    std::string description;
    std::vector<std::string> callees;
    std::vector<std::string> modules;
    std::vector<std::string> shell_keywords;
    std::string name_regex;
    std::vector<std::string> sources;
    std::vector<std::string> sanitizer_prefixes;
};

struct RuleRegistry {
    std::vector<Rule> rules;
    std::string version;

    // The five mandatory rules (CWE-89, 78, 95, 798, 20); identical to the
    // shipped data/rules.json.
    static RuleRegistry baseline();
    const Rule* find(std::string_view rule_id) const;
};

// Registry JSON: {"version": str, "rules": [{"rule_id", "cwe", "severity",
// "description"?, "pattern": {"kind", ...parameters}}]}. Throws InputError
// on unreadable files, duplicate rule ids, unknown severities or pattern kinds.
RuleRegistry load_registry(const std::filesystem::path& path);
RuleRegistry parse_registry(std::string_view json_text, const std::string& source = "<memory>");
std::string registry_to_json(const RuleRegistry& registry);

// Findings sorted by (start line, rule_id).
std::vector<VulnFinding> scan_vulns(const syntax::SourceTree& tree, const RuleRegistry& registry);

std::uint64_t severity_score(std::span<const VulnFinding> findings);

// Weighted findings per line of code. Throws std::invalid_argument on loc == 0.
double vulnerability_density(std::span<const VulnFinding> findings, std::size_t loc);

struct SeverityHistogram {
    std::uint64_t low = 0;
    std::uint64_t medium = 0;
    std::uint64_t high = 0;

    std::uint64_t& operator[](Severity s) noexcept {
        return s == Severity::LOW ? low : s == Severity::MEDIUM ? medium : high;
    }
    std::uint64_t operator[](Severity s) const noexcept {
        return s == Severity::LOW ? low : s == Severity::MEDIUM ? medium : high;
    }
    SeverityHistogram& operator+=(const SeverityHistogram& o) noexcept {
        low += o.low;
        medium += o.medium;
        high += o.high;
        return *this;
    }
    friend SeverityHistogram operator+(SeverityHistogram a, const SeverityHistogram& b) noexcept {
        return a += b;
    }
    bool operator==(const SeverityHistogram&) const = default;
};

SeverityHistogram severity_histogram(std::span<const VulnFinding> findings);

// Number of distinct cwe ids.
std::size_t cwe_diversity(std::span<const VulnFinding> findings);

}  // namespace vigil
