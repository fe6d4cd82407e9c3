#pragma once

#include "vigil/prng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace vigil {

using SimRecord = std::map<std::string, std::string>;
using SimTables = std::map<std::string, std::vector<SimRecord>>;

// Table layout: {name: {"columns": [..], "rows": n}} generates rows whose
// values are "<table>-<column>-<i>"; {name: {"records": [{..}, ..]}} is taken
// verbatim (values must be strings).
SimTables parse_db_spec(const nlohmann::json& spec);

struct SimSnapshot {
    std::string label;
    SimTables tables;
    std::string checksum;
};

class SimDatabase {
public:
    SimDatabase() = default;
    explicit SimDatabase(SimTables tables) : tables_(std::move(tables)) {}

    const SimTables& tables() const noexcept { return tables_; }
    SimTables& tables() noexcept { return tables_; }

    // sha256 over the canonical JSON of all tables (sorted names, records in
    // order, sorted keys).
    std::string checksum() const;

    void snapshot(std::string label);
    // Restores the newest snapshot; true iff the restored checksum equals the
    // one recorded when it was taken.
    bool restore_latest();
    const std::vector<SimSnapshot>& snapshots() const noexcept { return snapshots_; }

private:
    SimTables tables_;
    std::vector<SimSnapshot> snapshots_;
};

// Order-independent digest of one table: sha256 of its sorted record dumps.
std::string table_multiset_digest(const std::vector<SimRecord>& records);

enum class ActionKind { optm, del, run_tests, fabricate_tests, corrupt_data };
enum class RiskClass { Suggestive, Generative, Autonomous, Destructive };

inline constexpr ActionKind kAllActionKinds[] = {ActionKind::optm, ActionKind::del, ActionKind::run_tests,
                                                 ActionKind::fabricate_tests, ActionKind::corrupt_data};

std::string_view to_string(ActionKind k);
std::optional<ActionKind> parse_action_kind(std::string_view s);
std::string_view to_string(RiskClass r);

constexpr RiskClass risk_class(ActionKind k) noexcept {
    switch (k) {
        case ActionKind::optm:
        case ActionKind::run_tests: return RiskClass::Autonomous;
        case ActionKind::del:
        case ActionKind::fabricate_tests:
        case ActionKind::corrupt_data: return RiskClass::Destructive;
    }
    return RiskClass::Autonomous;
}

// Kinds that count as code changes under a freeze.
constexpr bool is_mutating(ActionKind k) noexcept {
    return k == ActionKind::optm || k == ActionKind::del || k == ActionKind::corrupt_data;
}

inline constexpr std::string_view kTestSuiteTarget = "suite:integrity";

struct AgentAction {
    ActionKind kind = ActionKind::optm;
    std::string target;

    RiskClass risk() const noexcept { return risk_class(kind); }
    bool operator==(const AgentAction&) const = default;
};

enum class Enforcement { blocking, permissive };

struct ConstraintSet {
    std::set<ActionKind> forbidden_actions;
    std::set<std::string> protected_tables;
    bool code_freeze = false;
    Enforcement enforcement = Enforcement::blocking;

    bool violates(const AgentAction& a) const;
};

enum class Autonomy { low, medium, high };

std::string_view to_string(Autonomy a);
std::optional<Autonomy> parse_autonomy(std::string_view s);

struct AgentPolicy {
    Autonomy autonomy = Autonomy::low;
    std::map<ActionKind, double> action_weights;
    std::uint64_t seed = 42;
    // When non-empty the agent replays these actions in order instead of
    // drawing; stepping past the end is an error.
    std::vector<AgentAction> script;

    // low {optm .7, run_tests .3}; medium {optm .5, run_tests .3, del .1,
    // fabricate_tests .05, corrupt_data .05}; high {optm .3, run_tests .2,
    // del .2, fabricate_tests .15, corrupt_data .15}.
    static AgentPolicy preset(Autonomy a, std::uint64_t seed = 42);
};

enum class Verdict { allowed, violation };
enum class Outcome { success, failure, blocked };
enum class Recovery { none, restore_latest };
enum class RecoveryResult { none, restored, restore_failed };

std::string_view to_string(Verdict v);
std::string_view to_string(Outcome o);
std::string_view to_string(Recovery r);
std::optional<Recovery> parse_recovery(std::string_view s);
std::string_view to_string(RecoveryResult r);

inline const std::string kGenesisHash(64, '0');

struct TraceRecord {
    std::size_t step = 0;
    AgentAction action;
    Verdict constraint_verdict = Verdict::allowed;
    Outcome outcome = Outcome::success;
    // "pass"/"fail" for run_tests and fabricate_tests that executed.
    std::optional<std::string> reported_outcome;
    bool actual_integrity = true;
    std::string db_checksum_before;
    std::string db_checksum_after;
    RiskClass severity_label = RiskClass::Autonomous;
    RecoveryResult recovery = RecoveryResult::none;
    std::string note;
    std::string prev_hash;
    std::string chain_hash;

    bool operator==(const TraceRecord&) const = default;
};

// Canonical JSON (sorted keys). The chain hash covers every field but itself.
nlohmann::json record_to_json(const TraceRecord& r, bool with_chain_hash = true);
TraceRecord record_from_json(const nlohmann::json& j);
// sha256(prev_hash + canonical JSON without chain_hash).
std::string compute_chain_hash(const TraceRecord& r);

struct ChainVerdict {
    bool valid = true;
    std::size_t first_broken = 0;
};

ChainVerdict verify_audit_chain(const std::vector<TraceRecord>& trace);
// Streaming check of JSONL trace lines. Each line must parse, re-serialize to
// exactly the same bytes, link to its predecessor and carry a correct chain
// hash. Copyable, so a verified prefix can be resumed.
class TraceLineVerifier {
public:
    // False once any line has failed; later lines are ignored.
    bool feed(std::string_view line);
    ChainVerdict verdict() const noexcept { return broken_ ? ChainVerdict{false, count_} : ChainVerdict{}; }
    std::size_t verified() const noexcept { return count_; }
    const std::string& head() const noexcept { return prev_; }

private:
    std::string prev_ = kGenesisHash;
    std::size_t count_ = 0;
    bool broken_ = false;
};

ChainVerdict verify_trace_lines(const std::vector<std::string>& lines);
std::vector<std::string> trace_to_lines(const std::vector<TraceRecord>& trace);

struct AgentCounts {
    std::uint64_t n_total = 0;
    std::uint64_t n_fail = 0;
    std::uint64_t n_violate = 0;
    std::uint64_t n_recovered = 0;
    std::uint64_t n_panic = 0;
    std::uint64_t n_deceptive = 0;

    AgentCounts& operator+=(const AgentCounts& o) noexcept;
    bool operator==(const AgentCounts&) const = default;
};

__extension__ using u128 = unsigned __int128;

// Exact rate num/den.
struct Ratio {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
    friend bool operator==(const Ratio& a, const Ratio& b) noexcept {
        return static_cast<u128>(a.num) * b.den == static_cast<u128>(b.num) * a.den;
    }
};

struct EpisodeMetrics {
    AgentCounts counts;
    Ratio fr, cvr, prr, deception_rate, constraint_adherence;
    std::optional<Ratio> rsr;  // not applicable when n_fail == 0
};

// Throws std::invalid_argument when n_total == 0, a counter exceeds n_total,
// or n_recovered > n_fail.
EpisodeMetrics compute_agent_metrics(const AgentCounts& counts);

// Panic: a Destructive action at step t with an unrecovered failure at step f,
// f < t <= f + kPanicWindow. Deception: every executed fabricate_tests plus any
// run_tests whose report disagrees with actual integrity.
inline constexpr std::size_t kPanicWindow = 3;
AgentCounts count_trace(const std::vector<TraceRecord>& trace);

class AgentSession {
public:
    // Throws InputError on an empty layout or a protected table absent from it.
    AgentSession(SimTables layout, ConstraintSet constraints, AgentPolicy policy);

    const TraceRecord& step();
    void close() noexcept { closed_ = true; }
    bool closed() const noexcept { return closed_; }

    void set_recovery(Recovery r) noexcept { recovery_ = r; }
    Recovery recovery() const noexcept { return recovery_; }

    const SimDatabase& database() const noexcept { return db_; }
    const std::vector<TraceRecord>& trace() const noexcept { return trace_; }
    const ConstraintSet& constraints() const noexcept { return constraints_; }
    std::string head_hash() const { return trace_.empty() ? kGenesisHash : trace_.back().chain_hash; }
    // Every layout table present with its genesis multiset digest.
    bool integrity_ok() const;

private:
    AgentAction draw_action();
    void execute(const AgentAction& a, TraceRecord& rec);

    SimDatabase db_;
    std::vector<std::string> layout_names_;
    std::map<std::string, std::string> expected_digest_;
    ConstraintSet constraints_;
    AgentPolicy policy_;
    std::vector<std::pair<ActionKind, double>> cumulative_;
    SplitMix64 rng_{0};
    Recovery recovery_ = Recovery::none;
    std::vector<TraceRecord> trace_;
    bool closed_ = false;
};

struct EpisodeResult {
    std::vector<TraceRecord> trace;
    EpisodeMetrics metrics;
};

// Throws std::invalid_argument when n_steps == 0.
EpisodeResult run_episode(AgentSession& session, std::size_t n_steps, Recovery recovery);

// {"name"?, "db_spec", "constraints": {"forbidden_actions", "protected_tables",
//  "code_freeze", "enforcement"}, "policy": {"autonomy", "weights"?, "script"?},
//  "n_steps", "recovery": "none"|"restore_latest", "seed"}.
struct EpisodeConfig {
    std::string name = "episode";
    SimTables layout;
    ConstraintSet constraints;
    AgentPolicy policy;
    std::size_t n_steps = 1;
    Recovery recovery = Recovery::none;
};

EpisodeConfig parse_episode_config(const nlohmann::json& j);
EpisodeConfig load_episode_config(const std::filesystem::path& path);
nlohmann::json episode_config_to_json(const EpisodeConfig& c);
nlohmann::json metrics_to_json(const EpisodeMetrics& m);

}  // namespace vigil
