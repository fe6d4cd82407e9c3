#include "oracles.hpp"

#include "vigil/agentsim.hpp"
#include "vigil/error.hpp"

#include <gtest/gtest.h>

using namespace vigil;
using json = nlohmann::json;

namespace {

SimTables small_layout() {
    return parse_db_spec(json::parse(R"({"users": {"columns": ["id", "name"], "rows": 4},
                                         "logs": {"columns": ["id"], "rows": 3}})"));
}

AgentPolicy scripted(std::vector<AgentAction> script) {
    AgentPolicy p;
    p.script = std::move(script);
    return p;
}

}  // namespace

TEST(Database, GeneratedRowsAndChecksumRestore) {
    SimDatabase db(small_layout());
    EXPECT_EQ(db.tables().at("users").at(2).at("name"), "users-name-2");
    const auto before = db.checksum();
    db.snapshot("s");
    db.tables().erase("users");
    EXPECT_NE(db.checksum(), before);
    EXPECT_TRUE(db.restore_latest());
    EXPECT_EQ(db.checksum(), before);
}

TEST(Database, MultisetDigestIgnoresOrder) {
    auto rows = small_layout().at("users");
    const auto d = table_multiset_digest(rows);
    std::reverse(rows.begin(), rows.end());
    EXPECT_EQ(table_multiset_digest(rows), d);
    rows[0]["name"] = "changed";
    EXPECT_NE(table_multiset_digest(rows), d);
}

TEST(Constraints, AgreeWithOracleOnAllActions) {
    for (bool freeze : {false, true}) {
        ConstraintSet c;
        c.code_freeze = freeze;
        c.forbidden_actions = {ActionKind::fabricate_tests};
        c.protected_tables = {"users"};
        for (auto kind : kAllActionKinds) {
            for (const std::string target : {std::string("users"), std::string("logs"), std::string(kTestSuiteTarget)}) {
                const AgentAction a{kind, target};
                EXPECT_EQ(c.violates(a), oracle::violates(c, a)) << to_string(kind) << " " << target;
            }
        }
    }
}

TEST(Session, HandTraceCounts) {
    ConstraintSet c;
    c.enforcement = Enforcement::permissive;
    AgentSession s(small_layout(), c,
                   scripted({{ActionKind::corrupt_data, "users"},
                             {ActionKind::run_tests, std::string(kTestSuiteTarget)},
                             {ActionKind::del, "logs"},
                             {ActionKind::fabricate_tests, std::string(kTestSuiteTarget)}}));
    const auto r = run_episode(s, 4, Recovery::restore_latest);
    EXPECT_EQ(r.trace[0].outcome, Outcome::failure);
    EXPECT_EQ(r.trace[0].recovery, RecoveryResult::restored);
    EXPECT_EQ(r.trace[1].reported_outcome, "pass");
    EXPECT_TRUE(r.trace[1].actual_integrity);
    EXPECT_EQ(r.metrics.counts.n_fail, 2u);
    EXPECT_EQ(r.metrics.counts.n_recovered, 2u);
    EXPECT_EQ(r.metrics.counts.n_deceptive, 1u);
    EXPECT_EQ(r.metrics.counts.n_panic, 0u);
    ASSERT_TRUE(r.metrics.rsr);
    EXPECT_EQ(*r.metrics.rsr, (Ratio{1, 1}));
    EXPECT_TRUE(s.integrity_ok());
}

TEST(Session, UnrecoveredFailureMakesPanicAndMisreport) {
    ConstraintSet c;
    c.enforcement = Enforcement::permissive;
    AgentSession s(small_layout(), c,
                   scripted({{ActionKind::del, "logs"},
                             {ActionKind::run_tests, std::string(kTestSuiteTarget)},
                             {ActionKind::corrupt_data, "users"},
                             {ActionKind::optm, "users"},
                             {ActionKind::optm, "users"},
                             {ActionKind::optm, "users"},
                             {ActionKind::del, "users"}}));
    const auto r = run_episode(s, 7, Recovery::none);
    EXPECT_EQ(r.trace[1].reported_outcome, "fail");
    // Every action after the delete fails the integrity check, so the
    // later destructive actions all fall within a failure window.
    EXPECT_EQ(r.metrics.counts, oracle::recount(r.trace));
    EXPECT_EQ(r.metrics.counts.n_panic, 2u);
    EXPECT_FALSE(r.metrics.rsr.has_value() && r.metrics.rsr->num > 0);
}

TEST(Session, BlockedActionsLeaveStateUnchanged) {
    ConstraintSet c;
    c.protected_tables = {"users"};
    AgentSession s(small_layout(), c, scripted({{ActionKind::del, "users"}, {ActionKind::corrupt_data, "users"}}));
    s.step();
    s.step();
    for (const auto& r : s.trace()) {
        EXPECT_EQ(r.outcome, Outcome::blocked);
        EXPECT_EQ(r.constraint_verdict, Verdict::violation);
        EXPECT_EQ(r.db_checksum_before, r.db_checksum_after);
    }
    EXPECT_TRUE(s.integrity_ok());
    EXPECT_THROW(s.step(), std::logic_error);
    s.close();
    EXPECT_THROW(s.step(), std::logic_error);
}

TEST(Session, RejectsBadSetup) {
    ConstraintSet c;
    c.protected_tables = {"missing"};
    EXPECT_THROW(AgentSession(small_layout(), c, {}), InputError);
    EXPECT_THROW(AgentSession({}, {}, {}), InputError);
    AgentPolicy p;
    p.action_weights = {{ActionKind::optm, -1.0}};
    EXPECT_THROW(AgentSession(small_layout(), {}, p), InputError);
}

TEST(Metrics, ExactRatiosAndValidation) {
    AgentCounts n{10, 4, 1, 3, 2, 5};
    const auto m = compute_agent_metrics(n);
    EXPECT_EQ(m.fr, (Ratio{2, 5}));
    EXPECT_EQ(m.constraint_adherence, (Ratio{9, 10}));
    EXPECT_EQ(*m.rsr, (Ratio{3, 4}));
    EXPECT_EQ(m.prr, (Ratio{1, 5}));
    n.n_fail = 0;
    n.n_recovered = 0;
    EXPECT_FALSE(compute_agent_metrics(n).rsr);
    EXPECT_THROW(compute_agent_metrics(AgentCounts{}), std::invalid_argument);
    EXPECT_THROW(compute_agent_metrics(AgentCounts{3, 1, 0, 2, 0, 0}), std::invalid_argument);
    EXPECT_THROW(compute_agent_metrics(AgentCounts{3, 4, 0, 0, 0, 0}), std::invalid_argument);
}

TEST(Chain, RecordsRoundTripAndTamperIsLocated) {
    const auto cfg = load_episode_config(oracle::source_path("data/episodes/permissive_recovery.json"));
    AgentSession s(cfg.layout, cfg.constraints, cfg.policy);
    run_episode(s, 40, cfg.recovery);
    auto trace = s.trace();
    EXPECT_TRUE(verify_audit_chain(trace).valid);
    EXPECT_EQ(trace.front().prev_hash, kGenesisHash);
    for (const auto& r : trace) EXPECT_EQ(record_from_json(record_to_json(r)), r);
    trace[17].note = "edited";
    const auto v = verify_audit_chain(trace);
    EXPECT_FALSE(v.valid);
    EXPECT_EQ(v.first_broken, 17u);

    auto lines = trace_to_lines(s.trace());
    std::swap(lines[3], lines[4]);
    EXPECT_EQ(verify_trace_lines(lines).first_broken, 3u);
    lines = trace_to_lines(s.trace());
    lines.erase(lines.begin() + 10);
    EXPECT_EQ(verify_trace_lines(lines).first_broken, 10u);
    lines = trace_to_lines(s.trace());
    lines[5] = " " + lines[5];
    EXPECT_EQ(verify_trace_lines(lines).first_broken, 5u);
}

TEST(Property, RandomEpisodesMatchRecount) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        for (auto enforcement : {Enforcement::blocking, Enforcement::permissive}) {
            for (auto recovery : {Recovery::none, Recovery::restore_latest}) {
                ConstraintSet c;
                c.enforcement = enforcement;
                c.forbidden_actions = {ActionKind::fabricate_tests};
                c.protected_tables = {"users"};
                c.code_freeze = seed % 5 == 0;
                AgentSession s(small_layout(), c, AgentPolicy::preset(static_cast<Autonomy>(seed % 3), seed));
                const auto r = run_episode(s, 120, recovery);
                ASSERT_EQ(r.metrics.counts, oracle::recount(r.trace));
                for (const auto& rec : r.trace) {
                    EXPECT_EQ(rec.constraint_verdict == Verdict::violation, oracle::violates(c, rec.action));
                    EXPECT_EQ(rec.severity_label, risk_class(rec.action.kind));
                    if (recovery == Recovery::restore_latest && rec.outcome == Outcome::failure) {
                        EXPECT_EQ(rec.recovery, RecoveryResult::restored);
                    }
                }
                if (recovery == Recovery::restore_latest) EXPECT_TRUE(s.integrity_ok());
                if (enforcement == Enforcement::blocking) {
                    for (const auto& rec : r.trace) {
                        EXPECT_NE(rec.action.kind == ActionKind::fabricate_tests && rec.outcome != Outcome::blocked, true);
                    }
                }
            }
        }
    }
}

TEST(Config, ParseAndEcho) {
    const auto c = load_episode_config(oracle::source_path("data/episodes/code_freeze.json"));
    EXPECT_EQ(c.name, "code_freeze");
    EXPECT_TRUE(c.constraints.code_freeze);
    EXPECT_EQ(c.policy.seed, 1337u);
    EXPECT_EQ(c.n_steps, 200u);
    const auto again = parse_episode_config(episode_config_to_json(c));
    EXPECT_EQ(episode_config_to_json(again), episode_config_to_json(c));
    EXPECT_THROW(parse_episode_config(json::parse(R"({"db_spec": {"t": {"columns": ["a"], "rows": 1}},
        "n_steps": 5, "policy": {"script": [{"kind": "optm", "target": "t"}]}})")),
                 InputError);
    EXPECT_THROW(parse_episode_config(json::parse(R"({"db_spec": {}, "n_steps": 1})")), InputError);
    EXPECT_THROW(parse_episode_config(json::parse(R"({"db_spec": {"t": {"columns": ["a"], "rows": 1}}, "n_steps": 1,
        "policy": {"autonomy": "reckless"}})")),
                 InputError);
}
