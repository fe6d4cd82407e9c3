#include "vigil/vulnscan.hpp"

#include "vigil/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vigil {

using syntax::Node;
using syntax::NodeKind;
using json = nlohmann::json;

std::string_view to_string(Severity s) {
    switch (s) {
        case Severity::LOW: return "LOW";
        case Severity::MEDIUM: return "MEDIUM";
        case Severity::HIGH: return "HIGH";
    }
    return "LOW";
}

std::optional<Severity> parse_severity(std::string_view s) {
    if (s == "LOW") return Severity::LOW;
    if (s == "MEDIUM") return Severity::MEDIUM;
    if (s == "HIGH") return Severity::HIGH;
    return std::nullopt;
}

namespace {

constexpr std::array<std::pair<PatternKind, std::string_view>, 5> kPatternNames = {{
    {PatternKind::StringBuildSink, "string_build_sink"},
    {PatternKind::ShellSink, "shell_sink"},
    {PatternKind::DynamicEval, "dynamic_eval"},
    {PatternKind::HardcodedCredential, "hardcoded_credential"},
    {PatternKind::UnvalidatedInput, "unvalidated_input"},
}};

std::optional<PatternKind> parse_pattern_kind(std::string_view s) {
    for (const auto& [k, name] : kPatternNames) {
        if (name == s) return k;
    }
    return std::nullopt;
}

bool contains(const std::vector<std::string>& v, std::string_view s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

std::string last_component(std::string_view dotted) {
    const auto dot = dotted.rfind('.');
    return std::string(dot == std::string_view::npos ? dotted : dotted.substr(dot + 1));
}

// What the straight-line walk knows about a bound name.
struct Binding {
    bool literal = false;     // value is a compile-time literal (string, number, literal collection)
    bool dynamic_build = false;  // value is a string built with non-literal parts
    bool argv_list = false;   // value is a list/tuple display
    bool tainted = false;     // value derives from an external-input source call
    std::string import_path;  // set when the name aliases an imported module or member
};

using Env = std::map<std::string, Binding>;

class Scanner {
public:
    Scanner(const RuleRegistry& registry) : registry_(registry) {
        for (const auto& r : registry_.rules) {
            if (r.kind == PatternKind::HardcodedCredential && !r.name_regex.empty()) {
                credential_res_.emplace(r.rule_id, std::regex(r.name_regex, std::regex::icase | std::regex::ECMAScript));
            }
        }
    }

    std::vector<VulnFinding> run(const syntax::SourceTree& tree) {
        Env env;
        scan_block(tree.nodes, env);
        std::sort(findings_.begin(), findings_.end(), [](const VulnFinding& a, const VulnFinding& b) {
            if (a.span.start != b.span.start) return a.span.start < b.span.start;
            if (a.rule_id != b.rule_id) return a.rule_id < b.rule_id;
            return a.span.end < b.span.end;
        });
        findings_.erase(std::unique(findings_.begin(), findings_.end()), findings_.end());
        return std::move(findings_);
    }

private:
    void scan_block(const std::vector<Node>& stmts, Env& env) {
        for (const Node& stmt : stmts) scan_statement(stmt, env);
    }

    void scan_statement(const Node& stmt, Env& env) {
        switch (stmt.kind) {
            case NodeKind::Import: {
                const std::string bound = stmt.alias.empty() ? stmt.text.substr(0, stmt.text.find('.')) : stmt.alias;
                env[bound] = Binding{.import_path = stmt.alias.empty() ? bound : stmt.text};
                return;
            }
            case NodeKind::FromImport:
                if (stmt.member != "*") {
                    env[stmt.alias.empty() ? stmt.member : stmt.alias] = Binding{.import_path = stmt.text + "." + stmt.member};
                }
                return;
            case NodeKind::FunctionDef: {
                Env inner = env;
                for (const auto& p : stmt.names) inner.erase(p);
                scan_block(stmt.children, inner);
                env.erase(stmt.text);
                return;
            }
            case NodeKind::Assign: {
                const bool has_value = stmt.children.size() > stmt.positional;
                if (!has_value) return;
                const Node& value = stmt.children.back();
                check_expression(value, env);
                for (std::size_t i = 0; i < stmt.positional; ++i) check_expression(stmt.children[i], env);
                check_credential(stmt);
                Binding b = describe(value, env);
                if (stmt.op != "=") {
                    // Augmented assignment keeps the old value in the mix.
                    for (const auto& name : stmt.names) {
                        const Binding old = lookup(name, env);
                        Binding merged = b;
                        merged.tainted = b.tainted || old.tainted;
                        merged.literal = b.literal && old.literal;
                        merged.dynamic_build = (b.dynamic_build || old.dynamic_build || !merged.literal);
                        merged.import_path.clear();
                        env[name] = merged;
                    }
                    return;
                }
                for (const auto& name : stmt.names) env[name] = b;
                return;
            }
            default:
                check_expression(stmt, env);
                clear_sanitized(stmt, env);
        }
    }

    static Binding lookup(const std::string& name, const Env& env) {
        const auto it = env.find(name);
        return it == env.end() ? Binding{} : it->second;
    }

    // ---- value classification -----------------------------------------
    bool is_literal(const Node& n, const Env& env) const {
        switch (n.kind) {
            case NodeKind::StringLit:
            case NodeKind::NumberLit:
                return true;
            case NodeKind::Name:
                if (n.text == "True" || n.text == "False" || n.text == "None") return true;
                return lookup(n.text, env).literal;
            case NodeKind::BinOpConcat:
                return is_literal(n.children[0], env) && is_literal(n.children[1], env);
            case NodeKind::FormatExpr:
                return !n.interpolates;
            case NodeKind::Compound:
                if (n.op == "list" || n.op == "tuple" || n.op == "set" || n.op == "dict") {
                    return std::all_of(n.children.begin(), n.children.end(),
                                       [&](const Node& c) { return is_literal(c, env); });
                }
                return false;
            default:
                return false;
        }
    }

    static bool is_format_call(const Node& n) {
        if (n.kind != NodeKind::Call) return false;
        const Node& c = syntax::callee(n);
        if (c.kind != NodeKind::Attribute || c.names.size() != 1 || c.names.back() != "format") return false;
        const Node& base = c.children.front();
        return base.kind == NodeKind::StringLit || base.kind == NodeKind::FormatExpr;
    }

    // A string assembled by +, %, f-string fields or str.format with at
    // least one non-literal part.
    bool is_dynamic_build(const Node& n, const Env& env) const {
        switch (n.kind) {
            case NodeKind::BinOpConcat:
                return !is_literal(n, env);
            case NodeKind::FormatExpr:
                return n.interpolates;
            case NodeKind::Call:
                if (!is_format_call(n)) return false;
                for (std::size_t i = 1; i < n.children.size(); ++i) {
                    if (!is_literal(n.children[i], env)) return true;
                }
                return false;
            case NodeKind::Name:
                return lookup(n.text, env).dynamic_build;
            default:
                return false;
        }
    }

    bool is_argv_list(const Node& n, const Env& env) const {
        if (n.kind == NodeKind::Compound) return n.op == "list" || n.op == "tuple";
        if (n.kind == NodeKind::Name) return lookup(n.text, env).argv_list;
        return false;
    }

    bool is_sanitizer(const Node& call) const {
        const std::string leaf = syntax::callee_leaf(call);
        for (const auto& r : registry_.rules) {
            if (r.kind != PatternKind::UnvalidatedInput) continue;
            for (const auto& p : r.sanitizer_prefixes) {
                if (starts_with_ci(leaf, p)) return true;
            }
        }
        return false;
    }

    std::string resolve_callee(const Node& call, const Env& env) const {
        const Node& c = syntax::callee(call);
        std::string name;
        if (c.kind == NodeKind::Name) {
            name = c.text;
        } else if (c.kind == NodeKind::Attribute && c.children.front().kind == NodeKind::Name) {
            name = c.text;
        } else {
            return {};
        }
        const auto dot = name.find('.');
        const std::string root = name.substr(0, dot);
        const auto it = env.find(root);
        if (it != env.end() && !it->second.import_path.empty()) {
            return it->second.import_path + (dot == std::string::npos ? "" : name.substr(dot));
        }
        return name;
    }

    bool is_source(const Node& call, const Env& env) const {
        const std::string resolved = resolve_callee(call, env);
        const std::string text = syntax::callee_name(call);
        for (const auto& r : registry_.rules) {
            if (r.kind != PatternKind::UnvalidatedInput) continue;
            for (const auto& s : r.sources) {
                for (const std::string* cand : {&resolved, &text}) {
                    if (*cand == s || (cand->size() > s.size() && cand->ends_with("." + s))) return true;
                }
            }
        }
        return false;
    }

    bool is_tainted(const Node& n, const Env& env) const {
        switch (n.kind) {
            case NodeKind::Name:
                return lookup(n.text, env).tainted;
            case NodeKind::Call:
                if (is_sanitizer(n)) return false;
                if (is_source(n, env)) return true;
                break;
            case NodeKind::Compound:
                if (n.op == "lambda") return false;
                break;
            default:
                break;
        }
        return std::any_of(n.children.begin(), n.children.end(), [&](const Node& c) { return is_tainted(c, env); });
    }

    Binding describe(const Node& value, const Env& env) const {
        Binding b;
        b.literal = is_literal(value, env);
        b.dynamic_build = is_dynamic_build(value, env);
        b.argv_list = is_argv_list(value, env);
        b.tainted = is_tainted(value, env);
        if (value.kind == NodeKind::Name || (value.kind == NodeKind::Attribute && value.children.front().kind == NodeKind::Name)) {
            const std::string root = value.text.substr(0, value.text.find('.'));
            const auto it = env.find(root);
            if (it != env.end() && !it->second.import_path.empty()) {
                const auto dot = value.text.find('.');
                b.import_path = it->second.import_path + (dot == std::string::npos ? "" : value.text.substr(dot));
            }
        }
        return b;
    }

    // A standalone sanitizer call (validate_id(uid)) vouches for its name
    // arguments from here on.
    void clear_sanitized(const Node& stmt, Env& env) const {
        if (stmt.kind != NodeKind::Call || !is_sanitizer(stmt)) return;
        for (std::size_t i = 1; i < stmt.children.size(); ++i) {
            const Node& arg = stmt.children[i];
            if (arg.kind == NodeKind::Name) {
                if (auto it = env.find(arg.text); it != env.end()) it->second.tainted = false;
            }
        }
    }

    // ---- sinks ---------------------------------------------------------
    bool sink_matches(const Rule& r, const Node& call, const Env& env) const {
        switch (r.kind) {
            case PatternKind::StringBuildSink:
                return contains(r.callees, syntax::callee_leaf(call));
            case PatternKind::ShellSink: {
                const std::string resolved = resolve_callee(call, env);
                const auto dot = resolved.rfind('.');
                if (dot == std::string::npos) return false;
                return contains(r.modules, resolved.substr(0, dot)) && contains(r.callees, resolved.substr(dot + 1));
            }
            case PatternKind::DynamicEval: {
                const Node& c = syntax::callee(call);
                if (c.kind == NodeKind::Name) {
                    if (!contains(r.callees, c.text)) return false;
                    const auto it = env.find(c.text);
                    return it == env.end() || it->second.import_path.empty() ||
                           it->second.import_path == "builtins." + c.text;
                }
                const std::string resolved = resolve_callee(call, env);
                return resolved.starts_with("builtins.") && contains(r.callees, last_component(resolved));
            }
            default:
                return false;
        }
    }

    const Node* command_argument(const Node& call) const {
        if (call.positional > 0) return &call.children[1];
        for (const auto& [name, value] : syntax::keyword_args(call)) {
            if (name == "args" || name == "cmd" || name == "command") return value;
        }
        return nullptr;
    }

    static bool literal_false(const Node& n) {
        if (n.kind == NodeKind::Name) return n.text == "False" || n.text == "None";
        if (n.kind == NodeKind::NumberLit) return n.text == "0";
        return false;
    }

    void report(const Rule& r, const Node& at, std::string evidence) {
        findings_.push_back(VulnFinding{r.cwe_id, r.severity, at.span, std::move(evidence), r.rule_id});
    }

    void check_call(const Node& call, const Env& env) {
        const std::string name = syntax::callee_name(call);
        bool any_sink = false;
        for (const auto& r : registry_.rules) {
            if (!sink_matches(r, call, env)) continue;
            any_sink = true;
            switch (r.kind) {
                case PatternKind::StringBuildSink: {
                    const Node* arg = call.positional ? &call.children[1] : nullptr;
                    if (arg && is_dynamic_build(*arg, env)) {
                        report(r, call, name + "() receives a query string built from non-literal parts");
                    }
                    break;
                }
                case PatternKind::ShellSink: {
                    bool shell = false;
                    for (const auto& [kw, value] : syntax::keyword_args(call)) {
                        if (contains(r.shell_keywords, kw) && !literal_false(*value)) shell = true;
                    }
                    const Node* cmd = command_argument(call);
                    const bool dynamic_cmd = cmd && !is_literal(*cmd, env) && !is_argv_list(*cmd, env);
                    if (shell) {
                        report(r, call, name + "() invoked with a shell-enabling keyword argument");
                    } else if (dynamic_cmd) {
                        report(r, call, name + "() invoked with a non-literal command string");
                    }
                    break;
                }
                case PatternKind::DynamicEval:
                    if (call.positional > 0 && !is_literal(call.children[1], env)) {
                        report(r, call, name + "() evaluates a non-literal argument");
                    }
                    break;
                default:
                    break;
            }
        }
        if (!any_sink) return;
        for (std::size_t i = 1; i < call.children.size(); ++i) {
            if (!is_tainted(call.children[i], env)) continue;
            for (const auto& r : registry_.rules) {
                if (r.kind == PatternKind::UnvalidatedInput) {
                    report(r, call, name + "() receives external input without validation");
                }
            }
            break;
        }
    }

    void check_expression(const Node& n, const Env& env) {
        if (n.kind == NodeKind::FunctionDef) return;
        if (n.kind == NodeKind::Call) check_call(n, env);
        for (const auto& c : n.children) check_expression(c, env);
    }

    void check_credential(const Node& assign) {
        const Node& value = assign.children.back();
        if (value.kind != NodeKind::StringLit || value.text.empty()) return;
        for (const auto& r : registry_.rules) {
            if (r.kind != PatternKind::HardcodedCredential) continue;
            const auto re = credential_res_.find(r.rule_id);
            if (re == credential_res_.end()) continue;
            for (const auto& target : assign.names) {
                const std::string leaf = last_component(target);
                if (std::regex_search(leaf, re->second)) {
                    report(r, assign, "string literal assigned to credential-like name '" + target + "'");
                    break;
                }
            }
        }
    }

    const RuleRegistry& registry_;
    std::map<std::string, std::regex> credential_res_;
    std::vector<VulnFinding> findings_;
};

std::vector<std::string> string_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
    return out;
}

}  // namespace

std::string_view to_string(PatternKind k) {
    for (const auto& [kind, name] : kPatternNames) {
        if (kind == k) return name;
    }
    return "string_build_sink";
}

RuleRegistry RuleRegistry::baseline() {
    RuleRegistry reg;
    reg.version = "1.0";
    reg.rules.push_back(Rule{.rule_id = "VG-CMD-001",
                             .cwe_id = "CWE-78",
                             .severity = Severity::HIGH,
                             .kind = PatternKind::ShellSink,
                             .description = "OS command injection: shell execution with shell=True or a non-literal command",
                             .callees = {"system", "popen", "call", "run", "check_call", "check_output", "Popen"},
                             .modules = {"os", "subprocess"},
                             .shell_keywords = {"shell"}});
    reg.rules.push_back(Rule{.rule_id = "VG-CRED-001",
                             .cwe_id = "CWE-798",
                             .severity = Severity::MEDIUM,
                             .kind = PatternKind::HardcodedCredential,
                             .description = "Hard-coded credential: non-empty string literal bound to a credential-like name",
                             .name_regex = "(^|_)(password|passwd|secret|api_key|apikey|token)(_|$)"});
    reg.rules.push_back(Rule{.rule_id = "VG-EVAL-001",
                             .cwe_id = "CWE-95",
                             .severity = Severity::HIGH,
                             .kind = PatternKind::DynamicEval,
                             .description = "Eval injection: eval/exec on a non-literal argument",
                             .callees = {"eval", "exec"}});
    reg.rules.push_back(Rule{.rule_id = "VG-INPUT-001",
                             .cwe_id = "CWE-20",
                             .severity = Severity::MEDIUM,
                             .kind = PatternKind::UnvalidatedInput,
                             .description = "Improper input validation: external input reaches a sink without validate/sanitize/escape",
                             .sources = {"input", "raw_input", "sys.stdin.readline", "sys.stdin.read",
                                         "request.args.get", "request.form.get", "request.values.get",
                                         "request.get_json", "os.getenv", "os.environ.get"},
                             .sanitizer_prefixes = {"validate", "sanitize", "escape"}});
    reg.rules.push_back(Rule{.rule_id = "VG-SQL-001",
                             .cwe_id = "CWE-89",
                             .severity = Severity::HIGH,
                             .kind = PatternKind::StringBuildSink,
                             .description = "SQL injection: query string built by concatenation, %-format or interpolation",
                             .callees = {"execute", "executescript"}});
    return reg;
}

const Rule* RuleRegistry::find(std::string_view rule_id) const {
    for (const auto& r : rules) {
        if (r.rule_id == rule_id) return &r;
    }
    return nullptr;
}

RuleRegistry parse_registry(std::string_view json_text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InputError(source + ": invalid JSON: " + e.what());
    }
    RuleRegistry reg;
    try {
        reg.version = doc.at("version").get<std::string>();
        std::set<std::string> ids;
        for (const auto& jr : doc.at("rules")) {
            Rule r;
            r.rule_id = jr.at("rule_id").get<std::string>();
            if (r.rule_id.empty()) throw InputError(source + ": empty rule_id");
            if (!ids.insert(r.rule_id).second) throw InputError(source + ": duplicate rule_id '" + r.rule_id + "'");
            r.cwe_id = jr.at("cwe").get<std::string>();
            const auto sev = parse_severity(jr.at("severity").get<std::string>());
            if (!sev) throw InputError(source + ": rule '" + r.rule_id + "' has unknown severity");
            r.severity = *sev;
            r.description = jr.value("description", "");
            const json& p = jr.at("pattern");
            const auto kind = parse_pattern_kind(p.at("kind").get<std::string>());
            if (!kind) throw InputError(source + ": rule '" + r.rule_id + "' has unknown pattern kind");
            r.kind = *kind;
            r.callees = string_list(p, "callees");
            r.modules = string_list(p, "modules");
            r.shell_keywords = string_list(p, "shell_keywords");
            r.name_regex = p.value("name_regex", "");
            r.sources = string_list(p, "sources");
            r.sanitizer_prefixes = string_list(p, "sanitizer_prefixes");
            if (r.kind == PatternKind::HardcodedCredential) {
                try {
                    std::regex probe(r.name_regex);
                } catch (const std::regex_error&) {
                    throw InputError(source + ": rule '" + r.rule_id + "' has an invalid name_regex");
                }
            }
            reg.rules.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw InputError(source + ": malformed rule registry: " + e.what());
    }
    return reg;
}

RuleRegistry load_registry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read rule registry: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_registry(buf.str(), path.string());
}

std::string registry_to_json(const RuleRegistry& registry) {
    json doc;
    doc["version"] = registry.version;
    doc["rules"] = json::array();
    for (const auto& r : registry.rules) {
        json p;
        p["kind"] = to_string(r.kind);
        if (!r.callees.empty()) p["callees"] = r.callees;
        if (!r.modules.empty()) p["modules"] = r.modules;
        if (!r.shell_keywords.empty()) p["shell_keywords"] = r.shell_keywords;
        if (!r.name_regex.empty()) p["name_regex"] = r.name_regex;
        if (!r.sources.empty()) p["sources"] = r.sources;
        if (!r.sanitizer_prefixes.empty()) p["sanitizer_prefixes"] = r.sanitizer_prefixes;
        doc["rules"].push_back({{"rule_id", r.rule_id},
                                {"cwe", r.cwe_id},
                                {"severity", to_string(r.severity)},
                                {"description", r.description},
                                {"pattern", p}});
    }
    return doc.dump(2) + "\n";
}

std::vector<VulnFinding> scan_vulns(const syntax::SourceTree& tree, const RuleRegistry& registry) {
    if (registry.rules.empty()) return {};
    return Scanner(registry).run(tree);
}

std::uint64_t severity_score(std::span<const VulnFinding> findings) {
    std::uint64_t total = 0;
    for (const auto& f : findings) total += severity_weight(f.severity);
    return total;
}

double vulnerability_density(std::span<const VulnFinding> findings, std::size_t loc) {
    if (loc == 0) throw std::invalid_argument("vulnerability_density: loc must be >= 1");
    return static_cast<double>(severity_score(findings)) / static_cast<double>(loc);
}

SeverityHistogram severity_histogram(std::span<const VulnFinding> findings) {
    SeverityHistogram h;
    for (const auto& f : findings) ++h[f.severity];
    return h;
}

std::size_t cwe_diversity(std::span<const VulnFinding> findings) {
    std::set<std::string> ids;
    for (const auto& f : findings) ids.insert(f.cwe_id);
    return ids.size();
}

}  // namespace vigil
