#include "vigil/halluscan.hpp"

#include "vigil/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vigil {

using json = nlohmann::json;
using syntax::Node;
using syntax::NodeKind;

bool KnowledgeBase::has_module(std::string_view name) const { return modules.contains(std::string(name)); }

bool KnowledgeBase::has_member(std::string_view module, std::string_view member) const {
    const auto it = modules.find(std::string(module));
    return it != modules.end() && it->second.contains(std::string(member));
}

const std::set<std::string>* KnowledgeBase::params(std::string_view module, std::string_view member) const {
    const auto it = members.find({std::string(module), std::string(member)});
    return it == members.end() ? nullptr : &it->second;
}

std::string_view to_string(HalluKind k) {
    switch (k) {
        case HalluKind::FabricatedModule: return "FabricatedModule";
        case HalluKind::FakeAPI: return "FakeAPI";
        case HalluKind::ParameterHallucination: return "ParameterHallucination";
    }
    return "FabricatedModule";
}

KnowledgeBase parse_kb(std::string_view json_text, const std::string& source) {
    // nlohmann keeps the last of duplicate keys silently, so duplicates are
    // caught during parsing.
    struct Level {
        std::string name;
        std::set<std::string> keys;
    };
    std::vector<Level> levels;
    std::string pending_key;
    std::string duplicate;
    json::parser_callback_t cb = [&](int, json::parse_event_t event, json& parsed) {
        switch (event) {
            case json::parse_event_t::object_start:
                levels.push_back({pending_key, {}});
                break;
            case json::parse_event_t::object_end:
                levels.pop_back();
                break;
            case json::parse_event_t::key: {
                pending_key = parsed.get<std::string>();
                if (!levels.back().keys.insert(pending_key).second && duplicate.empty()) {
                    const std::string& parent = levels.back().name;
                    duplicate = parent == "modules"  ? "duplicate module entry '" + pending_key + "'"
                                : parent == "params" ? "duplicate params entry '" + pending_key + "'"
                                                     : "duplicate key '" + pending_key + "'";
                }
                break;
            }
            default:
                break;
        }
        return true;
    };
    json doc;
    try {
        doc = json::parse(json_text, cb);
    } catch (const json::parse_error& e) {
        throw InputError(source + ": invalid JSON: " + e.what());
    }
    if (!duplicate.empty()) throw InputError(source + ": " + duplicate);

    KnowledgeBase kb;
    try {
        kb.version = doc.at("version").get<std::string>();
        if (kb.version != "1" && !kb.version.starts_with("1.")) {
            throw InputError(source + ": unknown knowledge-base schema version '" + kb.version + "'");
        }
        for (const auto& [name, list] : doc.at("modules").items()) {
            auto& members = kb.modules[name];
            for (const auto& m : list) members.insert(m.get<std::string>());
        }
        if (doc.contains("params")) {
            for (const auto& [key, list] : doc.at("params").items()) {
                const auto dot = key.rfind('.');
                if (dot == std::string::npos) throw InputError(source + ": params key '" + key + "' is not module.member");
                const std::string module = key.substr(0, dot);
                const std::string member = key.substr(dot + 1);
                if (!kb.has_module(module)) {
                    throw InputError(source + ": params entry '" + key + "' references unknown module '" + module + "'");
                }
                if (!kb.has_member(module, member)) {
                    throw InputError(source + ": params entry '" + key + "' references unknown member '" + member + "'");
                }
                auto& names = kb.members[{module, member}];
                for (const auto& p : list) names.insert(p.get<std::string>());
            }
        }
    } catch (const json::exception& e) {
        throw InputError(source + ": malformed knowledge base: " + e.what());
    }
    return kb;
}

KnowledgeBase load_kb(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read knowledge base: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kb(buf.str(), path.string());
}

namespace {

// What an in-scope name refers to: a known module, or a member of one.
struct Ref {
    std::string module;
    std::string member;  // empty for a module reference
};

using Env = std::map<std::string, Ref>;

std::vector<std::string> split_dots(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto dot = s.find('.', start);
        out.emplace_back(s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
        if (dot == std::string_view::npos) break;
        start = dot + 1;
    }
    return out;
}

class Detector {
public:
    explicit Detector(const KnowledgeBase& kb) : kb_(kb) {}

    std::vector<HalluFinding> run(const syntax::SourceTree& tree) {
        Env env;
        block(tree.nodes, env);
        std::stable_sort(findings_.begin(), findings_.end(), [](const HalluFinding& a, const HalluFinding& b) {
            if (a.span.start != b.span.start) return a.span.start < b.span.start;
            return a.kind < b.kind;
        });
        return std::move(findings_);
    }

private:
    void block(const std::vector<Node>& stmts, Env& env) {
        for (const Node& s : stmts) statement(s, env);
    }

    void statement(const Node& s, Env& env) {
        switch (s.kind) {
            case NodeKind::Import: {
                const bool known = kb_.has_module(s.text);
                if (!known) report(HalluKind::FabricatedModule, s.text, s.span, "");
                if (!s.alias.empty()) {
                    bind(env, s.alias, known ? std::optional<Ref>(Ref{s.text, ""}) : std::nullopt);
                } else {
                    const std::string root = s.text.substr(0, s.text.find('.'));
                    bind(env, root, kb_.has_module(root) ? std::optional<Ref>(Ref{root, ""}) : std::nullopt);
                }
                return;
            }
            case NodeKind::FromImport: {
                const std::string bound = s.alias.empty() ? s.member : s.alias;
                if (s.text.starts_with(".")) {
                    if (s.member != "*") bind(env, bound, std::nullopt);
                    return;
                }
                if (!kb_.has_module(s.text)) {
                    report(HalluKind::FabricatedModule, s.text, s.span, "");
                    if (s.member != "*") bind(env, bound, std::nullopt);
                    return;
                }
                if (s.member == "*") return;
                const std::string sub = s.text + "." + s.member;
                if (kb_.has_module(sub)) {
                    bind(env, bound, Ref{sub, ""});
                } else if (kb_.has_member(s.text, s.member)) {
                    bind(env, bound, Ref{s.text, s.member});
                } else {
                    report(HalluKind::FakeAPI, sub, s.span, s.text);
                    bind(env, bound, std::nullopt);
                }
                return;
            }
            case NodeKind::FunctionDef: {
                Env inner = env;
                for (const auto& p : s.names) inner.erase(p);
                block(s.children, inner);
                env.erase(s.text);
                return;
            }
            case NodeKind::Assign: {
                for (const auto& c : s.children) expression(c, env);
                std::optional<Ref> alias;
                if (s.children.size() > s.positional) alias = resolve_value(s.children.back(), env);
                for (const auto& name : s.names) {
                    if (name.find('.') == std::string::npos) bind(env, name, alias);
                }
                return;
            }
            default:
                expression(s, env);
        }
    }

    static void bind(Env& env, const std::string& name, std::optional<Ref> ref) {
        if (ref) env[name] = std::move(*ref);
        else env.erase(name);
    }

    // Resolve a Name/Attribute chain without reporting; used for aliases.
    std::optional<Ref> resolve_value(const Node& n, const Env& env) const {
        std::vector<std::string> parts;
        if (n.kind == NodeKind::Name) {
            parts = {n.text};
        } else if (n.kind == NodeKind::Attribute && n.children.front().kind == NodeKind::Name) {
            parts = split_dots(n.text);
        } else {
            return std::nullopt;
        }
        const auto it = env.find(parts.front());
        if (it == env.end()) return std::nullopt;
        Ref ref = it->second;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (!ref.member.empty()) return std::nullopt;
            const std::string sub = ref.module + "." + parts[i];
            if (kb_.has_module(sub)) {
                ref.module = sub;
            } else if (kb_.has_member(ref.module, parts[i])) {
                if (i + 1 != parts.size()) return std::nullopt;
                ref.member = parts[i];
            } else {
                return std::nullopt;
            }
        }
        return ref;
    }

    // Walk an attribute chain rooted at a bound name, reporting the first
    // component absent from the KB. Returns the member the full chain names,
    // if it names exactly one.
    std::optional<Ref> check_chain(const Node& attr, const Env& env) {
        const auto parts = split_dots(attr.text);
        const auto it = env.find(parts.front());
        if (it == env.end() || !it->second.member.empty()) return std::nullopt;
        std::string module = it->second.module;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const std::string sub = module + "." + parts[i];
            if (kb_.has_module(sub)) {
                module = sub;
                continue;
            }
            if (kb_.has_member(module, parts[i])) {
                if (i + 1 == parts.size()) return Ref{module, parts[i]};
                return std::nullopt;
            }
            report(HalluKind::FakeAPI, sub, attr.span, module);
            return std::nullopt;
        }
        return std::nullopt;
    }

    void expression(const Node& n, const Env& env) {
        switch (n.kind) {
            case NodeKind::Attribute:
                if (n.children.front().kind == NodeKind::Name) {
                    check_chain(n, env);
                    return;
                }
                break;
            case NodeKind::Call: {
                const Node& c = syntax::callee(n);
                std::optional<Ref> target;
                if (c.kind == NodeKind::Name) {
                    if (auto it = env.find(c.text); it != env.end() && !it->second.member.empty()) target = it->second;
                } else if (c.kind == NodeKind::Attribute && c.children.front().kind == NodeKind::Name) {
                    target = check_chain(c, env);
                } else {
                    expression(c, env);
                }
                if (target) check_keywords(n, *target);
                for (std::size_t i = 1; i < n.children.size(); ++i) expression(n.children[i], env);
                return;
            }
            case NodeKind::FunctionDef:
                return;
            default:
                break;
        }
        for (const auto& c : n.children) expression(c, env);
    }

    void check_keywords(const Node& call, const Ref& target) {
        const auto* accepted = kb_.params(target.module, target.member);
        if (!accepted) return;
        for (const auto& [name, value] : syntax::keyword_args(call)) {
            if (name == "**" || accepted->contains(name)) continue;
            report(HalluKind::ParameterHallucination, name, value->span, target.module + "." + target.member);
        }
    }

    void report(HalluKind kind, std::string symbol, syntax::Span span, std::string context) {
        findings_.push_back(HalluFinding{kind, std::move(symbol), span, std::move(context)});
    }

    const KnowledgeBase& kb_;
    std::vector<HalluFinding> findings_;
};

}  // namespace

std::vector<HalluFinding> detect_hallucinations(const syntax::SourceTree& tree, const KnowledgeBase& kb) {
    return Detector(kb).run(tree);
}

KbVerdict kb_lookup(const KnowledgeBase& kb, std::string_view dotted, std::optional<std::string_view> param) {
    KbVerdict v;
    const auto parts = split_dots(dotted);
    std::size_t used = 0;
    std::string prefix;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        prefix += (i ? "." : "") + parts[i];
        if (kb.has_module(prefix)) {
            v.module = prefix;
            used = i + 1;
        }
    }
    v.module_known = used > 0;
    if (!v.module_known || used == parts.size()) return v;
    const std::string& member = parts[used];
    v.member_known = kb.has_member(v.module, member) && used + 1 == parts.size();
    if (param && *v.member_known) {
        const auto* accepted = kb.params(v.module, member);
        v.param_accepted = accepted == nullptr || accepted->contains(std::string(*param));
    }
    return v;
}

}  // namespace vigil
