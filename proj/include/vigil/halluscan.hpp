#pragma once

#include "vigil/syntax.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vigil {

// Known modules, their members, and the keyword parameters some members
// accept. Dotted module names ("os.path") are modules in their own right.
struct KnowledgeBase {
    std::map<std::string, std::set<std::string>> modules;
    std::map<std::pair<std::string, std::string>, std::set<std::string>> members;
    std::string version;

    bool has_module(std::string_view name) const;
    bool has_member(std::string_view module, std::string_view member) const;
    // nullptr when the member has no parameter list (any keyword accepted).
    const std::set<std::string>* params(std::string_view module, std::string_view member) const;
};

// {"version": "1.x", "modules": {name: [members]}, "params": {"module.member": [names]}}.
// The major schema version must be 1. Throws InputError on unreadable files,
// unknown versions, duplicate module entries, and params entries naming an
// unknown module or member.
KnowledgeBase load_kb(const std::filesystem::path& path);
KnowledgeBase parse_kb(std::string_view json_text, const std::string& source = "<memory>");

enum class HalluKind { FabricatedModule, FakeAPI, ParameterHallucination };

std::string_view to_string(HalluKind k);

struct HalluFinding {
    HalluKind kind = HalluKind::FabricatedModule;
    // FabricatedModule: module; FakeAPI: module.member; ParameterHallucination: parameter.
    std::string symbol;
    syntax::Span span;
    // FakeAPI: module; ParameterHallucination: module.member; FabricatedModule: "".
    std::string context;

    bool operator==(const HalluFinding&) const = default;
};

// Sorted by (start line, kind). Names not traceable to an import are skipped.
std::vector<HalluFinding> detect_hallucinations(const syntax::SourceTree& tree, const KnowledgeBase& kb);

struct KbVerdict {
    bool module_known = false;
    std::string module;                 // longest known module prefix
    std::optional<bool> member_known;   // unset when `dotted` names a module
    std::optional<bool> param_accepted;  // unset when no param was asked or member unknown
};

KbVerdict kb_lookup(const KnowledgeBase& kb, std::string_view dotted, std::optional<std::string_view> param = {});

}  // namespace vigil
