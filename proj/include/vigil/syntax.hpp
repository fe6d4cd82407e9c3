#pragma once

// Tolerant parser for the Python subset the detectors look at.
//
// Recognized: import / from-import, assignment (plain, chained, augmented,
// annotated), def headers with parameter lists, expression statements,
// calls with positional and keyword arguments, dotted attribute chains,
// string and number literals, `+` and `%` string building, f-strings, and the
// expression parts of control-flow headers. Any logical line the subset does
// not cover becomes an Opaque node spanning its physical lines; parsing never
// fails.
//
// Only `def` blocks nest: a FunctionDef owns the statements of its indented
// body as children. Bodies of other block headers (if/for/with/class/...) stay
// at the level of the header.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vigil::syntax {

enum class NodeKind {
    Import,
    FromImport,
    Assign,
    FunctionDef,
    Call,
    Attribute,
    Name,
    StringLit,
    NumberLit,
    BinOpConcat,
    FormatExpr,
    Compound,
    Opaque,
};

std::string_view to_string(NodeKind kind);

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const Span&) const = default;
};

// Payload fields by kind:
//   Import       text = module, alias = bound name ("" when none)
//   FromImport   text = module (leading dots kept for relative imports),
//                member = imported name or "*", alias = bound name or ""
//   Assign       children = targets..., value; positional = target count;
//                names = bound dotted names; op = "=", "+=", ..., or ":"
//                for a bare annotation (no value child)
//   FunctionDef  text = name, names = parameter names, children = body
//   Call         children = callee, positional args..., keyword values...;
//                positional = positional arg count; names = keyword names
//                ("**" for a dict splat)
//   Attribute    children = {base}; names = member chain; text = full dotted
//                chain when base is a Name ("os.path.join"), otherwise the
//                chain with an empty root (".upper")
//   Name         text = identifier
//   StringLit    text = literal value (adjacent literals joined)
//   NumberLit    text = source spelling
//   BinOpConcat  op = "+" or "%", children = {lhs, rhs}
//   FormatExpr   text = literal parts, interpolates = has {..} fields,
//                children = the interpolated expressions
//   Compound     op = construct ("list", "tuple", "dict", "set",
//                "subscript", "compare", "op:-", "unary", "lambda", ...)
//                children = parsed sub-expressions; opaque for taint
//   Opaque       text = raw source of the unparsed lines, no children
struct Node {
    NodeKind kind = NodeKind::Opaque;
    Span span;
    std::vector<Node> children;
    std::string text;
    std::string member;
    std::string alias;
    std::string op;
    std::vector<std::string> names;
    std::size_t positional = 0;
    bool interpolates = false;

    bool operator==(const Node&) const = default;
};

enum class LineClass { Blank, Comment, Code, Opaque };

struct SourceTree {
    std::vector<Node> nodes;
    std::size_t line_count = 0;
    std::size_t loc = 0;
    // One entry per physical line; Code and Opaque lines are covered by
    // statement spans, Blank and Comment lines are trivia.
    std::vector<LineClass> lines;
};

SourceTree parse_source(std::string_view code);

// Lines that are neither blank nor comment-only (first non-blank is '#').
std::size_t count_loc(std::string_view code);

// Call helpers.
const Node& callee(const Node& call);
std::span<const Node> positional_args(const Node& call);
std::vector<std::pair<std::string, const Node*>> keyword_args(const Node& call);
// Dotted name of the callee ("cur.execute", "eval", ".upper"); "" when the
// callee is neither a Name nor an Attribute.
std::string callee_name(const Node& call);
// Last component of callee_name.
std::string callee_leaf(const Node& call);

struct Query {
    NodeKind kind = NodeKind::Opaque;
    std::function<bool(const Node&)> predicate;
};

Query calls_with_leaf(std::string leaf);

// Pre-order traversal in source order.
std::vector<const Node*> iter_matches(const SourceTree& tree, const Query& query);
void walk(std::span<const Node> nodes, const std::function<void(const Node&)>& visit);

}  // namespace vigil::syntax
