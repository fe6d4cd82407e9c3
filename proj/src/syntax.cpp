#include "vigil/syntax.hpp"

#include "syntax_lexer.hpp"

#include <algorithm>
#include <array>
#include <set>

namespace vigil::syntax {
namespace {

using detail::LogicalLine;
using detail::Tok;
using detail::Token;

struct ParseFailure {};

constexpr std::array<std::string_view, 35> kKeywords = {
    "False", "None",   "True",  "and",      "as",     "assert", "async", "await", "break",
    "class", "continue", "def", "del",      "elif",   "else",   "except", "finally", "for",
    "from",  "global", "if",    "import",   "in",     "is",     "lambda", "nonlocal", "not",
    "or",    "pass",   "raise", "return",   "try",    "while",  "with",  "yield",
};

bool is_keyword(std::string_view w) {
    return std::find(kKeywords.begin(), kKeywords.end(), w) != kKeywords.end();
}

constexpr std::array<std::string_view, 13> kAugAssign = {
    "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**=",
};

Node make(NodeKind kind, Span span) {
    Node n;
    n.kind = kind;
    n.span = span;
    return n;
}

Span join(Span a, Span b) { return {std::min(a.start, b.start), std::max(a.end, b.end)}; }

std::string dotted_of(const Node& n) {
    if (n.kind == NodeKind::Name) return n.text;
    if (n.kind == NodeKind::Attribute && !n.text.empty() && n.text.front() != '.') return n.text;
    return {};
}

void collect_target_names(const Node& n, std::vector<std::string>& out) {
    if (n.kind == NodeKind::Compound && (n.op == "tuple" || n.op == "list" || n.op == "starred")) {
        for (const auto& c : n.children) collect_target_names(c, out);
        return;
    }
    if (auto d = dotted_of(n); !d.empty()) out.push_back(std::move(d));
}

class Parser {
public:
    explicit Parser(const std::vector<Token>& tokens) : toks_(tokens) {}

    struct Line {
        std::vector<Node> nodes;
        bool opens_def = false;
    };

    Line parse_line() {
        Line out;
        const Token& t = peek();
        if (t.kind == Tok::Name && t.text == "async" && peek(1).kind == Tok::Name &&
            (peek(1).text == "def" || peek(1).text == "for" || peek(1).text == "with")) {
            advance();
        }
        const Token& head = peek();
        if (head.kind == Tok::Op && head.text == "@") {
            advance();
            out.nodes.push_back(parse_expr());
            expect_end();
            return out;
        }
        if (head.kind == Tok::Name) {
            const std::string& kw = head.text;
            if (kw == "def") return parse_def();
            if (kw == "class") return parse_class();
            if (kw == "if" || kw == "elif" || kw == "while") {
                advance();
                out.nodes.push_back(parse_named_expr());
                finish_header(out);
                return out;
            }
            if (kw == "else" || kw == "try" || kw == "finally") {
                advance();
                finish_header(out);
                return out;
            }
            if (kw == "except") {
                advance();
                if (is_op("*")) advance();
                if (!is_op(":")) {
                    out.nodes.push_back(parse_expr());
                    if (is_name("as")) {
                        advance();
                        expect_identifier();
                    }
                }
                finish_header(out);
                return out;
            }
            if (kw == "for") {
                advance();
                parse_target_list();
                expect_name("in");
                append_expr_list(out.nodes);
                finish_header(out);
                return out;
            }
            if (kw == "with") {
                advance();
                do {
                    out.nodes.push_back(parse_expr());
                    if (is_name("as")) {
                        advance();
                        parse_or();
                    }
                } while (accept_op(","));
                finish_header(out);
                return out;
            }
        }
        parse_simple_statements(out.nodes);
        return out;
    }

    Node parse_standalone_expr() {
        Node n = parse_expr();
        expect_end();
        return n;
    }

private:
    // ---- token helpers -------------------------------------------------
    const Token& peek(std::size_t ahead = 0) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    const Token& advance() {
        const Token& t = peek();
        if (pos_ < toks_.size() - 1) ++pos_;
        return t;
    }
    bool at_end() const { return peek().kind == Tok::End; }
    std::size_t last_line() const { return pos_ > 0 ? toks_[pos_ - 1].end_line : peek().line; }
    bool is_op(std::string_view op, std::size_t ahead = 0) const {
        return peek(ahead).kind == Tok::Op && peek(ahead).text == op;
    }
    bool is_name(std::string_view kw, std::size_t ahead = 0) const {
        return peek(ahead).kind == Tok::Name && peek(ahead).text == kw;
    }
    bool accept_op(std::string_view op) {
        if (!is_op(op)) return false;
        advance();
        return true;
    }
    const Token& expect_op(std::string_view op) {
        if (!is_op(op)) throw ParseFailure{};
        return advance();
    }
    void expect_name(std::string_view kw) {
        if (!is_name(kw)) throw ParseFailure{};
        advance();
    }
    const Token& expect_identifier() {
        if (peek().kind != Tok::Name || is_keyword(peek().text)) throw ParseFailure{};
        return advance();
    }
    void expect_end() const {
        if (!at_end()) throw ParseFailure{};
    }
    Span span_of(const Token& t) const { return {t.line, t.end_line}; }
    bool at_expr_stop() const {
        if (at_end()) return true;
        const Token& t = peek();
        if (t.kind != Tok::Op) return false;
        return t.text == ")" || t.text == "]" || t.text == "}" || t.text == "," || t.text == ":" ||
               t.text == "=" || t.text == ";";
    }

    // ---- statements ----------------------------------------------------
    void finish_header(Line& out) {
        expect_op(":");
        if (!at_end()) parse_simple_statements(out.nodes);
    }

    Line parse_def() {
        const Token& kw = advance();
        const Token& name = expect_identifier();
        Node def = make(NodeKind::FunctionDef, span_of(kw));
        def.text = name.text;
        expect_op("(");
        // Parameter names: the identifier opening each comma-separated
        // segment at depth 1, after an optional * or **.
        std::size_t depth = 1;
        bool segment_start = true;
        while (depth > 0) {
            const Token& t = advance();
            if (t.kind == Tok::End) throw ParseFailure{};
            if (t.kind == Tok::Op) {
                if (t.text == "(" || t.text == "[" || t.text == "{") ++depth;
                else if (t.text == ")" || t.text == "]" || t.text == "}") --depth;
                else if (t.text == "," && depth == 1) segment_start = true;
                continue;
            }
            if (segment_start && depth == 1 && t.kind == Tok::Name) def.names.push_back(t.text);
            segment_start = false;
        }
        if (accept_op("->")) parse_expr();
        const Token& colon = expect_op(":");
        def.span.end = colon.end_line;
        Line out;
        if (at_end()) {
            out.opens_def = true;
        } else {
            parse_simple_statements(def.children);
            for (const auto& c : def.children) def.span = join(def.span, c.span);
        }
        out.nodes.push_back(std::move(def));
        return out;
    }

    Line parse_class() {
        advance();
        expect_identifier();
        Line out;
        if (accept_op("(")) {
            if (!is_op(")")) {
                do {
                    if (is_op(")")) break;
                    if (peek().kind == Tok::Name && is_op("=", 1)) {
                        advance();
                        advance();
                    } else if (!accept_op("**")) {
                        accept_op("*");
                    }
                    out.nodes.push_back(parse_expr());
                } while (accept_op(","));
            }
            expect_op(")");
        }
        finish_header(out);
        return out;
    }

    void parse_simple_statements(std::vector<Node>& out) {
        do {
            if (at_end()) break;
            parse_simple_statement(out);
        } while (accept_op(";"));
        expect_end();
    }

    void parse_simple_statement(std::vector<Node>& out) {
        const Token& t = peek();
        if (t.kind == Tok::Name) {
            const std::string& kw = t.text;
            if (kw == "import") return parse_import(out);
            if (kw == "from") return parse_from_import(out);
            if (kw == "pass" || kw == "break" || kw == "continue") {
                advance();
                return;
            }
            if (kw == "global" || kw == "nonlocal") {
                advance();
                do {
                    expect_identifier();
                } while (accept_op(","));
                return;
            }
            if (kw == "return" || kw == "del") {
                advance();
                if (!at_expr_stop()) append_expr_list(out);
                return;
            }
            if (kw == "raise") {
                advance();
                if (!at_expr_stop()) {
                    out.push_back(parse_expr());
                    if (is_name("from")) {
                        advance();
                        out.push_back(parse_expr());
                    }
                }
                return;
            }
            if (kw == "assert") {
                advance();
                out.push_back(parse_expr());
                if (accept_op(",")) out.push_back(parse_expr());
                return;
            }
        }
        parse_expression_statement(out);
    }

    void parse_import(std::vector<Node>& out) {
        const Token& kw = advance();
        do {
            Node n = make(NodeKind::Import, span_of(kw));
            n.text = parse_dotted();
            if (is_name("as")) {
                advance();
                n.alias = expect_identifier().text;
            }
            out.push_back(std::move(n));
        } while (accept_op(","));
    }

    void parse_from_import(std::vector<Node>& out) {
        const Token& kw = advance();
        std::string module;
        while (is_op(".") || is_op("...")) module += advance().text;
        if (!is_name("import")) module += parse_dotted();
        if (module.empty()) throw ParseFailure{};
        expect_name("import");
        const bool paren = accept_op("(");
        const std::size_t first = out.size();
        do {
            if (paren && is_op(")")) break;
            Node n = make(NodeKind::FromImport, span_of(kw));
            n.text = module;
            if (accept_op("*")) {
                n.member = "*";
            } else {
                n.member = expect_identifier().text;
                if (is_name("as")) {
                    advance();
                    n.alias = expect_identifier().text;
                }
            }
            out.push_back(std::move(n));
        } while (accept_op(","));
        if (paren) expect_op(")");
        for (std::size_t i = first; i < out.size(); ++i) out[i].span.end = last_line();
    }

    std::string parse_dotted() {
        std::string name = expect_identifier().text;
        while (is_op(".")) {
            advance();
            name += "." + expect_identifier().text;
        }
        return name;
    }

    void parse_expression_statement(std::vector<Node>& out) {
        Node first = parse_star_expr_list();
        if (is_op(":")) {
            // Annotated assignment.
            advance();
            Node annotation = parse_expr();
            (void)annotation;
            Node assign = make(NodeKind::Assign, first.span);
            collect_target_names(first, assign.names);
            assign.children.push_back(std::move(first));
            assign.positional = 1;
            assign.op = ":";
            if (accept_op("=")) {
                Node value = parse_assign_rhs();
                assign.span = join(assign.span, value.span);
                assign.children.push_back(std::move(value));
                assign.op = "=";
            }
            out.push_back(std::move(assign));
            return;
        }
        for (auto op : kAugAssign) {
            if (is_op(op)) {
                advance();
                Node value = parse_assign_rhs();
                Node assign = make(NodeKind::Assign, join(first.span, value.span));
                collect_target_names(first, assign.names);
                assign.children.push_back(std::move(first));
                assign.children.push_back(std::move(value));
                assign.positional = 1;
                assign.op = std::string(op);
                out.push_back(std::move(assign));
                return;
            }
        }
        if (!is_op("=")) {
            out.push_back(std::move(first));
            return;
        }
        Node assign = make(NodeKind::Assign, first.span);
        assign.op = "=";
        std::vector<Node> parts;
        parts.push_back(std::move(first));
        while (accept_op("=")) parts.push_back(parse_assign_rhs());
        Node value = std::move(parts.back());
        parts.pop_back();
        for (auto& target : parts) {
            collect_target_names(target, assign.names);
            assign.children.push_back(std::move(target));
        }
        assign.positional = assign.children.size();
        assign.span = join(assign.span, value.span);
        assign.children.push_back(std::move(value));
        out.push_back(std::move(assign));
    }

    Node parse_assign_rhs() {
        if (is_name("yield")) return parse_expr();
        return parse_star_expr_list();
    }

    // expr (',' expr)* -> single node or tuple
    Node parse_star_expr_list() {
        Node first = parse_star_or_expr();
        if (!is_op(",")) return first;
        Node tuple = make(NodeKind::Compound, first.span);
        tuple.op = "tuple";
        tuple.children.push_back(std::move(first));
        while (accept_op(",")) {
            if (at_expr_stop()) break;
            tuple.children.push_back(parse_star_or_expr());
        }
        for (const auto& c : tuple.children) tuple.span = join(tuple.span, c.span);
        return tuple;
    }

    void append_expr_list(std::vector<Node>& out) {
        Node n = parse_star_expr_list();
        out.push_back(std::move(n));
    }

    void parse_target_list() {
        do {
            if (is_name("in")) break;
            accept_op("*");
            parse_bits();
        } while (accept_op(","));
    }

    // ---- expressions ---------------------------------------------------
    Node parse_star_or_expr() {
        if (is_op("*")) {
            const Token& star = advance();
            Node inner = parse_bits();
            Node n = make(NodeKind::Compound, join(span_of(star), inner.span));
            n.op = "starred";
            n.children.push_back(std::move(inner));
            return n;
        }
        return parse_expr();
    }

    Node parse_named_expr() {
        Node n = parse_expr();
        if (is_op(":=")) {
            advance();
            Node value = parse_expr();
            Node w = make(NodeKind::Compound, join(n.span, value.span));
            w.op = "walrus";
            w.children.push_back(std::move(n));
            w.children.push_back(std::move(value));
            return w;
        }
        return n;
    }

    Node compound(std::string op, std::vector<Node> parts) {
        Node n = make(NodeKind::Compound, parts.empty() ? Span{} : parts.front().span);
        n.op = std::move(op);
        for (auto& p : parts) {
            n.span = join(n.span, p.span);
            n.children.push_back(std::move(p));
        }
        return n;
    }

    Node parse_expr() {
        if (is_name("lambda")) {
            const Token& kw = advance();
            while (!is_op(":")) {
                if (at_end()) throw ParseFailure{};
                advance();
            }
            advance();
            Node body = parse_expr();
            Node n = make(NodeKind::Compound, join(span_of(kw), body.span));
            n.op = "lambda";
            n.children.push_back(std::move(body));
            return n;
        }
        if (is_name("yield")) {
            const Token& kw = advance();
            if (is_name("from")) advance();
            Node n = make(NodeKind::Compound, span_of(kw));
            n.op = "yield";
            if (!at_expr_stop()) {
                Node v = parse_star_expr_list();
                n.span = join(n.span, v.span);
                n.children.push_back(std::move(v));
            }
            return n;
        }
        Node n = parse_or();
        if (is_name("if")) {
            advance();
            Node cond = parse_or();
            expect_name("else");
            Node alt = parse_expr();
            std::vector<Node> parts;
            parts.push_back(std::move(n));
            parts.push_back(std::move(cond));
            parts.push_back(std::move(alt));
            return compound("ternary", std::move(parts));
        }
        if (is_op(":=")) {
            advance();
            std::vector<Node> parts;
            parts.push_back(std::move(n));
            parts.push_back(parse_expr());
            return compound("walrus", std::move(parts));
        }
        return n;
    }

    Node parse_or() {
        Node n = parse_and();
        if (!is_name("or")) return n;
        std::vector<Node> parts;
        parts.push_back(std::move(n));
        while (is_name("or")) {
            advance();
            parts.push_back(parse_and());
        }
        return compound("or", std::move(parts));
    }

    Node parse_and() {
        Node n = parse_not();
        if (!is_name("and")) return n;
        std::vector<Node> parts;
        parts.push_back(std::move(n));
        while (is_name("and")) {
            advance();
            parts.push_back(parse_not());
        }
        return compound("and", std::move(parts));
    }

    Node parse_not() {
        if (is_name("not")) {
            advance();
            std::vector<Node> parts;
            parts.push_back(parse_not());
            return compound("not", std::move(parts));
        }
        return parse_comparison();
    }

    bool at_compare_op() const {
        const Token& t = peek();
        if (t.kind == Tok::Op) {
            return t.text == "==" || t.text == "!=" || t.text == "<" || t.text == ">" || t.text == "<=" ||
                   t.text == ">=";
        }
        if (t.kind == Tok::Name) {
            return t.text == "in" || t.text == "is" || (t.text == "not" && is_name("in", 1));
        }
        return false;
    }

    Node parse_comparison() {
        Node n = parse_bits();
        if (!at_compare_op()) return n;
        std::vector<Node> parts;
        parts.push_back(std::move(n));
        while (at_compare_op()) {
            if (is_name("not") || is_name("is")) {
                const bool is_is = is_name("is");
                advance();
                if (is_is && is_name("not")) advance();
                if (!is_is) advance();  // "in" of "not in"
            } else {
                advance();
            }
            parts.push_back(parse_bits());
        }
        return compound("compare", std::move(parts));
    }

    Node parse_bits() {
        Node n = parse_arith();
        while (is_op("|") || is_op("^") || is_op("&") || is_op("<<") || is_op(">>")) {
            const std::string op = advance().text;
            std::vector<Node> parts;
            parts.push_back(std::move(n));
            parts.push_back(parse_arith());
            n = compound("op:" + op, std::move(parts));
        }
        return n;
    }

    Node binary(NodeKind kind, std::string op, Node lhs, Node rhs) {
        Node n = make(kind, join(lhs.span, rhs.span));
        n.op = std::move(op);
        n.children.push_back(std::move(lhs));
        n.children.push_back(std::move(rhs));
        return n;
    }

    Node parse_arith() {
        Node n = parse_term();
        while (is_op("+") || is_op("-")) {
            const std::string op = advance().text;
            Node rhs = parse_term();
            n = op == "+" ? binary(NodeKind::BinOpConcat, op, std::move(n), std::move(rhs))
                          : binary(NodeKind::Compound, "op:" + op, std::move(n), std::move(rhs));
        }
        return n;
    }

    Node parse_term() {
        Node n = parse_factor();
        while (is_op("*") || is_op("/") || is_op("//") || is_op("%") || is_op("@")) {
            const std::string op = advance().text;
            Node rhs = parse_factor();
            n = op == "%" ? binary(NodeKind::BinOpConcat, op, std::move(n), std::move(rhs))
                          : binary(NodeKind::Compound, "op:" + op, std::move(n), std::move(rhs));
        }
        return n;
    }

    Node parse_factor() {
        if (is_op("-") || is_op("+") || is_op("~")) {
            const Token& t = advance();
            Node inner = parse_factor();
            Node n = make(NodeKind::Compound, join(span_of(t), inner.span));
            n.op = "unary";
            n.children.push_back(std::move(inner));
            return n;
        }
        return parse_power();
    }

    Node parse_power() {
        if (is_name("await")) {
            const Token& t = advance();
            Node inner = parse_power();
            Node n = make(NodeKind::Compound, join(span_of(t), inner.span));
            n.op = "await";
            n.children.push_back(std::move(inner));
            return n;
        }
        Node n = parse_primary();
        if (is_op("**")) {
            advance();
            Node rhs = parse_factor();
            n = binary(NodeKind::Compound, "op:**", std::move(n), std::move(rhs));
        }
        return n;
    }

    Node parse_primary() {
        Node n = parse_atom();
        for (;;) {
            if (is_op(".")) {
                advance();
                const Token& member = expect_identifier();
                if (n.kind == NodeKind::Attribute) {
                    n.names.push_back(member.text);
                    n.text += "." + member.text;
                    n.span.end = std::max(n.span.end, member.end_line);
                } else {
                    Node attr = make(NodeKind::Attribute, join(n.span, span_of(member)));
                    attr.text = (n.kind == NodeKind::Name ? n.text : std::string()) + "." + member.text;
                    attr.names.push_back(member.text);
                    attr.children.push_back(std::move(n));
                    n = std::move(attr);
                }
            } else if (is_op("(")) {
                n = parse_call(std::move(n));
            } else if (is_op("[")) {
                n = parse_subscript(std::move(n));
            } else {
                return n;
            }
        }
    }

    Node parse_call(Node callee_node) {
        advance();
        Node call = make(NodeKind::Call, callee_node.span);
        std::vector<Node> positional;
        std::vector<Node> keyword_values;
        while (!is_op(")")) {
            if (peek().kind == Tok::Name && !is_keyword(peek().text) && is_op("=", 1)) {
                call.names.push_back(advance().text);
                advance();
                keyword_values.push_back(parse_expr());
            } else if (is_op("**")) {
                advance();
                call.names.push_back("**");
                keyword_values.push_back(parse_expr());
            } else {
                Node arg = parse_star_or_expr();
                if (is_name("for") || (is_name("async") && is_name("for", 1))) {
                    arg = parse_comprehension(std::move(arg), "generator");
                }
                positional.push_back(std::move(arg));
            }
            if (!accept_op(",")) break;
        }
        const Token& close = expect_op(")");
        call.span.end = std::max(call.span.end, close.end_line);
        call.positional = positional.size();
        call.children.push_back(std::move(callee_node));
        for (auto& p : positional) call.children.push_back(std::move(p));
        for (auto& k : keyword_values) call.children.push_back(std::move(k));
        return call;
    }

    Node parse_subscript(Node base) {
        advance();
        Node n = make(NodeKind::Compound, base.span);
        n.op = "subscript";
        n.children.push_back(std::move(base));
        while (!is_op("]")) {
            if (accept_op(":") || accept_op(",")) continue;
            n.children.push_back(parse_star_or_expr());
        }
        const Token& close = expect_op("]");
        n.span.end = std::max(n.span.end, close.end_line);
        return n;
    }

    Node parse_comprehension(Node element, std::string label) {
        Node n = make(NodeKind::Compound, element.span);
        n.op = std::move(label);
        n.children.push_back(std::move(element));
        while (is_name("for") || (is_name("async") && is_name("for", 1))) {
            if (is_name("async")) advance();
            advance();
            parse_target_list();
            expect_name("in");
            Node iter = parse_or();
            n.span = join(n.span, iter.span);
            n.children.push_back(std::move(iter));
            while (is_name("if")) {
                advance();
                Node cond = parse_or();
                n.span = join(n.span, cond.span);
                n.children.push_back(std::move(cond));
            }
        }
        return n;
    }

    Node parse_display(std::string_view close, std::string label) {
        const Token& open = advance();
        Node n = make(NodeKind::Compound, span_of(open));
        n.op = std::move(label);
        bool saw_comma = false;
        bool saw_colon = false;
        while (!is_op(close)) {
            if (accept_op("**")) {
                n.children.push_back(parse_bits());
                saw_colon = true;
            } else {
                Node item = parse_star_or_expr();
                if (accept_op(":")) {
                    saw_colon = true;
                    n.children.push_back(std::move(item));
                    item = parse_expr();
                }
                if (is_name("for") || (is_name("async") && is_name("for", 1))) {
                    item = parse_comprehension(std::move(item), "comprehension");
                }
                n.children.push_back(std::move(item));
            }
            if (!accept_op(",")) break;
            saw_comma = true;
        }
        const Token& end = expect_op(close);
        n.span.end = std::max(n.span.end, end.end_line);
        if (close == "}") n.op = (saw_colon || n.children.empty()) ? "dict" : "set";
        if (close == ")") {
            if (n.children.size() == 1 && !saw_comma) {
                Node inner = std::move(n.children.front());
                return inner;
            }
        }
        return n;
    }

    Node parse_atom() {
        const Token& t = peek();
        switch (t.kind) {
            case Tok::Name: {
                if (is_keyword(t.text) && t.text != "True" && t.text != "False" && t.text != "None") {
                    throw ParseFailure{};
                }
                Node n = make(NodeKind::Name, span_of(t));
                n.text = t.text;
                advance();
                return n;
            }
            case Tok::Number: {
                Node n = make(NodeKind::NumberLit, span_of(t));
                n.text = t.text;
                advance();
                return n;
            }
            case Tok::String:
                return parse_strings();
            case Tok::Op:
                if (t.text == "(") return parse_display(")", "tuple");
                if (t.text == "[") return parse_display("]", "list");
                if (t.text == "{") return parse_display("}", "dict");
                if (t.text == "...") {
                    Node n = make(NodeKind::Compound, span_of(t));
                    n.op = "ellipsis";
                    advance();
                    return n;
                }
                throw ParseFailure{};
            case Tok::End:
                throw ParseFailure{};
        }
        throw ParseFailure{};
    }

    Node parse_strings();

    const std::vector<Token>& toks_;
    std::size_t pos_ = 0;
};

Node parse_interpolation(const detail::Interpolation& field) {
    auto lines = detail::split_logical_lines(field.source, field.line);
    if (lines.size() == 1 && lines.front().ok) {
        try {
            return Parser(lines.front().tokens).parse_standalone_expr();
        } catch (const ParseFailure&) {
        }
    }
    Node n = make(NodeKind::Opaque, {field.line, field.line});
    n.text = field.source;
    return n;
}

Node Parser::parse_strings() {
    const Token& first = peek();
    Node n = make(NodeKind::StringLit, span_of(first));
    bool any_f = false;
    while (peek().kind == Tok::String) {
        const Token& t = advance();
        n.span = join(n.span, span_of(t));
        n.text += t.text;
        if (t.fstring) {
            any_f = true;
            for (const auto& field : t.interpolations) n.children.push_back(parse_interpolation(field));
        }
    }
    if (any_f) {
        n.kind = NodeKind::FormatExpr;
        n.interpolates = !n.children.empty();
    }
    return n;
}

// Replace invalid UTF-8 sequences with U+FFFD and report the affected lines.
std::string sanitize_utf8(std::string_view in, std::set<std::size_t>& bad_lines) {
    std::string out;
    out.reserve(in.size());
    std::size_t line = 1;
    std::size_t i = 0;
    while (i < in.size()) {
        const auto c = static_cast<unsigned char>(in[i]);
        if (c == '\n') ++line;
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            ++i;
            continue;
        }
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        }
        bool valid = len > 0 && i + len <= in.size();
        for (std::size_t k = 1; valid && k < len; ++k) {
            const auto cc = static_cast<unsigned char>(in[i + k]);
            if ((cc & 0xC0) != 0x80) valid = false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (valid) {
            valid = !(len == 2 && cp < 0x80) && !(len == 3 && cp < 0x800) && !(len == 4 && cp < 0x10000) &&
                    cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
        }
        if (valid) {
            out.append(in.substr(i, len));
            i += len;
        } else {
            out += "\xEF\xBF\xBD";
            bad_lines.insert(line);
            ++i;
        }
    }
    return out;
}

std::size_t physical_line_count(std::string_view code) {
    if (code.empty()) return 0;
    auto n = static_cast<std::size_t>(std::count(code.begin(), code.end(), '\n'));
    if (code.back() != '\n') ++n;
    return n;
}

LineClass classify_trivia(std::string_view line) {
    const auto b = line.find_first_not_of(" \t\f\r");
    if (b == std::string_view::npos) return LineClass::Blank;
    return line[b] == '#' ? LineClass::Comment : LineClass::Code;
}

std::vector<std::string_view> split_lines(std::string_view code) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < code.size()) {
        const auto e = code.find('\n', start);
        if (e == std::string_view::npos) {
            lines.push_back(code.substr(start));
            break;
        }
        lines.push_back(code.substr(start, e - start));
        start = e + 1;
    }
    return lines;
}

std::string raw_text(const std::vector<std::string_view>& lines, Span span) {
    std::string out;
    for (std::size_t l = span.start; l <= span.end && l <= lines.size(); ++l) {
        if (l > span.start) out.push_back('\n');
        out += lines[l - 1];
    }
    return out;
}

}  // namespace

std::string_view to_string(NodeKind kind) {
    switch (kind) {
        case NodeKind::Import: return "Import";
        case NodeKind::FromImport: return "FromImport";
        case NodeKind::Assign: return "Assign";
        case NodeKind::FunctionDef: return "FunctionDef";
        case NodeKind::Call: return "Call";
        case NodeKind::Attribute: return "Attribute";
        case NodeKind::Name: return "Name";
        case NodeKind::StringLit: return "StringLit";
        case NodeKind::NumberLit: return "NumberLit";
        case NodeKind::BinOpConcat: return "BinOpConcat";
        case NodeKind::FormatExpr: return "FormatExpr";
        case NodeKind::Compound: return "Compound";
        case NodeKind::Opaque: return "Opaque";
    }
    return "Opaque";
}

SourceTree parse_source(std::string_view code) {
    std::set<std::size_t> bad_lines;
    const std::string text = sanitize_utf8(code, bad_lines);
    const auto lines = split_lines(text);

    SourceTree tree;
    tree.line_count = physical_line_count(text);
    tree.loc = count_loc(text);
    tree.lines.resize(tree.line_count, LineClass::Blank);
    for (std::size_t i = 0; i < lines.size(); ++i) tree.lines[i] = classify_trivia(lines[i]);

    struct Frame {
        std::size_t indent;
        std::vector<Node>* body;
        Node* def;
    };
    std::vector<Frame> stack{{0, &tree.nodes, nullptr}};

    auto close_frame = [&] {
        Node* def = stack.back().def;
        stack.pop_back();
        if (def) {
            for (const auto& c : def->children) def->span = join(def->span, c.span);
        }
    };

    for (const auto& ll : detail::split_logical_lines(text)) {
        while (stack.size() > 1 && ll.indent <= stack.back().indent) close_frame();

        const Span span{ll.first_line, ll.last_line};
        bool ok = ll.ok;
        for (std::size_t l = span.start; ok && l <= span.end; ++l) ok = !bad_lines.contains(l);

        Parser::Line parsed;
        if (ok) {
            try {
                parsed = Parser(ll.tokens).parse_line();
            } catch (const ParseFailure&) {
                ok = false;
            }
            // A lone line continuation carries no tokens.
            if (parsed.nodes.empty()) ok = false;
        }
        for (std::size_t l = span.start; l <= span.end && l <= tree.line_count; ++l) {
            tree.lines[l - 1] = ok ? LineClass::Code : LineClass::Opaque;
        }
        std::vector<Node>& body = *stack.back().body;
        if (!ok) {
            Node opaque = make(NodeKind::Opaque, span);
            opaque.text = raw_text(lines, span);
            body.push_back(std::move(opaque));
            continue;
        }
        // Statement spans cover the whole logical line, including leading
        // continuation lines that carry no tokens.
        parsed.nodes.front().span.start = std::min(parsed.nodes.front().span.start, span.start);
        parsed.nodes.back().span.end = std::max(parsed.nodes.back().span.end, span.end);
        for (auto& n : parsed.nodes) body.push_back(std::move(n));
        if (parsed.opens_def) {
            Node* def = &body.back();
            stack.push_back({ll.indent, &def->children, def});
        }
    }
    while (stack.size() > 1) close_frame();
    return tree;
}

std::size_t count_loc(std::string_view code) {
    std::size_t n = 0;
    for (auto line : split_lines(code)) {
        if (classify_trivia(line) == LineClass::Code) ++n;
    }
    return n;
}

const Node& callee(const Node& call) { return call.children.front(); }

std::span<const Node> positional_args(const Node& call) {
    return std::span<const Node>(call.children).subspan(1, call.positional);
}

std::vector<std::pair<std::string, const Node*>> keyword_args(const Node& call) {
    std::vector<std::pair<std::string, const Node*>> out;
    for (std::size_t i = 0; i < call.names.size(); ++i) {
        out.emplace_back(call.names[i], &call.children[1 + call.positional + i]);
    }
    return out;
}

std::string callee_name(const Node& call) {
    const Node& c = callee(call);
    if (c.kind == NodeKind::Name || c.kind == NodeKind::Attribute) return c.text;
    return {};
}

std::string callee_leaf(const Node& call) {
    const Node& c = callee(call);
    if (c.kind == NodeKind::Name) return c.text;
    if (c.kind == NodeKind::Attribute) return c.names.back();
    return {};
}

Query calls_with_leaf(std::string leaf) {
    return Query{NodeKind::Call, [leaf = std::move(leaf)](const Node& n) { return callee_leaf(n) == leaf; }};
}

void walk(std::span<const Node> nodes, const std::function<void(const Node&)>& visit) {
    for (const Node& n : nodes) {
        visit(n);
        walk(n.children, visit);
    }
}

std::vector<const Node*> iter_matches(const SourceTree& tree, const Query& query) {
    std::vector<const Node*> out;
    walk(tree.nodes, [&](const Node& n) {
        if (n.kind == query.kind && (!query.predicate || query.predicate(n))) out.push_back(&n);
    });
    return out;
}

}  // namespace vigil::syntax
