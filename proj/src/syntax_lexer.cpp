#include "syntax_lexer.hpp"

#include <algorithm>
#include <array>

namespace vigil::syntax::detail {
namespace {

constexpr std::array<std::string_view, 47> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=",
    ">=",  "==",  "!=",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "@=",
    "+",   "-",   "*",   "/",   "%",   "@",  "&",  "|",  "^",  "~",  "<",  ">",
    "(",   ")",   "[",   "]",   "{",   "}",  ",",  ":",  ".",  ";",  "=",
};

bool is_ident_start(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c >= 0x80;
}

bool is_ident_char(unsigned char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_string_prefix(std::string_view word) {
    if (word.size() > 2) return false;
    std::string lower;
    for (char c : word) lower.push_back(static_cast<char>(c | 0x20));
    static constexpr std::array<std::string_view, 8> kPrefixes = {"r", "u", "b", "f", "rb", "br", "fr", "rf"};
    return std::find(kPrefixes.begin(), kPrefixes.end(), lower) != kPrefixes.end();
}

char closing_for(char open) {
    switch (open) {
        case '(': return ')';
        case '[': return ']';
        default: return '}';
    }
}

enum class Status { Ok, BadLocal, BadEof };

class Lexer {
public:
    Lexer(std::string_view src, std::size_t first_line) : src_(src), first_line_(first_line) {
        line_starts_.push_back(0);
        for (std::size_t i = 0; i < src_.size(); ++i) {
            if (src_[i] == '\n') line_starts_.push_back(i + 1);
        }
    }

    std::vector<LogicalLine> run() {
        std::vector<LogicalLine> out;
        std::size_t pos = 0;
        while (pos < src_.size()) {
            const std::size_t line_end = physical_end(pos);
            std::size_t i = pos;
            std::size_t indent = 0;
            while (i < line_end && (src_[i] == ' ' || src_[i] == '\t' || src_[i] == '\f')) {
                indent = src_[i] == '\t' ? (indent / 8 + 1) * 8 : indent + 1;
                ++i;
            }
            if (i >= line_end || src_[i] == '\r' || src_[i] == '#') {
                pos = line_end + 1;
                continue;
            }
            LogicalLine ll;
            ll.indent = indent;
            ll.first_line = line_of(pos);
            std::size_t next = 0;
            const Status st = lex_logical(i, ll, next);
            if (st == Status::BadEof) {
                ll.tokens.clear();
                ll.ok = false;
                ll.last_line = ll.first_line;
                ll.tokens.push_back(Token{Tok::End, {}, ll.first_line, ll.first_line, false, {}});
                pos = line_end + 1;
            } else {
                ll.ok = st == Status::Ok;
                pos = next;
            }
            out.push_back(std::move(ll));
        }
        return out;
    }

private:
    std::size_t physical_end(std::size_t pos) const {
        const auto e = src_.find('\n', pos);
        return e == std::string_view::npos ? src_.size() : e;
    }

    std::size_t line_of(std::size_t pos) const {
        const auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), pos);
        return static_cast<std::size_t>(it - line_starts_.begin()) - 1 + first_line_;
    }

    // Lex one logical line starting at `i`. On return `next` is the offset of
    // the first physical line after it.
    Status lex_logical(std::size_t i, LogicalLine& ll, std::size_t& next) {
        std::vector<char> brackets;
        auto finish = [&](std::size_t at, Status st) {
            const std::size_t last = std::min(at, src_.size() == 0 ? 0 : src_.size() - 1);
            ll.last_line = std::max(ll.first_line, line_of(at > 0 ? last : 0));
            ll.tokens.push_back(Token{Tok::End, {}, ll.last_line, ll.last_line, false, {}});
            return st;
        };
        auto fail_local = [&](std::size_t at) {
            const std::size_t e = physical_end(at);
            next = e + 1;
            ll.last_line = line_of(std::min(at, src_.size() - 1));
            ll.tokens.push_back(Token{Tok::End, {}, ll.last_line, ll.last_line, false, {}});
            return Status::BadLocal;
        };

        while (true) {
            if (i >= src_.size()) {
                if (!brackets.empty()) return Status::BadEof;
                next = src_.size();
                return finish(src_.empty() ? 0 : src_.size() - 1, Status::Ok);
            }
            const char c = src_[i];
            if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
                ++i;
                continue;
            }
            if (c == '\n') {
                if (!brackets.empty()) {
                    ++i;
                    continue;
                }
                next = i + 1;
                return finish(i, Status::Ok);
            }
            if (c == '#') {
                i = physical_end(i);
                continue;
            }
            if (c == '\\') {
                if (i + 1 < src_.size() && src_[i + 1] == '\n') {
                    i += 2;
                    continue;
                }
                if (i + 2 < src_.size() && src_[i + 1] == '\r' && src_[i + 2] == '\n') {
                    i += 3;
                    continue;
                }
                return fail_local(i);
            }
            const auto uc = static_cast<unsigned char>(c);
            if (is_ident_start(uc)) {
                std::size_t j = i;
                while (j < src_.size() && is_ident_char(static_cast<unsigned char>(src_[j]))) ++j;
                const std::string_view word = src_.substr(i, j - i);
                if (j < src_.size() && (src_[j] == '"' || src_[j] == '\'') && is_string_prefix(word)) {
                    const Status st = lex_string(j, word, ll, i);
                    if (st == Status::BadLocal) return fail_local(i);
                    if (st == Status::BadEof) return st;
                    continue;
                }
                ll.tokens.push_back(Token{Tok::Name, std::string(word), line_of(i), line_of(i), false, {}});
                i = j;
                continue;
            }
            if (is_digit(c) || (c == '.' && i + 1 < src_.size() && is_digit(src_[i + 1]))) {
                std::size_t j = i;
                const bool hex = c == '0' && i + 1 < src_.size() && (src_[i + 1] | 0x20) == 'x';
                while (j < src_.size()) {
                    const char d = src_[j];
                    if (is_ident_char(static_cast<unsigned char>(d)) || d == '.') {
                        ++j;
                    } else if ((d == '+' || d == '-') && !hex && (src_[j - 1] | 0x20) == 'e') {
                        ++j;
                    } else {
                        break;
                    }
                }
                ll.tokens.push_back(Token{Tok::Number, std::string(src_.substr(i, j - i)), line_of(i), line_of(i), false, {}});
                i = j;
                continue;
            }
            if (c == '"' || c == '\'') {
                const Status st = lex_string(i, {}, ll, i);
                if (st == Status::BadLocal) return fail_local(i);
                if (st == Status::BadEof) return st;
                continue;
            }
            std::string_view op;
            for (auto candidate : kOperators) {
                if (src_.substr(i, candidate.size()) == candidate) {
                    op = candidate;
                    break;
                }
            }
            if (op.empty()) return fail_local(i);
            if (op == "(" || op == "[" || op == "{") {
                brackets.push_back(op[0]);
            } else if (op == ")" || op == "]" || op == "}") {
                if (brackets.empty() || closing_for(brackets.back()) != op[0]) return fail_local(i);
                brackets.pop_back();
            }
            ll.tokens.push_back(Token{Tok::Op, std::string(op), line_of(i), line_of(i), false, {}});
            i += op.size();
        }
    }

    // `quote_pos` points at the opening quote; on success `i` is moved past
    // the closing quote.
    Status lex_string(std::size_t quote_pos, std::string_view prefix, LogicalLine& ll, std::size_t& i) {
        bool raw = false;
        bool fstr = false;
        for (char p : prefix) {
            if ((p | 0x20) == 'r') raw = true;
            if ((p | 0x20) == 'f') fstr = true;
        }
        const char q = src_[quote_pos];
        const bool triple = src_.substr(quote_pos, 3) == std::string(3, q);
        const std::size_t body_start = quote_pos + (triple ? 3 : 1);
        std::size_t j = body_start;
        std::size_t body_end = std::string_view::npos;
        while (j < src_.size()) {
            const char c = src_[j];
            if (c == '\\') {
                j += 2;
                continue;
            }
            if (!triple && c == '\n') return Status::BadLocal;
            if (c == q && (!triple || src_.substr(j, 3) == std::string(3, q))) {
                body_end = j;
                break;
            }
            ++j;
        }
        if (body_end == std::string_view::npos) return triple ? Status::BadEof : Status::BadLocal;

        const std::string_view body = src_.substr(body_start, body_end - body_start);
        Token tok;
        tok.kind = Tok::String;
        tok.line = line_of(i);
        tok.end_line = line_of(body_end);
        tok.fstring = fstr;
        if (fstr) {
            split_fstring(body, raw, line_of(body_start), tok);
        } else {
            tok.text = raw ? std::string(body) : decode_escapes(body);
        }
        ll.tokens.push_back(std::move(tok));
        i = body_end + (triple ? 3 : 1);
        return Status::Ok;
    }

    static std::string decode_escapes(std::string_view body) {
        std::string out;
        for (std::size_t k = 0; k < body.size(); ++k) {
            if (body[k] != '\\' || k + 1 >= body.size()) {
                out.push_back(body[k]);
                continue;
            }
            const char e = body[++k];
            switch (e) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                case '0': out.push_back('\0'); break;
                case '\\': out.push_back('\\'); break;
                case '\'': out.push_back('\''); break;
                case '"': out.push_back('"'); break;
                case '\n': break;
                default:
                    out.push_back('\\');
                    out.push_back(e);
            }
        }
        return out;
    }

    // Separate literal text from {expression} fields. Doubled braces are
    // literal; a field's expression ends at a top-level '!', ':' or '}'.
    static void split_fstring(std::string_view body, bool raw, std::size_t line, Token& tok) {
        std::string literal;
        std::size_t k = 0;
        std::size_t cur_line = line;
        while (k < body.size()) {
            const char c = body[k];
            if (c == '\n') ++cur_line;
            if ((c == '{' || c == '}') && k + 1 < body.size() && body[k + 1] == c) {
                literal.push_back(c);
                k += 2;
                continue;
            }
            if (c != '{') {
                literal.push_back(c);
                ++k;
                continue;
            }
            const std::size_t field_line = cur_line;
            std::size_t depth = 0;
            std::size_t m = k + 1;
            std::size_t expr_end = std::string_view::npos;
            char in_quote = 0;
            for (; m < body.size(); ++m) {
                const char d = body[m];
                if (d == '\n') ++cur_line;
                if (in_quote) {
                    if (d == in_quote) in_quote = 0;
                    continue;
                }
                if (d == '\'' || d == '"') {
                    in_quote = d;
                } else if (d == '(' || d == '[' || d == '{') {
                    ++depth;
                } else if ((d == ')' || d == ']' || d == '}') && depth > 0) {
                    --depth;
                } else if (depth == 0 && expr_end == std::string_view::npos &&
                           ((d == '!' && (m + 1 >= body.size() || body[m + 1] != '=')) || d == ':')) {
                    expr_end = m;
                } else if (depth == 0 && d == '}') {
                    break;
                }
            }
            if (expr_end == std::string_view::npos) expr_end = m;
            std::string expr(body.substr(k + 1, expr_end - k - 1));
            if (!expr.empty() && expr.back() == '=') expr.pop_back();
            tok.interpolations.push_back({std::move(expr), field_line});
            k = m + 1;
        }
        tok.text = raw ? literal : decode_escapes(literal);
    }

    std::string_view src_;
    std::size_t first_line_;
    std::vector<std::size_t> line_starts_;
};

}  // namespace

std::vector<LogicalLine> split_logical_lines(std::string_view text, std::size_t first_line) {
    return Lexer(text, first_line).run();
}

}  // namespace vigil::syntax::detail
