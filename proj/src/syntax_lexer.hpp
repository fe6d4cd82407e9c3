#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace vigil::syntax::detail {

enum class Tok { Name, Number, String, Op, End };

struct Interpolation {
    std::string source;
    std::size_t line = 0;
};

struct Token {
    Tok kind = Tok::End;
    std::string text;  // identifier, operator, number spelling, or decoded string value
    std::size_t line = 0;
    std::size_t end_line = 0;
    bool fstring = false;
    std::vector<Interpolation> interpolations;
};

struct LogicalLine {
    std::vector<Token> tokens;  // terminated by an End token
    std::size_t first_line = 0;
    std::size_t last_line = 0;
    std::size_t indent = 0;
    bool ok = true;
};

// Splits source into logical lines. Blank and comment-only physical lines
// produce no logical line. A logical line that cannot be tokenized (stray
// closing bracket, unknown character, unterminated string, bracket left open
// at end of input) comes back with ok = false; when the failure is only
// detected at end of input, just its first physical line is given up and
// lexing resumes on the next one.
std::vector<LogicalLine> split_logical_lines(std::string_view text, std::size_t first_line = 1);

}  // namespace vigil::syntax::detail
