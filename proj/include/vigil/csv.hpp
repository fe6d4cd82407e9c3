#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vigil::csv {

using Row = std::vector<std::string>;

// RFC 4180: comma separated, fields optionally double-quoted, "" escapes a
// quote inside a quoted field, quoted fields may span lines. CRLF and LF
// line endings are both accepted. A trailing newline does not produce an
// empty row. Throws InputError on an unterminated quoted field.
std::vector<Row> parse(std::string_view text);

// Quote a field if it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string format_row(const Row& row);

}  // namespace vigil::csv
