#pragma once

// Minimal RFC 4180 reader/writer: comma delimiter, double-quoted fields with
// "" escapes, LF or CRLF line ends. Blank lines are skipped.

#include <ostream>
#include <string>
#include <vector>

namespace fairdummies::csv {

std::vector<std::vector<std::string>> parse(const std::string& text);
void write_row(std::ostream& out, const std::vector<std::string>& cells);

}  // namespace fairdummies::csv
