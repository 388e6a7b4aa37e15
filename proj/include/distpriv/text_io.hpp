#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace distpriv::text {

std::string_view trim(std::string_view s);
std::vector<std::string> split_csv(std::string_view line);

/// Reads data rows, dropping blank lines and `#` comments. When `schema` is
/// non-empty the first line must be the `# <schema>` header.
std::vector<std::vector<std::string>> read_rows(std::istream& in, std::string_view schema);

std::uint64_t to_u64(std::string_view s, std::string_view what);
double to_double(std::string_view s, std::string_view what);

/// Fixed-precision rendering used for every report so output is byte-stable.
std::string fixed(double v, int precision = 6);

}  // namespace distpriv::text
