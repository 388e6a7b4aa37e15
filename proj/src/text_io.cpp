#include "distpriv/text_io.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <stdexcept>

namespace distpriv::text {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::vector<std::vector<std::string>> read_rows(std::istream& in, std::string_view schema) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header_seen = schema.empty();
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (!header_seen) {
      if (t.front() != '#' || trim(t.substr(1)) != schema) {
        throw std::runtime_error("expected header '# " + std::string(schema) + "', got '" +
                                 std::string(t) + "'");
      }
      header_seen = true;
      continue;
    }
    if (t.front() == '#') continue;
    rows.push_back(split_csv(t));
  }
  if (!header_seen) throw std::runtime_error("missing header '# " + std::string(schema) + "'");
  return rows;
}

std::uint64_t to_u64(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  const auto t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw std::runtime_error("bad integer for " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

double to_double(std::string_view s, std::string_view what) {
  const std::string t(trim(s));
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) {
    throw std::runtime_error("bad number for " + std::string(what) + ": '" + std::string(s) + "'");
  }
  return v;
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace distpriv::text
