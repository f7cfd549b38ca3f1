#pragma once

#include <cctype>
#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slapforge/error.hpp"
#include "slapforge/ordered_map.hpp"

namespace slapforge::profile {

using Section = OrderedMap<std::string>;

// A buildout-style profile: ordered sections of ordered raw options.
struct Profile {
  OrderedMap<Section> sections;
  std::string origin;

  const std::string* option(const std::string& section, const std::string& key) const {
    const auto* s = sections.get(section);
    return s ? s->get(key) : nullptr;
  }

  bool operator==(const Profile&) const = default;
};

// Key under which a `<= base` macro line is stored.
inline constexpr std::string_view kMacroKey = "<";

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool is_blank(std::string_view s) { return trim(s).empty(); }

}  // namespace detail

inline Profile parse_profile(std::string_view text, std::string origin = "<string>") {
  Profile p;
  p.origin = std::move(origin);

  Section* current = nullptr;
  std::string* last_value = nullptr;
  std::size_t line_no = 0;
  std::size_t pos = 0;

  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (detail::is_blank(line)) continue;
    auto trimmed = detail::trim(line);
    if (trimmed.front() == '#') continue;

    if (line.front() == ' ' || line.front() == '\t') {
      if (!last_value) throw ParseError(p.origin, line_no, "continuation line without an option");
      *last_value += '\n';
      *last_value += trimmed;
      continue;
    }

    if (line.front() == '[') {
      auto close = trimmed.find(']');
      if (close == std::string_view::npos) throw ParseError(p.origin, line_no, "unterminated section header");
      auto rest = detail::trim(trimmed.substr(close + 1));
      if (!rest.empty() && rest.front() != '#')
        throw ParseError(p.origin, line_no, "trailing text after section header");
      auto name = detail::trim(trimmed.substr(1, close - 1));
      if (name.empty() || name.find('[') != std::string_view::npos)
        throw ParseError(p.origin, line_no, "bad section name");
      if (!p.sections.insert(std::string(name), Section{}))
        throw ParseError(p.origin, line_no, "duplicate section [" + std::string(name) + "]");
      current = p.sections.get(std::string(name));
      last_value = nullptr;
      continue;
    }

    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(p.origin, line_no, "malformed line");
    auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(p.origin, line_no, "empty option name");
    if (!current) throw ParseError(p.origin, line_no, "option '" + std::string(key) + "' outside any section");
    auto value = detail::trim(line.substr(eq + 1));
    if (!current->insert(std::string(key), std::string(value)))
      throw ParseError(p.origin, line_no, "duplicate option '" + std::string(key) + "'");
    last_value = current->get(std::string(key));
  }
  return p;
}

// Canonical text form; parse_profile(serialize_profile(p)) == p for anything
// parse_profile can produce.
inline std::string serialize_profile(const Profile& p) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [name, section] : p.sections) {
    if (!first) out << '\n';
    first = false;
    out << '[' << name << "]\n";
    for (const auto& [key, value] : section) {
      std::string_view v = value;
      auto nl = v.find('\n');
      auto head = v.substr(0, nl);
      out << key << " =";
      if (!head.empty()) out << ' ' << head;
      out << '\n';
      while (nl != std::string_view::npos) {
        v = v.substr(nl + 1);
        nl = v.find('\n');
        out << "    " << v.substr(0, nl) << '\n';
      }
    }
  }
  return out.str();
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    auto b = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > b) out.emplace_back(s.substr(b, i - b));
  }
  return out;
}

}  // namespace slapforge::profile
