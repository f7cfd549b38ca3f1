#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "slapforge/error.hpp"
#include "slapforge/profile/profile.hpp"

namespace slapforge::profile {

// origin -> profile text. Throws FetchError for unknown origins.
using FetchFn = std::function<std::string(const std::string& origin)>;

// Resolves `ref` against the directory of `base`. Absolute paths and URLs
// pass through; "." and ".." segments are collapsed.
inline std::string join_origin(const std::string& base, const std::string& ref) {
  if (ref.find("://") != std::string::npos || ref.starts_with("/") || base.empty()) return ref;

  std::string prefix;
  std::string path = base;
  if (auto scheme = base.find("://"); scheme != std::string::npos) {
    auto slash = base.find('/', scheme + 3);
    prefix = base.substr(0, slash == std::string::npos ? base.size() : slash);
    path = slash == std::string::npos ? "/" : base.substr(slash);
  }
  auto dir_end = path.rfind('/');
  std::string dir = dir_end == std::string::npos ? "" : path.substr(0, dir_end + 1);

  std::vector<std::string> parts;
  const bool absolute = !dir.empty() && dir.front() == '/';
  for (const auto& seg : std::vector<std::string>{dir, ref}) {
    std::size_t i = 0;
    while (i <= seg.size()) {
      auto j = seg.find('/', i);
      if (j == std::string::npos) j = seg.size();
      std::string s = seg.substr(i, j - i);
      if (s == "..") {
        if (!parts.empty() && parts.back() != "..") parts.pop_back();
        else if (!absolute) parts.push_back(s);
      } else if (!s.empty() && s != ".") {
        parts.push_back(s);
      }
      i = j + 1;
    }
  }
  std::string out = prefix;
  if (absolute || !prefix.empty()) out += '/';
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '/';
    out += parts[i];
  }
  return out;
}

namespace detail {

// Later profile wins key by key; new sections keep their relative order.
inline void overlay(Profile& into, const Profile& top) {
  for (const auto& [name, section] : top.sections) {
    auto& dst = into.sections[name];
    for (const auto& [k, v] : section) dst.set(k, v);
  }
}

inline Profile merge_rec(const Profile& profile, const FetchFn& fetch, std::vector<std::string>& stack) {
  const auto* ext = profile.option("buildout", "extends");
  if (!ext) return profile;

  Profile merged;
  merged.origin = profile.origin;
  for (const auto& ref : split_words(*ext)) {
    auto origin = join_origin(profile.origin, ref);
    for (const auto& seen : stack) {
      if (seen == origin) {
        auto chain = stack;
        chain.push_back(origin);
        throw ExtendsCycleError(std::move(chain));
      }
    }
    std::string text;
    try {
      text = fetch(origin);
    } catch (const FetchError&) {
      throw;
    } catch (const std::exception& e) {
      throw FetchError("cannot fetch '" + origin + "': " + e.what());
    }
    stack.push_back(origin);
    auto base = merge_rec(parse_profile(text, origin), fetch, stack);
    stack.pop_back();
    overlay(merged, base);
  }
  overlay(merged, profile);
  merged.sections["buildout"].erase("extends");
  return merged;
}

}  // namespace detail

// Layers the profiles named by [buildout] extends underneath `profile`,
// depth-first, left to right.
inline Profile merge_extends(const Profile& profile, const FetchFn& fetch) {
  std::vector<std::string> stack{profile.origin};
  return detail::merge_rec(profile, fetch, stack);
}

namespace detail {

inline bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
}

struct Token {
  std::size_t begin;
  std::size_t end;  // one past '}'
  std::string section;
  std::string option;
};

// Finds every ${section:option} token; anything else is literal text.
inline std::vector<Token> scan_tokens(std::string_view v) {
  std::vector<Token> out;
  std::size_t i = 0;
  while ((i = v.find("${", i)) != std::string_view::npos) {
    std::size_t j = i + 2;
    auto a = j;
    while (j < v.size() && is_name_char(v[j])) ++j;
    if (j == a || j >= v.size() || v[j] != ':') {
      i += 2;
      continue;
    }
    auto b = ++j;
    while (j < v.size() && is_name_char(v[j])) ++j;
    if (j == b || j >= v.size() || v[j] != '}') {
      i += 2;
      continue;
    }
    out.push_back({i, j + 1, std::string(v.substr(a, b - 1 - a)), std::string(v.substr(b, j - b))});
    i = j + 1;
  }
  return out;
}

class Resolver {
 public:
  explicit Resolver(Profile& p) : p_(p) {}

  void expand_macros() {
    std::vector<std::string> names;
    for (const auto& [name, _] : p_.sections) names.push_back(name);
    for (const auto& n : names) {
      std::vector<std::string> stack;
      expand_macro(n, stack);
    }
  }

  void add_implicit_locations() {
    const auto* dir = p_.option("buildout", "directory");
    for (auto& [name, section] : p_.sections) {
      if (name == "buildout" || !section.contains("recipe") || section.contains("location")) continue;
      section.set("location", dir ? "${buildout:directory}/parts/" + name : "parts/" + name);
    }
  }

  void substitute_all() {
    for (auto& [name, section] : p_.sections)
      for (auto& [key, value] : section) {
        std::vector<std::string> stack;
        value = resolved(name, key, stack);
      }
  }

 private:
  void expand_macro(const std::string& name, std::vector<std::string>& stack) {
    if (done_macros_.count(name)) return;
    for (const auto& s : stack) {
      if (s == name) {
        auto chain = stack;
        chain.push_back(name);
        throw MacroCycleError(std::move(chain));
      }
    }
    auto* section = p_.sections.get(name);
    if (!section) {
      auto chain = stack;
      chain.push_back(name);
      throw MissingReferenceError(std::move(chain));
    }
    const auto* bases = section->get(std::string(kMacroKey));
    if (bases) {
      stack.push_back(name);
      Section merged;
      for (const auto& base : split_words(*bases)) {
        expand_macro(base, stack);
        for (const auto& [k, v] : *p_.sections.get(base)) merged.set(k, v);
      }
      stack.pop_back();
      section = p_.sections.get(name);
      for (const auto& [k, v] : *section)
        if (k != kMacroKey) merged.set(k, v);
      *section = std::move(merged);
    }
    done_macros_.insert(name);
  }

  std::string resolved(const std::string& section, const std::string& key, std::vector<std::string>& stack) {
    const auto ref = section + ":" + key;
    if (auto it = cache_.find(ref); it != cache_.end()) return it->second;
    for (const auto& s : stack) {
      if (s == ref) {
        auto chain = stack;
        chain.push_back(ref);
        auto first = std::find(chain.begin(), chain.end(), ref);
        throw SubstitutionCycleError(std::vector<std::string>(first, chain.end()));
      }
    }
    const auto* raw = p_.option(section, key);
    if (!raw) {
      auto chain = stack;
      chain.push_back(ref);
      throw MissingReferenceError(std::move(chain));
    }
    stack.push_back(ref);
    std::string value = *raw;
    auto tokens = scan_tokens(value);
    std::string out;
    std::size_t last = 0;
    for (const auto& t : tokens) {
      out.append(value, last, t.begin - last);
      out += resolved(t.section, t.option, stack);
      last = t.end;
    }
    out.append(value, last, std::string::npos);
    stack.pop_back();
    cache_.emplace(ref, out);
    return out;
  }

  Profile& p_;
  std::set<std::string> done_macros_;
  std::map<std::string, std::string> cache_;
};

}  // namespace detail

// Expands `<= base` macros, gives every recipe section a default location,
// then substitutes every ${section:option} token.
inline Profile resolve(const Profile& profile) {
  Profile out = profile;
  detail::Resolver r(out);
  r.expand_macros();
  r.add_implicit_locations();
  r.substitute_all();
  return out;
}

}  // namespace slapforge::profile
