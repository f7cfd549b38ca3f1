#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"

namespace slapforge {

// Wire vocabulary shared by master, agents, grid services and traces.
enum class MessageKind {
  RegisterNode,
  Supply,
  RequestInstance,
  GetTasks,
  TaskList,
  ReportState,
  ReportInstall,
  AccountingEvent,
  Ack,
  SetState,
  Attach,
  FetchWork,
  WorkAssignment,
  ReportResult,
  AccessCheck,
  Status,
  Part,
  Step,
  InjectWork,
};

inline constexpr std::array<std::pair<MessageKind, std::string_view>, 19> kMessageKindNames{{
    {MessageKind::RegisterNode, "RegisterNode"},
    {MessageKind::Supply, "Supply"},
    {MessageKind::RequestInstance, "RequestInstance"},
    {MessageKind::GetTasks, "GetTasks"},
    {MessageKind::TaskList, "TaskList"},
    {MessageKind::ReportState, "ReportState"},
    {MessageKind::ReportInstall, "ReportInstall"},
    {MessageKind::AccountingEvent, "AccountingEvent"},
    {MessageKind::Ack, "Ack"},
    {MessageKind::SetState, "SetState"},
    {MessageKind::Attach, "Attach"},
    {MessageKind::FetchWork, "FetchWork"},
    {MessageKind::WorkAssignment, "WorkAssignment"},
    {MessageKind::ReportResult, "ReportResult"},
    {MessageKind::AccessCheck, "AccessCheck"},
    {MessageKind::Status, "Status"},
    {MessageKind::Part, "Part"},
    {MessageKind::Step, "Step"},
    {MessageKind::InjectWork, "InjectWork"},
}};

inline std::string_view to_string(MessageKind k) {
  for (const auto& [kind, name] : kMessageKindNames)
    if (kind == k) return name;
  return "?";
}

inline MessageKind parse_message_kind(std::string_view s) {
  for (const auto& [kind, name] : kMessageKindNames)
    if (name == s) return kind;
  throw MalformedMessage("unknown message kind '" + std::string(s) + "'");
}

// Keys that identify the sender; every message carries at least one.
inline constexpr std::array<std::string_view, 5> kIdentityKeys{
    "node_id", "requester", "client_id", "subject", "origin"};

struct SlapMessage {
  MessageKind kind = MessageKind::Ack;
  std::map<std::string, std::string> payload;

  SlapMessage() = default;
  SlapMessage(MessageKind k, std::map<std::string, std::string> p = {})
      : kind(k), payload(std::move(p)) {}

  bool operator==(const SlapMessage&) const = default;

  bool has(const std::string& key) const { return payload.count(key) != 0; }

  const std::string& at(const std::string& key) const {
    auto it = payload.find(key);
    if (it == payload.end())
      throw MalformedMessage(std::string(to_string(kind)) + " lacks field '" + key + "'");
    return it->second;
  }

  std::string get(const std::string& key, std::string fallback = {}) const {
    auto it = payload.find(key);
    return it == payload.end() ? fallback : it->second;
  }

  std::int64_t at_int(const std::string& key) const {
    const auto& v = at(key);
    try {
      std::size_t used = 0;
      auto n = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw MalformedMessage("field '" + key + "' is not an integer: '" + v + "'");
    }
  }

  SlapMessage& set(const std::string& key, std::string value) {
    payload[key] = std::move(value);
    return *this;
  }
  SlapMessage& set(const std::string& key, std::int64_t value) {
    payload[key] = std::to_string(value);
    return *this;
  }

  // Flattened map under "prefix.<key>".
  void set_map(const std::string& prefix, const ParamMap& m) {
    for (const auto& [k, v] : m) payload[prefix + "." + k] = v;
  }
  ParamMap get_map(const std::string& prefix) const {
    ParamMap out;
    const auto p = prefix + ".";
    for (auto it = payload.lower_bound(p); it != payload.end() && it->first.starts_with(p); ++it)
      out[it->first.substr(p.size())] = it->second;
    return out;
  }

  // Flattened list under "prefix.count" and "prefix.<i>.<key>".
  void set_list(const std::string& prefix, const std::vector<ParamMap>& items) {
    payload[prefix + ".count"] = std::to_string(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) set_map(prefix + "." + std::to_string(i), items[i]);
  }
  std::vector<ParamMap> get_list(const std::string& prefix) const {
    std::vector<ParamMap> out;
    if (!has(prefix + ".count")) return out;
    auto n = at_int(prefix + ".count");
    if (n < 0 || n > 10'000'000) throw MalformedMessage("bad list count for '" + prefix + "'");
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out.push_back(get_map(prefix + "." + std::to_string(i)));
    return out;
  }

  bool well_formed() const {
    for (auto key : kIdentityKeys)
      if (auto it = payload.find(std::string(key)); it != payload.end() && !it->second.empty())
        return true;
    return false;
  }
};

namespace detail {

inline bool wire_safe(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '.' || c == '_' || c == '-' || c == '~' || c == ':' || c == '/' || c == '@' ||
         c == '+' || c == ',' || c == '[' || c == ']' || c == '$' || c == '{' || c == '}' ||
         c == '(' || c == ')' || c == '*' || c == '!' || c == '<' || c == '>' || c == '#' ||
         c == '?' || c == '&' || c == '\'' || c == '"' || c == '|' || c == '^';
}

inline void escape_into(std::string& out, std::string_view s) {
  static constexpr char d[] = "0123456789ABCDEF";
  for (unsigned char c : s) {
    if (wire_safe(c)) {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += d[c >> 4];
      out += d[c & 0xf];
    }
  }
}

inline std::string unescape(std::string_view s) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '%') {
      if (i + 2 >= s.size()) throw MalformedMessage("truncated escape");
      int hi = nibble(s[i + 1]), lo = nibble(s[i + 2]);
      if (hi < 0 || lo < 0) throw MalformedMessage("bad escape sequence");
      out += static_cast<char>((hi << 4) | lo);
      i += 2;
    } else if (!wire_safe(static_cast<unsigned char>(c))) {
      throw MalformedMessage("unescaped byte in field");
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace detail

inline constexpr std::string_view kWireMagic = "SLAP1";

// Textual record: `SLAP1 <Kind> <field count> key=value ... ;`, no trailing
// newline. Keys and values are percent-escaped so the record stays on one line;
// the count and the closing `;` make any truncation detectable.
inline std::string encode_message(const SlapMessage& msg) {
  if (!msg.well_formed())
    throw MalformedMessage(std::string(to_string(msg.kind)) + " carries no identity field");
  std::string out(kWireMagic);
  out += ' ';
  out += to_string(msg.kind);
  out += ' ';
  out += std::to_string(msg.payload.size());
  for (const auto& [k, v] : msg.payload) {
    if (k.empty()) throw MalformedMessage("empty field name");
    out += ' ';
    detail::escape_into(out, k);
    out += '=';
    detail::escape_into(out, v);
  }
  out += " ;";
  return out;
}

inline SlapMessage decode_message(std::string_view bytes) {
  if (!bytes.empty() && bytes.back() == '\n') bytes.remove_suffix(1);
  if (!bytes.empty() && bytes.back() == '\r') bytes.remove_suffix(1);

  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos <= bytes.size()) {
    auto sp = bytes.find(' ', pos);
    if (sp == std::string_view::npos) sp = bytes.size();
    tokens.push_back(bytes.substr(pos, sp - pos));
    pos = sp + 1;
  }
  if (tokens.size() < 4 || tokens[0] != kWireMagic) throw MalformedMessage("missing SLAP1 header");
  if (tokens.back() != ";") throw MalformedMessage("truncated message");
  tokens.pop_back();

  SlapMessage msg;
  msg.kind = parse_message_kind(tokens[1]);

  std::size_t count = 0;
  for (char c : tokens[2]) {
    if (c < '0' || c > '9') throw MalformedMessage("bad field count");
    count = count * 10 + static_cast<std::size_t>(c - '0');
    if (count > 100'000'000) throw MalformedMessage("bad field count");
  }
  if (tokens[2].empty()) throw MalformedMessage("bad field count");
  if (tokens.size() - 3 != count) {
    throw MalformedMessage("field count mismatch: header says " + std::to_string(count) +
                           ", found " + std::to_string(tokens.size() - 3));
  }
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos || eq == 0) throw MalformedMessage("field without '='");
    auto key = detail::unescape(tokens[i].substr(0, eq));
    auto value = detail::unescape(tokens[i].substr(eq + 1));
    if (!msg.payload.emplace(std::move(key), std::move(value)).second)
      throw MalformedMessage("duplicate field");
  }
  if (!msg.well_formed())
    throw MalformedMessage(std::string(to_string(msg.kind)) + " carries no identity field");
  return msg;
}

inline SlapMessage make_ack(const std::string& node_or_requester_key, const std::string& who) {
  return SlapMessage(MessageKind::Ack, {{node_or_requester_key, who}, {"ok", "1"}});
}

}  // namespace slapforge
