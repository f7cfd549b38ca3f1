#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"
#include "slapforge/node/simfs.hpp"

namespace slapforge::mac {

enum class ObjectClass { file, dir, process };

inline std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::file: return "file";
    case ObjectClass::dir: return "dir";
    case ObjectClass::process: return "process";
  }
  return "?";
}

inline std::optional<ObjectClass> parse_class(std::string_view s) {
  if (s == "file") return ObjectClass::file;
  if (s == "dir") return ObjectClass::dir;
  if (s == "process") return ObjectClass::process;
  return std::nullopt;
}

enum class Permission : std::uint8_t { read = 1, write = 2, execute = 4, transition = 8 };

inline constexpr std::array<std::pair<Permission, std::string_view>, 4> kPermissionNames{{
    {Permission::read, "read"},
    {Permission::write, "write"},
    {Permission::execute, "execute"},
    {Permission::transition, "transition"},
}};

inline std::string_view to_string(Permission p) {
  for (const auto& [perm, name] : kPermissionNames)
    if (perm == p) return name;
  return "?";
}

inline std::optional<Permission> parse_permission(std::string_view s) {
  for (const auto& [perm, name] : kPermissionNames)
    if (name == s) return perm;
  return std::nullopt;
}

using PermissionSet = std::uint8_t;

inline PermissionSet perms(std::initializer_list<Permission> ps) {
  PermissionSet out = 0;
  for (auto p : ps) out |= static_cast<PermissionSet>(p);
  return out;
}

struct AllowRule {
  std::string subject;
  std::string object;
  ObjectClass cls = ObjectClass::file;
  PermissionSet permissions = 0;

  bool grants(Permission p) const { return permissions & static_cast<PermissionSet>(p); }

  auto operator<=>(const AllowRule&) const = default;
};

enum class Mode { targeted, strict };

inline std::string_view to_string(Mode m) { return m == Mode::strict ? "strict" : "targeted"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "strict") return Mode::strict;
  if (s == "targeted") return Mode::targeted;
  throw PolicyError("unknown mode '" + std::string(s) + "'");
}

struct Policy {
  Mode mode = Mode::targeted;
  std::set<std::string> labeled_subjects;  // only consulted in targeted mode
  std::set<AllowRule> rules;

  void add(AllowRule rule) {
    if (rule.permissions == 0) throw PolicyError("rule " + rule.subject + " -> " + rule.object + " grants nothing");
    // Rules for the same (subject, object, class) merge their permissions.
    for (auto it = rules.begin(); it != rules.end(); ++it) {
      if (it->subject == rule.subject && it->object == rule.object && it->cls == rule.cls) {
        rule.permissions |= it->permissions;
        rules.erase(it);
        break;
      }
    }
    rules.insert(std::move(rule));
  }

  void add_all(const std::set<AllowRule>& rs) {
    for (const auto& r : rs) add(r);
  }

  const AllowRule* match(const std::string& subject, const std::string& object, ObjectClass cls, Permission p) const {
    auto it = rules.lower_bound(AllowRule{subject, object, cls, 0});
    if (it != rules.end() && it->subject == subject && it->object == object && it->cls == cls && it->grants(p))
      return &*it;
    return nullptr;
  }

  bool enforces(const std::string& subject) const {
    return mode == Mode::strict || labeled_subjects.count(subject) != 0;
  }

  bool operator==(const Policy&) const = default;
};

inline Policy set_mode(Policy policy, Mode mode) {
  policy.mode = mode;
  return policy;
}

// Label vocabulary.
inline constexpr std::string_view kAgentSubject = "slapgrid_t";
inline constexpr std::string_view kSoftwareLabel = "sw_t";
inline constexpr std::string_view kBaseLabel = "base_t";

inline std::string partition_label(std::uint32_t n) { return "part_" + std::to_string(n) + "_t"; }
inline std::string partition_log_label(std::uint32_t n) { return "part_" + std::to_string(n) + "_log_t"; }
inline std::string service_subject(std::uint32_t n) { return "part_" + std::to_string(n) + "_svc_t"; }

inline constexpr std::string_view kLogSubtree = "/var/log";

// Maps paths to object labels by prefix:
//   /srv/slapgrid/slappartN/...          part_N_t (part_N_log_t under var/log)
//   /opt/slapgrid/...                    sw_t
//   anything else absolute               base_t
// Paths in /srv/slapgrid that are not a known partition, and relative
// paths, are unlabeled.
class Labeling {
 public:
  Labeling() = default;
  explicit Labeling(std::set<std::uint32_t> partitions) : partitions_(std::move(partitions)) {}

  const std::set<std::uint32_t>& partitions() const noexcept { return partitions_; }

  std::optional<std::string> label_of(std::string_view path) const {
    if (path.empty() || path.front() != '/') return std::nullopt;
    if (path == kSoftwareTree || node::path_under(path, kSoftwareTree)) return std::string(kSoftwareLabel);
    if (path == kPartitionTree) return std::string(kBaseLabel);
    if (node::path_under(path, kPartitionTree)) {
      auto idx = partition_of(path);
      if (!idx) return std::nullopt;
      auto root = derive_partition_identity(*idx).root_path;
      auto log_root = root + std::string(kLogSubtree);
      if (path == log_root || node::path_under(path, log_root)) return partition_log_label(*idx);
      return partition_label(*idx);
    }
    return std::string(kBaseLabel);
  }

  // Partition index owning `path`, if it lies in a labeled partition.
  std::optional<std::uint32_t> partition_of(std::string_view path) const {
    if (!node::path_under(path, kPartitionTree)) return std::nullopt;
    auto rest = path.substr(kPartitionTree.size() + 1);
    constexpr std::string_view stem = "slappart";
    if (!rest.starts_with(stem)) return std::nullopt;
    rest.remove_prefix(stem.size());
    auto end = rest.find('/');
    auto digits = rest.substr(0, end);
    if (digits.empty() || digits.size() > 9) return std::nullopt;
    std::uint32_t n = 0;
    for (char c : digits) {
      if (c < '0' || c > '9') return std::nullopt;
      n = n * 10 + static_cast<std::uint32_t>(c - '0');
    }
    if (digits.size() > 1 && digits.front() == '0') return std::nullopt;
    if (!partitions_.count(n)) return std::nullopt;
    return n;
  }

 private:
  std::set<std::uint32_t> partitions_;
};

struct AccessRequest {
  std::string subject;
  std::string identity;     // slapuserN, root
  std::string path;         // object path (file, dir)
  std::string target;       // new subject label (process transitions)
  ObjectClass cls = ObjectClass::file;
  Permission permission = Permission::read;
  Tick tick = 0;
};

enum class Reason { rule_match, mac_not_consulted, dac_denied, no_rule, unlabeled };

inline std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::rule_match: return "rule";
    case Reason::mac_not_consulted: return "dac-only";
    case Reason::dac_denied: return "dac-denied";
    case Reason::no_rule: return "no-rule";
    case Reason::unlabeled: return "unlabeled";
  }
  return "?";
}

struct AuditRecord {
  AccessRequest request;
  std::string object_label;
  bool allowed = false;
  Reason reason = Reason::no_rule;
  std::optional<AllowRule> matched;
};

enum class Confinement { off, on };

// Owner by path convention: partition trees belong to their slapuser,
// everything else to root.
inline std::string conventional_owner(std::string_view path) {
  if (node::path_under(path, kPartitionTree)) {
    auto rest = path.substr(kPartitionTree.size() + 1);
    auto end = rest.find('/');
    auto part = rest.substr(0, end);
    if (part.starts_with("slappart")) return "slapuser" + std::string(part.substr(8));
  }
  return std::string(kSystemIdentity);
}

inline bool dac_allows(const AccessRequest& req, const node::SimFs* fs) {
  if (req.identity == kSystemIdentity) return true;
  if (req.cls == ObjectClass::process) return false;
  const node::FileEntry* entry = fs ? fs->find(req.path) : nullptr;
  const std::string owner = entry ? entry->owner : conventional_owner(req.path);
  if (owner == req.identity) return true;
  const bool world_rx = entry ? entry->world_readable
                              : (req.path == kSoftwareTree || node::path_under(req.path, kSoftwareTree));
  return world_rx && (req.permission == Permission::read || req.permission == Permission::execute);
}

// DAC first, then MAC; the decision is their conjunction. Root passes DAC
// but never bypasses MAC.
inline AuditRecord check_access(const Policy& policy, const Labeling& labeling, const AccessRequest& req,
                                Confinement confinement = Confinement::on, const node::SimFs* fs = nullptr) {
  AuditRecord rec;
  rec.request = req;
  if (req.cls == ObjectClass::process) {
    rec.object_label = req.target;
  } else if (auto label = labeling.label_of(req.path)) {
    rec.object_label = *label;
  }

  if (!dac_allows(req, fs)) {
    rec.reason = Reason::dac_denied;
    return rec;
  }
  if (confinement == Confinement::off || !policy.enforces(req.subject)) {
    rec.allowed = true;
    rec.reason = Reason::mac_not_consulted;
    return rec;
  }
  if (rec.object_label.empty()) {
    rec.reason = Reason::unlabeled;
    return rec;
  }
  if (const auto* rule = policy.match(req.subject, rec.object_label, req.cls, req.permission)) {
    rec.allowed = true;
    rec.reason = Reason::rule_match;
    rec.matched = *rule;
    return rec;
  }
  rec.reason = Reason::no_rule;
  return rec;
}

// The per-service confinement pattern: run the binary from the software
// root, read the partition, write the partition's logs. Nothing else.
inline std::set<AllowRule> generate_partition_policy(std::uint32_t partition, std::string_view service_kind = {}) {
  (void)service_kind;  // every current service kind shares this shape
  const auto subject = service_subject(partition);
  return {
      {subject, std::string(kSoftwareLabel), ObjectClass::file, perms({Permission::execute})},
      {subject, partition_label(partition), ObjectClass::file, perms({Permission::read})},
      {subject, partition_log_label(partition), ObjectClass::file, perms({Permission::write})},
  };
}

// The deployment agent's own policy: manage software roots and the given
// partitions, and launch partition services.
inline std::set<AllowRule> generate_agent_policy(const std::set<std::uint32_t>& partitions) {
  const std::string agent(kAgentSubject);
  std::set<AllowRule> out{
      {agent, std::string(kSoftwareLabel), ObjectClass::file,
       perms({Permission::read, Permission::write, Permission::execute})},
  };
  for (auto n : partitions) {
    out.insert({agent, partition_label(n), ObjectClass::file, perms({Permission::read, Permission::write})});
    out.insert({agent, partition_log_label(n), ObjectClass::file, perms({Permission::read, Permission::write})});
    out.insert({agent, service_subject(n), ObjectClass::process, perms({Permission::transition})});
  }
  return out;
}

// ---- text format --------------------------------------------------------
//
//   # comment
//   mode strict;
//   enforce part_0_svc_t;
//   allow part_0_svc_t part_0_t:file { read };

inline std::string format_rule(const AllowRule& r) {
  std::string out = "allow " + r.subject + " " + r.object + ":" + std::string(to_string(r.cls)) + " {";
  for (const auto& [perm, name] : kPermissionNames)
    if (r.grants(perm)) out += " " + std::string(name);
  return out + " };";
}

inline std::string serialize_policy(const Policy& p) {
  std::string out = "mode " + std::string(to_string(p.mode)) + ";\n";
  for (const auto& s : p.labeled_subjects) out += "enforce " + s + ";\n";
  for (const auto& r : p.rules) out += format_rule(r) + "\n";
  return out;
}

inline Policy parse_policy(std::string_view text, const std::string& origin = "<policy>") {
  Policy p;
  std::size_t pos = 0, line_no = 0;
  auto fail = [&](const std::string& what) {
    throw PolicyError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;

    std::istringstream in(line);
    std::vector<std::string> w;
    for (std::string t; in >> t;) w.push_back(t);
    if (w.empty() || w[0].front() == '#') continue;

    if (w[0] == "mode") {
      if (w.size() != 2) fail("expected 'mode <targeted|strict>;'");
      if (w[1] == "strict;") p.mode = Mode::strict;
      else if (w[1] == "targeted;") p.mode = Mode::targeted;
      else fail("unknown mode '" + w[1] + "'");
    } else if (w[0] == "enforce") {
      if (w.size() != 2 || !w[1].ends_with(";") || w[1].size() < 2) fail("expected 'enforce <subject>;'");
      p.labeled_subjects.insert(w[1].substr(0, w[1].size() - 1));
    } else if (w[0] == "allow") {
      // allow S O:class { p1 p2 };
      if (w.size() < 6 || w[3] != "{" || w.back() != "};") fail("expected 'allow <subject> <object>:<class> { perms };'");
      AllowRule r;
      r.subject = w[1];
      auto colon = w[2].rfind(':');
      if (colon == std::string::npos || colon == 0) fail("object needs ':<class>'");
      r.object = w[2].substr(0, colon);
      auto cls = parse_class(w[2].substr(colon + 1));
      if (!cls) fail("unknown class '" + w[2].substr(colon + 1) + "'");
      r.cls = *cls;
      for (std::size_t i = 4; i + 1 < w.size(); ++i) {
        auto perm = parse_permission(w[i]);
        if (!perm) fail("unknown permission '" + w[i] + "'");
        r.permissions |= static_cast<PermissionSet>(*perm);
      }
      if (r.permissions == 0) fail("empty permission set");
      p.add(std::move(r));
    } else {
      fail("unknown statement '" + w[0] + "'");
    }
  }
  return p;
}

// Append-only, ordered.
class AuditLog {
 public:
  void append(AuditRecord r) {
    std::lock_guard lock(mu_);
    records_.push_back(std::move(r));
  }
  std::vector<AuditRecord> snapshot() const {
    std::lock_guard lock(mu_);
    return records_;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<AuditRecord> records_;
};

// AccessCheck messages carry one request and, in traces, the decision.
inline SlapMessage to_message(const AuditRecord& r) {
  SlapMessage m(MessageKind::AccessCheck);
  m.set("subject", r.request.subject).set("identity", r.request.identity);
  m.set("class", std::string(to_string(r.request.cls))).set("perm", std::string(to_string(r.request.permission)));
  if (!r.request.path.empty()) m.set("path", r.request.path);
  if (!r.request.target.empty()) m.set("target", r.request.target);
  m.set("tick", r.request.tick);
  m.set("allowed", r.allowed ? "1" : "0").set("reason", std::string(to_string(r.reason)));
  return m;
}

inline AccessRequest request_from_message(const SlapMessage& m) {
  if (m.kind != MessageKind::AccessCheck) throw MalformedMessage("not an AccessCheck");
  AccessRequest r;
  r.subject = m.at("subject");
  r.identity = m.get("identity");
  if (r.identity.empty()) r.identity = std::string(kSystemIdentity);
  r.path = m.get("path");
  r.target = m.get("target");
  auto cls = parse_class(m.get("class").empty() ? "file" : m.get("class"));
  auto perm = parse_permission(m.at("perm"));
  if (!cls || !perm) throw MalformedMessage("bad class or permission in AccessCheck");
  r.cls = *cls;
  r.permission = *perm;
  r.tick = m.has("tick") ? m.at_int("tick") : 0;
  return r;
}

// Holds the live policy snapshot for one node; swaps are atomic with
// respect to concurrent checks.
class Enforcer {
 public:
  Enforcer() : policy_(std::make_shared<const Policy>()) {}

  std::shared_ptr<const Policy> policy() const {
    std::lock_guard lock(mu_);
    return policy_;
  }

  template <typename Fn>
  void update(Fn&& fn) {
    std::lock_guard lock(mu_);
    Policy next = *policy_;
    fn(next);
    policy_ = std::make_shared<const Policy>(std::move(next));
  }

  void set_labeling(Labeling l) {
    std::lock_guard lock(mu_);
    labeling_ = std::make_shared<const Labeling>(std::move(l));
  }
  std::shared_ptr<const Labeling> labeling() const {
    std::lock_guard lock(mu_);
    return labeling_;
  }

  Confinement confinement = Confinement::off;

  bool check(const AccessRequest& req, const node::SimFs* fs) {
    auto p = policy();
    auto l = labeling();
    auto rec = check_access(*p, l ? *l : Labeling{}, req, confinement, fs);
    const bool allowed = rec.allowed;
    if (confinement == Confinement::on || !allowed) audit.append(std::move(rec));
    return allowed;
  }

  AuditLog audit;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Policy> policy_;
  std::shared_ptr<const Labeling> labeling_;
};

// Random requests from a partition service into some other partition.
inline std::vector<AccessRequest> cross_partition_fuzz(std::uint64_t seed, std::size_t n, std::uint32_t partitions,
                                                      const std::string& identity = std::string(kSystemIdentity)) {
  if (partitions < 2) throw PolicyError("fuzzing needs at least two partitions");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> part(0, partitions - 1);
  static constexpr std::array<std::string_view, 6> tails{"/etc/app.conf", "/srv/data", "/var/log/app.log",
                                                         "/bin/run", "/tmp/cache", "/etc/secret.key"};
  std::uniform_int_distribution<std::size_t> tail(0, tails.size() - 1);
  std::uniform_int_distribution<int> perm(0, 2);
  std::vector<AccessRequest> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto from = part(rng);
    auto to = part(rng);
    while (to == from) to = part(rng);
    AccessRequest r;
    r.subject = service_subject(from);
    r.identity = identity;
    r.path = derive_partition_identity(to).root_path + std::string(tails[tail(rng)]);
    r.cls = ObjectClass::file;
    r.permission = static_cast<Permission>(1 << perm(rng));
    r.tick = static_cast<Tick>(i);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace slapforge::mac
