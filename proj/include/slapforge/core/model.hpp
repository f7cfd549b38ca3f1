#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "slapforge/error.hpp"

namespace slapforge {

// Simulation time. Integer ticks, never wall clock.
using Tick = std::int64_t;

using ParamMap = std::map<std::string, std::string>;

// 64-bit FNV-1a; stable across platforms and runs.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string digest_hex(std::string_view data) { return hex64(fnv1a64(data)); }

inline constexpr std::string_view kPartitionTree = "/srv/slapgrid";
inline constexpr std::string_view kSoftwareTree = "/opt/slapgrid";
inline constexpr std::string_view kSystemIdentity = "root";

struct PartitionIdentity {
  std::string user_label;
  std::string tap_label;
  std::string root_path;

  bool operator==(const PartitionIdentity&) const = default;
};

inline PartitionIdentity derive_partition_identity(std::uint32_t index) {
  const auto n = std::to_string(index);
  return {"slapuser" + n, "slaptap" + n, std::string(kPartitionTree) + "/slappart" + n};
}

// One software root per (node, url); the path only depends on the url.
inline std::string install_root(std::string_view release_url) {
  return std::string(kSoftwareTree) + "/" + digest_hex(release_url);
}

// Synthetic addresses: fixed prefix, node ordinal, partition index.
// Collision-free while ordinal < 65536 and index < 65536.
inline std::string synthetic_ipv6(std::uint32_t node_ordinal, std::uint32_t index) {
  auto hex = [](std::uint32_t v) {
    static constexpr char d[] = "0123456789abcdef";
    std::string s;
    do {
      s.insert(s.begin(), d[v & 0xf]);
      v >>= 4;
    } while (v);
    return s;
  };
  return "fd5a:5109:" + hex(node_ordinal) + "::" + hex(index + 1);
}

inline std::string synthetic_ipv4(std::uint32_t node_ordinal, std::uint32_t index) {
  if (node_ordinal > 255 || index > 65535)
    throw Error("ipv4 space exhausted for node ordinal " + std::to_string(node_ordinal));
  return "10." + std::to_string(node_ordinal) + "." + std::to_string(index >> 8) + "." +
         std::to_string(index & 0xff);
}

enum class PartitionState { free, allocated };

struct ComputerPartition {
  std::uint32_t index = 0;
  std::string user_label;
  std::string tap_label;
  std::string root_path;
  std::string ipv6_addr;
  std::string ipv4_local;
  PartitionState state = PartitionState::free;
  std::optional<std::string> occupant;

  static ComputerPartition make(std::uint32_t node_ordinal, std::uint32_t index) {
    auto id = derive_partition_identity(index);
    return {index,
            id.user_label,
            id.tap_label,
            id.root_path,
            synthetic_ipv6(node_ordinal, index),
            synthetic_ipv4(node_ordinal, index),
            PartitionState::free,
            std::nullopt};
  }

  bool operator==(const ComputerPartition&) const = default;
};

enum class InstallStatus { requested, installing, installed, failed };

inline std::string_view to_string(InstallStatus s) {
  switch (s) {
    case InstallStatus::requested: return "requested";
    case InstallStatus::installing: return "installing";
    case InstallStatus::installed: return "installed";
    case InstallStatus::failed: return "failed";
  }
  return "?";
}

inline InstallStatus parse_install_status(std::string_view s) {
  if (s == "requested") return InstallStatus::requested;
  if (s == "installing") return InstallStatus::installing;
  if (s == "installed") return InstallStatus::installed;
  if (s == "failed") return InstallStatus::failed;
  throw MalformedMessage("unknown install status '" + std::string(s) + "'");
}

struct SoftwareRelease {
  std::string url;
  std::string install_root;
  InstallStatus status = InstallStatus::requested;
};

enum class Lifecycle { requested, allocated, deploying, running, stopped, destroyed };

inline std::string_view to_string(Lifecycle s) {
  switch (s) {
    case Lifecycle::requested: return "requested";
    case Lifecycle::allocated: return "allocated";
    case Lifecycle::deploying: return "deploying";
    case Lifecycle::running: return "running";
    case Lifecycle::stopped: return "stopped";
    case Lifecycle::destroyed: return "destroyed";
  }
  return "?";
}

inline Lifecycle parse_lifecycle(std::string_view s) {
  if (s == "requested") return Lifecycle::requested;
  if (s == "allocated") return Lifecycle::allocated;
  if (s == "deploying") return Lifecycle::deploying;
  if (s == "running") return Lifecycle::running;
  if (s == "stopped") return Lifecycle::stopped;
  if (s == "destroyed") return Lifecycle::destroyed;
  throw MalformedMessage("unknown lifecycle '" + std::string(s) + "'");
}

// What the requester wants; the lifecycle is what the node reported.
enum class RequestedState { started, stopped, destroyed };

inline std::string_view to_string(RequestedState s) {
  switch (s) {
    case RequestedState::started: return "started";
    case RequestedState::stopped: return "stopped";
    case RequestedState::destroyed: return "destroyed";
  }
  return "?";
}

inline RequestedState parse_requested_state(std::string_view s) {
  if (s == "started") return RequestedState::started;
  if (s == "stopped") return RequestedState::stopped;
  if (s == "destroyed") return RequestedState::destroyed;
  throw MalformedMessage("unknown requested state '" + std::string(s) + "'");
}

struct PartitionRef {
  std::string node_id;
  std::uint32_t index = 0;

  auto operator<=>(const PartitionRef&) const = default;
};

struct SoftwareInstance {
  std::string instance_id;
  std::string requester;
  std::string reference;
  std::string release_url;
  std::string instance_type;
  ParamMap slapparameters;
  std::optional<PartitionRef> partition;
  Lifecycle lifecycle = Lifecycle::requested;
  RequestedState requested_state = RequestedState::started;
  ParamMap connection;       // published by the deployed instance
  std::string last_error;    // last failure reported by the node
  bool stale = false;        // hosting node stopped polling
};

struct AccountingRecord {
  std::string instance_id;
  Tick start_time = 0;
  std::optional<Tick> stop_time;
  std::int64_t rate = 1;

  bool operator==(const AccountingRecord&) const = default;
};

struct NodeRecord {
  std::string node_id;
  std::string credentials;
  std::uint32_t ordinal = 0;
  std::uint32_t partition_count = 0;
  std::set<std::string> installed_releases;
  Tick last_report_time = 0;
  bool stale = false;
};

}  // namespace slapforge
