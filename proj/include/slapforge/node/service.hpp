#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "slapforge/grid/grid.hpp"
#include "slapforge/mac/policy.hpp"
#include "slapforge/node/simfs.hpp"
#include "slapforge/node/supervisor.hpp"
#include "slapforge/profile/recipe.hpp"

namespace slapforge::node {

// What a partition service can reach. Every file action goes through the
// node's enforcer under the service's own subject and identity.
struct ServiceEnv {
  std::string node_id;
  std::uint32_t partition = 0;
  std::string partition_root;
  std::string identity;  // slapuserN
  std::string subject;   // part_N_svc_t
  std::string instance_id;
  SimFs* fs = nullptr;
  mac::Enforcer* enforcer = nullptr;
  grid::GridHost* host = nullptr;
  grid::GridNetwork* network = nullptr;
  Tick now = 0;

  bool allowed(const std::string& path, mac::Permission p) const {
    if (!enforcer) return true;
    mac::AccessRequest req;
    req.subject = subject;
    req.identity = identity;
    req.path = path;
    req.cls = mac::ObjectClass::file;
    req.permission = p;
    req.tick = now;
    return enforcer->check(req, fs);
  }

  bool exec(const std::string& path) const { return fs->exists(path) && allowed(path, mac::Permission::execute); }

  std::optional<std::string> read(const std::string& path) const {
    const auto* e = fs->find(path);
    if (!e || !allowed(path, mac::Permission::read)) return std::nullopt;
    return e->content;
  }

  bool log(const std::string& path, const std::string& line) const {
    if (!allowed(path, mac::Permission::write)) return false;
    fs->append(path, line + "\n", identity);
    return true;
  }
};

using ServiceFactory = std::function<std::unique_ptr<Runnable>(const profile::ServiceDef&, ServiceEnv&)>;

}  // namespace slapforge::node
