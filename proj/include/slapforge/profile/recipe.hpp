#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"
#include "slapforge/node/simfs.hpp"
#include "slapforge/profile/plan.hpp"
#include "slapforge/profile/resolve.hpp"

namespace slapforge::profile {

enum class ArtifactKind { file, service, object };

struct Artifact {
  ArtifactKind kind = ArtifactKind::file;
  std::string id;      // path for files, service or object id otherwise
  std::string digest;  // content digest

  auto operator<=>(const Artifact&) const = default;
};

// A supervised service a recipe asks the node to run.
struct ServiceDef {
  std::string id;
  std::string kind;    // selects the runnable, e.g. "boinc-server"
  std::string binary;  // executable path in the software root
  std::string config;  // file the service reads at each step
  std::string log;     // file the service appends to
  ParamMap options;

  bool operator==(const ServiceDef&) const = default;

  std::string fingerprint() const {
    std::string s = id + '\n' + kind + '\n' + binary + '\n' + config + '\n' + log;
    for (const auto& [k, v] : options) s += '\n' + k + '=' + v;
    return digest_hex(s);
  }
};

// Services and grid objects already materialized in one target; lets
// recipes decide what is new across re-runs.
struct TargetState {
  std::map<std::string, ServiceDef> services;
  std::map<std::string, std::string> objects;  // id -> digest
};

enum class Access { read, write, execute };

// Everything a recipe may touch while installing into one target.
struct TargetContext {
  std::string root;                  // software root or partition root
  std::string owner;                 // identity owning written files
  bool world_readable = false;
  TargetKind kind = TargetKind::software;
  node::SimFs* fs = nullptr;
  TargetState* state = nullptr;
  FetchFn fetch;
  ParamMap slapparameters;
  ParamMap partition;                // index, user, tap, root, ipv6, ipv4 (instance phase)
  std::string node_id;
  std::string instance_id;
  ParamMap* published = nullptr;     // connection parameters of the instance
  // Consulted before every file action; returns false to deny.
  std::function<bool(const std::string& path, Access)> gate;

  std::vector<Artifact> produced;
  std::vector<Artifact> fresh;

  void check(const std::string& path, Access a) const {
    if (gate && !gate(path, a))
      throw RecipeError("access denied: " + std::string(a == Access::read ? "read " : a == Access::write ? "write " : "execute ") + path);
  }

  std::string read_file(const std::string& path) const {
    check(path, Access::read);
    const auto* e = fs->find(path);
    if (!e) throw RecipeError("no such file: " + path);
    return e->content;
  }

  void write_file(const std::string& path, std::string content) {
    if (!node::path_under(path, root)) throw RecipeError("path escapes target root: " + path);
    check(path, Access::write);
    Artifact a{ArtifactKind::file, path, digest_hex(content)};
    produced.push_back(a);
    if (fs->write(path, std::move(content), owner, world_readable)) fresh.push_back(a);
  }

  void add_service(ServiceDef def) {
    Artifact a{ArtifactKind::service, def.id, def.fingerprint()};
    produced.push_back(a);
    auto it = state->services.find(def.id);
    if (it == state->services.end() || !(it->second == def)) {
      state->services[def.id] = std::move(def);
      fresh.push_back(a);
    }
  }

  void add_object(const std::string& id, const std::string& description) {
    Artifact a{ArtifactKind::object, id, digest_hex(description)};
    produced.push_back(a);
    auto& slot = state->objects[id];
    if (slot != a.digest) {
      slot = a.digest;
      fresh.push_back(a);
    }
  }

  void publish(const std::string& key, const std::string& value) {
    if (published) (*published)[key] = value;
  }
};

using RecipeBehavior = std::function<void(const PartSpec&, TargetContext&)>;

class RecipeRegistry {
 public:
  void register_recipe(const std::string& id, RecipeBehavior behavior) { behaviors_[id] = std::move(behavior); }

  const RecipeBehavior* find(const std::string& id) const {
    auto it = behaviors_.find(id);
    return it == behaviors_.end() ? nullptr : &it->second;
  }

  bool contains(const std::string& id) const { return behaviors_.count(id) != 0; }

 private:
  std::map<std::string, RecipeBehavior> behaviors_;
};

struct ExecutionResult {
  bool ok = true;
  std::string failed_part;
  std::string error;
  std::vector<Artifact> new_artifacts;
  std::vector<Artifact> artifacts;  // everything the plan produced, fresh or not
};

// Runs each part's recipe in plan order. Stops at the first failing part.
inline ExecutionResult execute(const InstallPlan& plan, const RecipeRegistry& registry, TargetContext& ctx) {
  ExecutionResult result;
  for (const auto& part : plan.parts) {
    const auto* behavior = registry.find(part.recipe);
    if (!behavior) {
      result.ok = false;
      result.failed_part = part.name;
      result.error = "unregistered recipe '" + part.recipe + "'";
      break;
    }
    try {
      (*behavior)(part, ctx);
    } catch (const std::exception& e) {
      result.ok = false;
      result.failed_part = part.name;
      result.error = e.what();
      break;
    }
  }
  result.new_artifacts = std::move(ctx.fresh);
  result.artifacts = std::move(ctx.produced);
  ctx.fresh.clear();
  ctx.produced.clear();
  return result;
}

inline bool option_true(const PartSpec& part, const std::string& key) {
  auto v = part.option_or(key, "false");
  return v == "true" || v == "yes" || v == "on" || v == "1";
}

// Archives are simulated as text: a "#sim-archive" line, then entries
// introduced by "@@ relative/path" followed by their content lines.
inline constexpr std::string_view kArchiveMagic = "#sim-archive";

inline std::vector<std::pair<std::string, std::string>> unpack_archive(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (header) {
      header = false;
      continue;
    }
    if (line.starts_with("@@ ")) {
      out.emplace_back(std::string(line.substr(3)), std::string());
    } else if (!out.empty()) {
      out.back().second += line;
      out.back().second += '\n';
    }
  }
  return out;
}

// hexagonit.recipe.download: fetches `url` (a path already in the target
// filesystem, or anything the fetch callback knows) into `destination`
// (default: the part location). download-only keeps the file as is,
// otherwise archives are unpacked.
inline void download_recipe(const PartSpec& part, TargetContext& ctx) {
  const auto* url = part.option("url");
  if (!url || url->empty()) throw RecipeError("download: missing url");
  const auto dest = part.option_or("destination", part.option_or("location", ctx.root + "/parts/" + part.name));

  std::string content;
  if (url->starts_with("/") && ctx.fs->exists(*url)) {
    content = ctx.read_file(*url);
  } else {
    if (!ctx.fetch) throw RecipeError("download: nothing can fetch " + *url);
    try {
      content = ctx.fetch(*url);
    } catch (const std::exception& e) {
      throw RecipeError("download: " + std::string(e.what()));
    }
  }

  if (!option_true(part, "download-only") && std::string_view(content).starts_with(kArchiveMagic)) {
    for (auto& [rel, data] : unpack_archive(content)) ctx.write_file(dest + "/" + rel, std::move(data));
    return;
  }
  auto filename = part.option_or("filename", "");
  if (filename.empty()) {
    auto slash = url->rfind('/');
    filename = slash == std::string::npos ? *url : url->substr(slash + 1);
  }
  ctx.write_file(dest + "/" + filename, std::move(content));
}

}  // namespace slapforge::profile
