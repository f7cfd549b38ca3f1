#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/core/model.hpp"
#include "slapforge/error.hpp"
#include "slapforge/master/link.hpp"

namespace slapforge::grid {

// The example application: ASCII lowercase to uppercase, all else untouched.
inline std::string compute_upper_case(std::string_view input) {
  std::string out(input);
  for (auto& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

inline std::string compute_reverse(std::string_view input) { return {input.rbegin(), input.rend()}; }

// Simulated executables are text files whose first line is
// "#!sim-exec <program>".
inline constexpr std::string_view kExecMagic = "#!sim-exec ";

inline std::optional<std::string> program_of(std::string_view binary) {
  if (!binary.starts_with(kExecMagic)) return std::nullopt;
  auto rest = binary.substr(kExecMagic.size());
  auto nl = rest.find('\n');
  return std::string(rest.substr(0, nl));
}

using Computation = std::function<std::string(std::string_view)>;

inline const std::map<std::string, Computation>& builtin_programs() {
  static const std::map<std::string, Computation> programs{
      {"upper_case", [](std::string_view s) { return compute_upper_case(s); }},
      {"reverse", [](std::string_view s) { return compute_reverse(s); }},
  };
  return programs;
}

struct AppVersion {
  std::string app_name;
  std::string version;
  std::string platform;
  std::string exec_extension;
  std::string binary;        // path of the binary in the software root
  std::string program;       // what the binary runs
  std::string template_result;
  std::string template_wu;
  std::string dash;
  std::string part;          // the part that registered this app

  bool operator==(const AppVersion&) const = default;
};

enum class WuStatus { unsent, in_progress, done, error };

inline std::string_view to_string(WuStatus s) {
  switch (s) {
    case WuStatus::unsent: return "unsent";
    case WuStatus::in_progress: return "in_progress";
    case WuStatus::done: return "done";
    case WuStatus::error: return "error";
  }
  return "?";
}

struct WorkUnit {
  std::string wu_id;
  std::string app_name;
  std::string input;
  WuStatus status = WuStatus::unsent;
  std::optional<std::string> assigned_to;
  Tick deadline = 0;
  std::string template_wu;
  std::string template_result;
  std::uint32_t dispatch_count = 0;
};

struct GridResult {
  std::string wu_id;
  std::string output;
  std::string client_id;
  Tick report_tick = 0;
};

inline constexpr Tick kDefaultDispatchTimeout = 10;

struct Project {
  std::string project_name;
  std::string db_name;
  std::string url;
  std::map<std::string, std::string> account_keys;  // account -> key
  std::map<std::string, AppVersion> apps;
  std::map<std::string, WorkUnit> wu_store;
  std::vector<std::string> wu_order;                 // creation order
  std::map<std::string, GridResult> results;         // wu_id -> accepted result
  std::map<std::string, std::string> clients;        // client id -> platform
  Tick dispatch_timeout = kDefaultDispatchTimeout;

  void add_app(const AppVersion& app) {
    auto it = apps.find(app.app_name);
    if (it != apps.end()) {
      if (it->second == app) return;
      throw GridError("app-name '" + app.app_name + "' already deployed in project '" + project_name + "'");
    }
    apps.emplace(app.app_name, app);
  }

  // Returns false if the id already exists.
  bool add_work_unit(WorkUnit wu) {
    if (!apps.count(wu.app_name)) throw GridError("no app '" + wu.app_name + "' in project '" + project_name + "'");
    if (wu_store.count(wu.wu_id)) return false;
    wu_order.push_back(wu.wu_id);
    wu_store.emplace(wu.wu_id, std::move(wu));
    return true;
  }

  std::size_t count(WuStatus s) const {
    return static_cast<std::size_t>(std::count_if(wu_store.begin(), wu_store.end(),
                                                  [&](const auto& kv) { return kv.second.status == s; }));
  }

  bool valid_key(const std::string& key) const {
    return std::any_of(account_keys.begin(), account_keys.end(), [&](const auto& kv) { return kv.second == key; });
  }
};

// In-progress units past their deadline go back to unsent.
inline std::vector<std::string> reclaim_expired(Project& p, Tick now) {
  std::vector<std::string> out;
  for (const auto& id : p.wu_order) {
    auto& wu = p.wu_store.at(id);
    if (wu.status == WuStatus::in_progress && now >= wu.deadline) {
      wu.status = WuStatus::unsent;
      wu.assigned_to.reset();
      out.push_back(id);
    }
  }
  return out;
}

// Oldest unsent unit whose app runs on `platform`.
inline std::optional<WorkUnit> dispatch(Project& p, const std::string& client_id, const std::string& platform,
                                        Tick now) {
  if (!p.clients.count(client_id)) throw GridError("unknown client '" + client_id + "'");
  reclaim_expired(p, now);
  for (const auto& id : p.wu_order) {
    auto& wu = p.wu_store.at(id);
    if (wu.status != WuStatus::unsent) continue;
    if (p.apps.at(wu.app_name).platform != platform) continue;
    wu.status = WuStatus::in_progress;
    wu.assigned_to = client_id;
    wu.deadline = now + p.dispatch_timeout;
    ++wu.dispatch_count;
    return wu;
  }
  return std::nullopt;
}

inline void report_result(Project& p, const std::string& wu_id, const std::string& output,
                          const std::string& client_id, Tick now, bool failed = false) {
  auto it = p.wu_store.find(wu_id);
  if (it == p.wu_store.end()) throw GridError("unknown work unit '" + wu_id + "'");
  auto& wu = it->second;
  if (wu.status != WuStatus::in_progress) throw GridError("work unit '" + wu_id + "' is not in progress");
  if (wu.assigned_to != client_id) throw GridError("work unit '" + wu_id + "' is not assigned to '" + client_id + "'");
  if (p.results.count(wu_id)) throw GridError("work unit '" + wu_id + "' already has a result");
  wu.assigned_to.reset();
  if (failed) {
    wu.status = WuStatus::error;
    return;
  }
  wu.status = WuStatus::done;
  p.results.emplace(wu_id, GridResult{wu_id, output, client_id, now});
}

// Project endpoint reachable through the grid network while its server
// service is up.
class GridServer {
 public:
  explicit GridServer(Project project) : project_(std::move(project)) {}

  Project& project() noexcept { return project_; }
  const Project& project() const noexcept { return project_; }

  bool online() const noexcept { return online_; }
  void set_online(bool v) noexcept { online_ = v; }

  // Hook for the server's log; receives one line per accepted event.
  std::function<void(const std::string&)> on_event;

  SlapMessage handle(const SlapMessage& msg, Tick now) {
    const auto client = msg.get("client_id");
    SlapMessage reply(MessageKind::Ack, {{"client_id", client.empty() ? "?" : client}, {"ok", "1"}});
    try {
      switch (msg.kind) {
        case MessageKind::Attach: {
          if (!project_.valid_key(msg.at("account_key"))) throw AuthError("bad account key");
          project_.clients[client] = msg.at("platform");
          emit("attach " + client);
          return reply;
        }
        case MessageKind::FetchWork: {
          auto wu = dispatch(project_, client, msg.at("platform"), now);
          SlapMessage out(MessageKind::WorkAssignment, {{"client_id", client}});
          if (wu) {
            const auto& app = project_.apps.at(wu->app_name);
            out.set("wu_id", wu->wu_id).set("app", wu->app_name).set("input", wu->input);
            out.set("program", app.program).set("deadline", wu->deadline);
            out.set("template_result", wu->template_result);
            emit("dispatch " + wu->wu_id + " " + client);
          }
          return out;
        }
        case MessageKind::ReportResult: {
          report_result(project_, msg.at("wu_id"), msg.get("output"), client, now, msg.get("failed") == "1");
          emit("result " + msg.at("wu_id") + " " + client);
          return reply;
        }
        default:
          throw MalformedMessage("grid server does not accept " + std::string(to_string(msg.kind)));
      }
    } catch (const AuthError& e) {
      return reply.set("ok", "0").set("error", "auth").set("message", e.what());
    } catch (const Error& e) {
      return reply.set("ok", "0").set("error", "rejected").set("message", e.what());
    }
  }

 private:
  void emit(const std::string& line) {
    if (on_event) on_event(line);
  }

  Project project_;
  bool online_ = false;
};

// Routes grid messages by project url. Every exchange is encoded, decoded
// and optionally traced, like the master link.
class GridNetwork {
 public:
  explicit GridNetwork(master::Trace* trace = nullptr) : trace_(trace) {}

  void attach(const std::string& url, GridServer* server) { servers_[url] = server; }
  void detach(const std::string& url, const GridServer* server) {
    auto it = servers_.find(url);
    if (it != servers_.end() && it->second == server) servers_.erase(it);
  }

  GridServer* find(const std::string& url) const {
    auto it = servers_.find(url);
    return it == servers_.end() ? nullptr : it->second;
  }

  SlapMessage call(const std::string& url, const SlapMessage& request, Tick now) {
    auto* server = find(url);
    if (!server || !server->online()) throw GridError("grid server unreachable: " + url);
    auto req = encode_message(request);
    auto reply = encode_message(server->handle(decode_message(req), now));
    if (trace_) {
      trace_->record_line(std::move(req));
      trace_->record_line(reply);
    }
    return decode_message(reply);
  }

  void set_trace(master::Trace* t) { trace_ = t; }

 private:
  std::map<std::string, GridServer*> servers_;
  master::Trace* trace_;
};

// Projects hosted on one node, keyed by partition root.
class GridHost {
 public:
  explicit GridHost(GridNetwork* network) : network_(network) {}
  GridHost(const GridHost&) = delete;
  GridHost& operator=(const GridHost&) = delete;
  ~GridHost() {
    for (auto& [root, server] : servers_)
      if (network_) network_->detach(server->project().url, server.get());
  }

  GridServer* server_at(const std::string& partition_root) const {
    auto it = servers_.find(partition_root);
    return it == servers_.end() ? nullptr : it->second.get();
  }

  // Creates the project if absent; a project with the same name and
  // settings is left untouched.
  GridServer& ensure_project(const std::string& partition_root, Project project) {
    if (auto* existing = server_at(partition_root)) {
      const auto& p = existing->project();
      if (p.project_name != project.project_name || p.db_name != project.db_name || p.url != project.url)
        throw GridError("partition " + partition_root + " already hosts project '" + p.project_name + "'");
      return *existing;
    }
    auto server = std::make_unique<GridServer>(std::move(project));
    if (network_) network_->attach(server->project().url, server.get());
    auto& ref = *server;
    servers_.emplace(partition_root, std::move(server));
    return ref;
  }

  void drop(const std::string& partition_root) {
    auto it = servers_.find(partition_root);
    if (it == servers_.end()) return;
    if (network_) network_->detach(it->second->project().url, it->second.get());
    servers_.erase(it);
  }

  const std::map<std::string, std::unique_ptr<GridServer>>& servers() const noexcept { return servers_; }
  GridNetwork* network() const noexcept { return network_; }

 private:
  GridNetwork* network_;
  std::map<std::string, std::unique_ptr<GridServer>> servers_;
};

}  // namespace slapforge::grid
