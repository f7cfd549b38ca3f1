#pragma once

#include <map>
#include <memory>
#include <string>

#include "slapforge/grid/grid.hpp"
#include "slapforge/node/service.hpp"
#include "slapforge/profile/recipe.hpp"

namespace slapforge::grid {

using profile::PartSpec;
using profile::TargetContext;

inline constexpr std::string_view kDefaultPlatform = "x86_64-pc-linux-gnu";

namespace detail {

// Option on the part, falling back to the instance's slapparameters.
inline std::string param(const PartSpec& part, const TargetContext& ctx, const std::string& key) {
  if (const auto* v = part.option(key); v && !v->empty()) return *v;
  auto it = ctx.slapparameters.find(key);
  return it == ctx.slapparameters.end() ? std::string() : it->second;
}

inline std::string required(const PartSpec& part, const std::string& key) {
  const auto* v = part.option(key);
  if (!v || v->empty()) throw RecipeError(part.recipe + ": missing option '" + key + "'");
  return *v;
}

inline std::string partition_name(const TargetContext& ctx) {
  auto slash = ctx.root.rfind('/');
  return ctx.root.substr(slash + 1);
}

inline std::string basename(const std::string& path) {
  auto slash = path.rfind('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

inline std::uint64_t parse_natural(const std::string& s, const std::string& what) {
  if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
    throw RecipeError(what + " is not a natural number: '" + s + "'");
  return std::stoull(s);
}

inline std::string project_dir(const TargetContext& ctx, const std::string& project) {
  return ctx.root + "/srv/boinc/" + project;
}

inline std::string project_name(const PartSpec& part, const TargetContext& ctx) {
  auto name = param(part, ctx, "project-name");
  if (name.empty()) throw RecipeError(part.recipe + ": no project-name given");
  return name;
}

}  // namespace detail

// slapos.cookbook:boinc -- an empty project, one account, a server service.
inline void recipe_boinc(const PartSpec& part, TargetContext& ctx, GridHost& host) {
  const auto project = detail::project_name(part, ctx);
  auto db = detail::param(part, ctx, "db-name");
  if (db.empty()) db = project + "_db";
  auto ipv6 = ctx.partition.count("ipv6") ? ctx.partition.at("ipv6") : ctx.node_id;
  const auto url = "http://[" + ipv6 + "]/" + project;
  const auto key = digest_hex(project + ":" + db + ":" + url);
  const auto dir = detail::project_dir(ctx, project);
  const auto config = ctx.root + "/etc/boinc-server.conf";

  Project p;
  p.project_name = project;
  p.db_name = db;
  p.url = url;
  p.account_keys["admin"] = key;
  try {
    host.ensure_project(ctx.root, std::move(p));
  } catch (const GridError& e) {
    throw RecipeError(e.what());
  }

  ctx.write_file(config, "project = " + project + "\ndb = " + db + "\nurl = " + url + "\n");
  ctx.write_file(dir + "/project.xml", "<project name=\"" + project + "\" db=\"" + db + "\"/>\n");
  ctx.write_file(dir + "/keys/admin.key", key + "\n");
  ctx.add_object("project:" + project, project + "|" + db + "|" + url);

  profile::ServiceDef svc;
  svc.id = detail::partition_name(ctx) + ":" + part.name;
  svc.kind = "boinc-server";
  svc.binary = part.option_or("server-binary", "");
  svc.config = config;
  svc.log = ctx.root + "/var/log/boinc-server.log";
  svc.options = {{"project-name", project}};
  ctx.add_service(std::move(svc));

  ctx.publish("url", url);
  ctx.publish("account-key", key);
  ctx.publish("project-name", project);
}

// slapos.cookbook:boinc-app -- one application and its work units in the
// project already deployed in this partition.
inline void recipe_boinc_app(const PartSpec& part, TargetContext& ctx, GridHost& host) {
  const auto project = detail::project_name(part, ctx);
  auto* server = host.server_at(ctx.root);
  if (!server || server->project().project_name != project)
    throw RecipeError(part.recipe + ": no BOINC project '" + project + "' in " + ctx.root);

  AppVersion app;
  app.app_name = detail::required(part, "app-name");
  app.version = detail::required(part, "version");
  app.platform = detail::required(part, "platform");
  app.exec_extension = part.option_or("extension", "");
  app.binary = detail::required(part, "binary");
  app.template_result = part.option_or("template-result", "");
  app.template_wu = part.option_or("template-wu", "");
  app.dash = part.option_or("dash", "");
  app.part = part.name;
  const auto wu_name = detail::required(part, "wu-name");
  if (wu_name.find_first_of(" \t\n") != std::string::npos)
    throw RecipeError(part.recipe + ": wu-name must not contain blanks");
  const auto wu_number = detail::parse_natural(detail::required(part, "wu-number"), "wu-number");

  const auto binary = ctx.read_file(app.binary);
  app.program = program_of(binary).value_or("");
  const auto input_file = part.option_or("input-file", "");
  const auto input = input_file.empty() ? std::string() : ctx.read_file(input_file);

  try {
    server->project().add_app(app);
  } catch (const GridError& e) {
    throw RecipeError(e.what());
  }

  const auto dir = detail::project_dir(ctx, project);
  const auto app_dir = dir + "/apps/" + app.app_name + "/" + app.version + "/" + app.platform;
  ctx.write_file(app_dir + "/" + detail::basename(app.binary) + app.exec_extension, binary);
  for (const auto& [tpl, suffix] : {std::pair{app.template_wu, "_wu"}, std::pair{app.template_result, "_result"}}) {
    if (tpl.empty()) continue;
    ctx.write_file(dir + "/templates/" + app.app_name + suffix, ctx.read_file(tpl));
  }
  ctx.add_object("app:" + app.app_name,
                 app.app_name + "|" + app.version + "|" + app.platform + "|" + app.binary + "|" + app.program);

  for (std::uint64_t i = 0; i < wu_number; ++i) {
    WorkUnit wu;
    wu.wu_id = wu_name + "_" + std::to_string(i);
    wu.app_name = app.app_name;
    wu.input = input;
    wu.template_wu = app.template_wu;
    wu.template_result = app.template_result;
    try {
      server->project().add_work_unit(wu);
    } catch (const GridError& e) {
      throw RecipeError(e.what());
    }
    ctx.write_file(dir + "/download/" + wu.wu_id, input);
    ctx.add_object("wu:" + wu.wu_id, wu.app_name + "|" + digest_hex(input));
  }
}

// slapos.cookbook:boinc-client -- a compute node attached to a project.
inline void recipe_boinc_client(const PartSpec& part, TargetContext& ctx) {
  const auto url = detail::param(part, ctx, "server-url");
  const auto key = detail::param(part, ctx, "account-key");
  if (url.empty()) throw RecipeError(part.recipe + ": no server-url given");
  if (key.empty()) throw RecipeError(part.recipe + ": no account-key given");
  auto platform = detail::param(part, ctx, "platform");
  if (platform.empty()) platform = kDefaultPlatform;
  const auto config = ctx.root + "/etc/boinc-client.conf";
  ctx.write_file(config, "server-url = " + url + "\nplatform = " + platform + "\n");
  ctx.write_file(ctx.root + "/etc/account.key", key + "\n");

  profile::ServiceDef svc;
  svc.id = detail::partition_name(ctx) + ":" + part.name;
  svc.kind = "boinc-client";
  svc.binary = part.option_or("client-binary", "");
  svc.config = config;
  svc.log = ctx.root + "/var/log/boinc-client.log";
  svc.options = {{"server-url", url}, {"account-key", key}, {"platform", platform},
                 {"client-id", ctx.instance_id.empty() ? svc.id : ctx.instance_id}};
  ctx.add_service(std::move(svc));
}

// slapos.cookbook:mariadb -- placeholder database service.
inline void recipe_mariadb(const PartSpec& part, TargetContext& ctx) {
  auto db = detail::param(part, ctx, "db-name");
  if (db.empty()) db = "main";
  const auto config = ctx.root + "/etc/my.cnf";
  ctx.write_file(config, "[mysqld]\ndatabase = " + db + "\n");
  profile::ServiceDef svc;
  svc.id = detail::partition_name(ctx) + ":" + part.name;
  svc.kind = "mariadb";
  svc.binary = part.option_or("binary", "");
  svc.config = config;
  svc.log = ctx.root + "/var/log/mariadb.log";
  ctx.add_service(std::move(svc));
  auto ipv6 = ctx.partition.count("ipv6") ? ctx.partition.at("ipv6") : ctx.node_id;
  ctx.publish("database-url", "mysql://[" + ipv6 + "]:3306/" + db);
}

inline void register_builtin_recipes(profile::RecipeRegistry& registry, GridHost& host) {
  registry.register_recipe("hexagonit.recipe.download", profile::download_recipe);
  registry.register_recipe("slapos.cookbook:boinc",
                           [&host](const PartSpec& p, TargetContext& c) { recipe_boinc(p, c, host); });
  auto app = [&host](const PartSpec& p, TargetContext& c) { recipe_boinc_app(p, c, host); };
  registry.register_recipe("slapos.cookbook:boinc-app", app);
  registry.register_recipe("slapos.cookbook:boinc.app", app);
  registry.register_recipe("slapos.cookbook:boinc-client", recipe_boinc_client);
  registry.register_recipe("slapos.cookbook:mariadb", recipe_mariadb);
}

// ---- services ---------------------------------------------------------------

class ServerService : public node::Runnable {
 public:
  ServerService(profile::ServiceDef def, node::ServiceEnv& env) : def_(std::move(def)), env_(env) {}
  ~ServerService() override { halted(); }

  bool start(Tick now) override {
    env_.now = now;
    server_ = env_.host ? env_.host->server_at(env_.partition_root) : nullptr;
    if (!server_ || !env_.exec(def_.binary) || !env_.read(def_.config)) return false;
    server_->on_event = [this](const std::string& line) { env_.log(def_.log, line); };
    server_->set_online(true);
    return true;
  }

  node::RunState step(Tick now) override {
    env_.now = now;
    if (!env_.read(def_.config)) return node::RunState::failed;
    for (const auto& id : reclaim_expired(server_->project(), now)) env_.log(def_.log, "timeout " + id);
    return node::RunState::running;
  }

  void halted() override {
    if (!server_) return;
    server_->set_online(false);
    server_->on_event = nullptr;
    server_ = nullptr;
  }

 private:
  profile::ServiceDef def_;
  node::ServiceEnv& env_;
  GridServer* server_ = nullptr;
};

// One fetch / compute / report cycle per tick.
class ClientService : public node::Runnable {
 public:
  ClientService(profile::ServiceDef def, node::ServiceEnv& env) : def_(std::move(def)), env_(env) {}

  bool start(Tick now) override {
    env_.now = now;
    attached_ = false;
    return env_.exec(def_.binary) && env_.read(def_.config).has_value();
  }

  node::RunState step(Tick now) override {
    env_.now = now;
    const auto& url = def_.options.at("server-url");
    const auto& id = def_.options.at("client-id");
    const auto& platform = def_.options.at("platform");
    try {
      if (!attached_) {
        SlapMessage m(MessageKind::Attach);
        m.set("client_id", id).set("account_key", def_.options.at("account-key")).set("platform", platform);
        auto reply = env_.network->call(url, m, now);
        if (reply.get("ok") != "1") {
          env_.log(def_.log, "attach rejected: " + reply.get("message"));
          return node::RunState::failed;
        }
        attached_ = true;
      }
      SlapMessage fetch(MessageKind::FetchWork);
      fetch.set("client_id", id).set("platform", platform);
      auto work = env_.network->call(url, fetch, now);
      if (!work.has("wu_id")) return node::RunState::running;

      SlapMessage report(MessageKind::ReportResult);
      report.set("client_id", id).set("wu_id", work.at("wu_id"));
      const auto& programs = builtin_programs();
      auto prog = programs.find(work.get("program"));
      if (prog == programs.end()) {
        report.set("failed", "1");
      } else {
        report.set("output", prog->second(work.get("input")));
      }
      auto ack = env_.network->call(url, report, now);
      env_.log(def_.log, "result " + work.at("wu_id") + (ack.get("ok") == "1" ? " accepted" : " rejected"));
      return node::RunState::running;
    } catch (const GridError& e) {
      env_.log(def_.log, e.what());
      return node::RunState::failed;
    }
  }

  void halted() override { attached_ = false; }

 private:
  profile::ServiceDef def_;
  node::ServiceEnv& env_;
  bool attached_ = false;
};

class DatabaseService : public node::Runnable {
 public:
  DatabaseService(profile::ServiceDef def, node::ServiceEnv& env) : def_(std::move(def)), env_(env) {}
  bool start(Tick now) override {
    env_.now = now;
    return env_.exec(def_.binary) && env_.read(def_.config).has_value();
  }
  node::RunState step(Tick now) override {
    env_.now = now;
    return env_.read(def_.config) ? node::RunState::running : node::RunState::failed;
  }

 private:
  profile::ServiceDef def_;
  node::ServiceEnv& env_;
};

inline std::map<std::string, node::ServiceFactory> builtin_service_factories() {
  return {
      {"boinc-server",
       [](const profile::ServiceDef& d, node::ServiceEnv& e) { return std::make_unique<ServerService>(d, e); }},
      {"boinc-client",
       [](const profile::ServiceDef& d, node::ServiceEnv& e) { return std::make_unique<ClientService>(d, e); }},
      {"mariadb",
       [](const profile::ServiceDef& d, node::ServiceEnv& e) { return std::make_unique<DatabaseService>(d, e); }},
  };
}

}  // namespace slapforge::grid
