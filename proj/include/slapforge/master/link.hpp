#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "slapforge/core/message.hpp"
#include "slapforge/master/master.hpp"

namespace slapforge::master {

// Ordered sink for encoded messages, one per line.
class Trace {
 public:
  void record(const SlapMessage& m) { record_line(encode_message(m)); }
  void record_line(std::string line) {
    std::lock_guard lock(mu_);
    lines_.push_back(std::move(line));
  }
  std::vector<std::string> lines() const {
    std::lock_guard lock(mu_);
    return lines_;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return lines_.size();
  }
  void write(std::ostream& out) const {
    std::lock_guard lock(mu_);
    for (const auto& l : lines_) out << l << '\n';
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
};

// Request/response channel to a master.
class MasterLink {
 public:
  virtual ~MasterLink() = default;
  virtual SlapMessage call(const SlapMessage& request) = 0;
};

// Same bytes as the socket transport, without the socket.
class InProcessLink : public MasterLink {
 public:
  explicit InProcessLink(Master& master, Trace* trace = nullptr) : master_(master), trace_(trace) {}

  SlapMessage call(const SlapMessage& request) override {
    auto req_bytes = encode_message(request);
    auto reply = master_.handle(decode_message(req_bytes));
    auto reply_bytes = encode_message(reply);
    if (trace_) {
      trace_->record_line(std::move(req_bytes));
      trace_->record_line(reply_bytes);
    }
    return decode_message(reply_bytes);
  }

 private:
  Master& master_;
  Trace* trace_;
};

// Throws the typed error an Ack{ok=0} stands for.
inline void raise_if_error(const SlapMessage& reply) {
  if (reply.kind != MessageKind::Ack || reply.get("ok") != "0") return;
  const auto code = reply.get("error");
  const auto what = reply.get("message");
  if (code == "auth") throw AuthError(what);
  if (code == "unknown-node") throw UnknownNodeError(what);
  if (code == "consistency") throw ConsistencyError(what);
  if (code == "malformed") throw MalformedMessage(what);
  throw Error(what);
}

// Typed client over any link.
class MasterClient {
 public:
  explicit MasterClient(MasterLink& link) : link_(link) {}

  std::uint32_t register_node(const std::string& node_id, const std::string& credentials,
                              std::uint32_t partition_count, Tick tick = 0) {
    SlapMessage m(MessageKind::RegisterNode);
    m.set("node_id", node_id).set("credentials", credentials);
    m.set("partition_count", static_cast<std::int64_t>(partition_count)).set("tick", tick);
    auto reply = call(m);
    return static_cast<std::uint32_t>(reply.at_int("ordinal"));
  }

  void supply(const std::string& release_url, const std::string& node_id) {
    SlapMessage m(MessageKind::Supply);
    m.set("node_id", node_id).set("url", release_url).set("requester", "admin");
    call(m);
  }

  SlapMessage request_instance(const std::string& requester, const std::string& reference, const std::string& url,
                               const std::string& type, const ParamMap& params,
                               const std::optional<std::string>& sla_node = std::nullopt) {
    SlapMessage m(MessageKind::RequestInstance);
    m.set("requester", requester).set("reference", reference).set("url", url).set("type", type);
    m.set_map("param", params);
    if (sla_node) m.set("sla.node_id", *sla_node);
    return call(m);
  }

  void set_state(const std::string& requester, const std::string& reference, RequestedState state) {
    SlapMessage m(MessageKind::SetState);
    m.set("requester", requester).set("reference", reference).set("state", std::string(to_string(state)));
    call(m);
  }

  std::vector<Task> get_tasks(const std::string& node_id, Tick tick) {
    SlapMessage m(MessageKind::GetTasks);
    m.set("node_id", node_id).set("tick", tick);
    auto reply = call(m);
    if (reply.kind != MessageKind::TaskList) throw MalformedMessage("expected TaskList");
    std::vector<Task> tasks;
    for (const auto& item : reply.get_list("task")) tasks.push_back(Task::from_params(item));
    return tasks;
  }

  void report_install(const std::string& node_id, const std::string& url, InstallStatus status, Tick tick) {
    SlapMessage m(MessageKind::ReportInstall);
    m.set("node_id", node_id).set("url", url).set("status", std::string(to_string(status))).set("tick", tick);
    call(m);
  }

  void report_state(const std::string& node_id, const std::vector<InstanceReport>& reports, Tick tick) {
    SlapMessage m(MessageKind::ReportState);
    m.set("node_id", node_id).set("tick", tick);
    std::vector<ParamMap> items;
    for (const auto& r : reports) {
      ParamMap item{{"id", r.instance_id}, {"status", r.status}};
      if (!r.error.empty()) item["error"] = r.error;
      for (const auto& [k, v] : r.connection) item["conn." + k] = v;
      items.push_back(std::move(item));
    }
    m.set_list("instance", items);
    call(m);
  }

 private:
  SlapMessage call(const SlapMessage& m) {
    auto reply = link_.call(m);
    raise_if_error(reply);
    return reply;
  }

  MasterLink& link_;
};

}  // namespace slapforge::master
