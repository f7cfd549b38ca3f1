#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slapforge/core/model.hpp"

namespace slapforge::node {

enum class RunState { running, exited, failed };

inline std::string_view to_string(RunState s) {
  switch (s) {
    case RunState::running: return "running";
    case RunState::exited: return "exited";
    case RunState::failed: return "failed";
  }
  return "?";
}

enum class Desired { running, stopped };

// A simulated process. step() is invoked once per supervisor tick while the
// process is up.
class Runnable {
 public:
  virtual ~Runnable() = default;
  // Called on every (re)start; false means the start itself failed.
  virtual bool start(Tick) { return true; }
  virtual RunState step(Tick now) = 0;
  // Called whenever the process leaves the running state.
  virtual void halted() {}
};

// Adapts a plain callable.
template <typename Fn>
class FnRunnable : public Runnable {
 public:
  explicit FnRunnable(Fn fn) : fn_(std::move(fn)) {}
  RunState step(Tick now) override { return fn_(now); }

 private:
  Fn fn_;
};

template <typename Fn>
std::unique_ptr<Runnable> make_runnable(Fn fn) {
  return std::make_unique<FnRunnable<Fn>>(std::move(fn));
}

struct ProcessEntry {
  std::uint32_t partition = 0;
  std::unique_ptr<Runnable> runnable;
  Desired desired = Desired::running;
  RunState actual = RunState::exited;
  std::uint32_t restart_count = 0;
  Tick backoff_until = 0;
};

struct RestartEvent {
  std::string service_id;
  Tick tick = 0;
  std::uint32_t restart_count = 0;
  bool started = false;  // false when start() refused
};

inline constexpr Tick kBackoffCap = 64;

inline Tick backoff_delay(std::uint32_t restart_count) {
  if (restart_count >= 6) return kBackoffCap;
  return std::min<Tick>(Tick{1} << restart_count, kBackoffCap);
}

// Restarts crashed services with exponential backoff, forever.
//
// Each tick first restarts every entry that should run, is down and whose
// backoff has elapsed (restart_count += 1, backoff_until = now +
// min(2^restart_count, 64)), then steps every running entry. A fresh start
// arms backoff_until = now + 1.
class Supervisor {
 public:
  using Table = std::map<std::string, ProcessEntry>;

  void add(const std::string& id, std::uint32_t partition, std::unique_ptr<Runnable> runnable, Tick now,
           Desired desired = Desired::running) {
    ProcessEntry e;
    e.partition = partition;
    e.runnable = std::move(runnable);
    e.desired = desired;
    e.backoff_until = now + backoff_delay(0);
    if (desired == Desired::running) {
      e.actual = e.runnable->start(now) ? RunState::running : RunState::failed;
    }
    table_.insert_or_assign(id, std::move(e));
  }

  bool contains(const std::string& id) const { return table_.count(id) != 0; }

  void remove(const std::string& id) {
    auto it = table_.find(id);
    if (it == table_.end()) return;
    if (it->second.actual == RunState::running) it->second.runnable->halted();
    table_.erase(it);
  }

  void set_desired(const std::string& id, Desired d, Tick now) {
    auto& e = table_.at(id);
    e.desired = d;
    if (d == Desired::stopped && e.actual == RunState::running) {
      e.actual = RunState::exited;
      e.runnable->halted();
    } else if (d == Desired::running && e.actual != RunState::running && now >= e.backoff_until) {
      e.actual = e.runnable->start(now) ? RunState::running : RunState::failed;
      e.backoff_until = now + backoff_delay(e.restart_count);
    }
  }

  // External crash, e.g. an operator kill.
  void kill(const std::string& id) {
    auto& e = table_.at(id);
    if (e.actual == RunState::running) e.runnable->halted();
    e.actual = RunState::failed;
  }

  std::vector<RestartEvent> tick(Tick now) {
    std::vector<RestartEvent> restarts;
    for (auto& [id, e] : table_) {
      if (e.desired != Desired::running || e.actual == RunState::running || now < e.backoff_until) continue;
      ++e.restart_count;
      e.backoff_until = now + backoff_delay(e.restart_count);
      const bool ok = e.runnable->start(now);
      e.actual = ok ? RunState::running : RunState::failed;
      restarts.push_back({id, now, e.restart_count, ok});
    }
    for (auto& [id, e] : table_) {
      if (e.actual != RunState::running) continue;
      auto s = e.runnable->step(now);
      if (s != RunState::running) {
        e.actual = s;
        e.runnable->halted();
      }
    }
    return restarts;
  }

  const Table& table() const noexcept { return table_; }
  const ProcessEntry* find(const std::string& id) const {
    auto it = table_.find(id);
    return it == table_.end() ? nullptr : &it->second;
  }

  std::vector<std::string> services_of(std::uint32_t partition) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : table_)
      if (e.partition == partition) out.push_back(id);
    return out;
  }

 private:
  Table table_;
};

}  // namespace slapforge::node
