#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "slapforge/master/link.hpp"
#include "slapforge/master/master.hpp"

namespace slapforge::master {

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(o.release()) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// Reads up to and excluding '\n'; false on EOF before a full line.
inline bool read_line(int fd, std::string& buffer, std::string& line) {
  for (;;) {
    auto nl = buffer.find('\n');
    if (nl != std::string::npos) {
      line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      return true;
    }
    char chunk[4096];
    auto n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace detail

// Line-delimited TCP front end for a Master: one encoded message per line
// in, one encoded reply per line out.
class LineServer {
 public:
  LineServer(Master& master, std::uint16_t port, Trace* trace = nullptr) : master_(master), trace_(trace) {
    listener_ = detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_) throw Error(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listener_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listener_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error(std::string("bind: ") + std::strerror(errno));
    if (::listen(listener_.get(), 16) != 0) throw Error(std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listener_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  LineServer(const LineServer&) = delete;
  LineServer& operator=(const LineServer&) = delete;
  ~LineServer() { stop(); }

  std::uint16_t port() const noexcept { return port_; }

  void start() {
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  // Blocks until stop() is called from elsewhere.
  void serve() { accept_loop(); }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(listener_.get(), SHUT_RDWR);
    listener_.reset();
    if (acceptor_.joinable()) acceptor_.join();
    std::lock_guard lock(mu_);
    for (auto& c : clients_) ::shutdown(c.fd, SHUT_RDWR);
    for (auto& c : clients_)
      if (c.thread.joinable()) c.thread.join();
    for (auto& c : clients_) ::close(c.fd);
    clients_.clear();
  }

  SlapMessage handle_line(const std::string& line) {
    SlapMessage reply;
    try {
      auto req = decode_message(line);
      reply = master_.handle(req);
    } catch (const MalformedMessage& e) {
      reply = SlapMessage(MessageKind::Ack, {{"origin", "master"}, {"ok", "0"}, {"error", "malformed"}, {"message", e.what()}});
    }
    if (trace_) {
      trace_->record_line(line);
      trace_->record(reply);
    }
    return reply;
  }

 private:
  struct Client {
    int fd;
    std::thread thread;
  };

  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listener_.get(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        return;
      }
      clients_.push_back({fd, {}});
      clients_.back().thread = std::thread([this, fd] { serve_client(fd); });
    }
  }

  void serve_client(int fd) {
    std::string buffer, line;
    while (detail::read_line(fd, buffer, line)) {
      auto out = encode_message(handle_line(line));
      out += '\n';
      if (!detail::send_all(fd, out)) break;
    }
  }

  Master& master_;
  Trace* trace_;
  detail::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Client> clients_;
};

class SocketLink : public MasterLink {
 public:
  SocketLink(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || !res)
      throw Error("cannot resolve " + host);
    fd_ = detail::Fd(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    const bool ok = fd_ && ::connect(fd_.get(), res->ai_addr, res->ai_addrlen) == 0;
    ::freeaddrinfo(res);
    if (!ok) throw Error("cannot connect to " + host + ":" + std::to_string(port));
  }

  SlapMessage call(const SlapMessage& request) override {
    std::lock_guard lock(mu_);
    auto line = encode_message(request);
    line += '\n';
    if (!detail::send_all(fd_.get(), line)) throw Error("master connection lost");
    std::string reply;
    if (!detail::read_line(fd_.get(), buffer_, reply)) throw Error("master connection lost");
    return decode_message(reply);
  }

 private:
  std::mutex mu_;
  detail::Fd fd_;
  std::string buffer_;
};

}  // namespace slapforge::master
