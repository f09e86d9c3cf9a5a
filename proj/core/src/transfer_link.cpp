// Copyright 2026 The Gridbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>

#include "gridbox/transfer.hpp"

namespace gridbox::transfer {

void WireCapture::record(ByteView frame) {
  std::lock_guard lock(mu_);
  frames_.emplace_back(frame.begin(), frame.end());
  bytes_ += frame.size();
}

std::vector<Bytes> WireCapture::frames() const {
  std::lock_guard lock(mu_);
  return frames_;
}

std::uint64_t WireCapture::bytes() const {
  std::lock_guard lock(mu_);
  return bytes_;
}

std::uint64_t WireCapture::count() const {
  std::lock_guard lock(mu_);
  return frames_.size();
}

namespace {

class MemoryLink final : public Link {
 public:
  MemoryLink(ScpConfig config, ScpHandlers handlers, std::shared_ptr<WireCapture> capture,
             std::shared_ptr<LinkFaults> faults)
      : config_(std::move(config)),
        handlers_(std::move(handlers)),
        session_(config_, handlers_),
        capture_(std::move(capture)),
        faults_(std::move(faults)) {}

  void send(const Pdu& pdu) override {
    if (closed_) throw TransferError(Errc::AssociationAborted, "link closed");
    Bytes wire = encode_pdu(pdu);
    if (pdu.type == PduType::Data && faults_ && faults_->flip_next_data_frames.load() > 0) {
      faults_->flip_next_data_frames.fetch_sub(1);
      wire.back() ^= 0x01;
    }
    if (capture_) capture_->record(wire);
    for (auto& rsp : session_.on_pdu(decode_pdu(wire))) {
      Bytes out = encode_pdu(rsp);
      if (capture_) capture_->record(out);
      inbox_.push_back(decode_pdu(out));
    }
    if (session_.aborted()) peer_gone_ = true;
  }

  Pdu receive() override {
    if (inbox_.empty()) {
      if (closed_ || peer_gone_) throw TransferError(Errc::AssociationAborted, "peer closed the association");
      throw TransferError(Errc::Timeout, "no response pending");
    }
    Pdu p = std::move(inbox_.front());
    inbox_.pop_front();
    return p;
  }

  void close() override { closed_ = true; }

 private:
  ScpConfig config_;
  ScpHandlers handlers_;
  ScpSession session_;
  std::shared_ptr<WireCapture> capture_;
  std::shared_ptr<LinkFaults> faults_;
  std::deque<Pdu> inbox_;
  bool closed_ = false;
  bool peer_gone_ = false;
};

void write_all(int fd, ByteView data) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransferError(Errc::AssociationAborted, std::string("send: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

// Reads one PDU; returns nullopt on orderly EOF.
std::optional<Pdu> read_pdu(int fd, PduReader& reader, int timeout_ms) {
  std::uint8_t buf[65536];
  for (;;) {
    if (auto pdu = reader.next()) return pdu;
    pollfd pfd{fd, POLLIN, 0};
    int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransferError(Errc::AssociationAborted, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) throw TransferError(Errc::Timeout, "no response within timeout");
    ssize_t n = ::recv(fd, buf, sizeof buf, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransferError(Errc::AssociationAborted, std::string("recv: ") + std::strerror(errno));
    }
    if (n == 0) return std::nullopt;
    reader.feed(ByteView(buf, static_cast<std::size_t>(n)));
  }
}

class TcpLink final : public Link {
 public:
  TcpLink(int fd, int timeout_ms) : fd_(fd), timeout_ms_(timeout_ms) {}
  ~TcpLink() override { close(); }

  void send(const Pdu& pdu) override {
    if (fd_ < 0) throw TransferError(Errc::AssociationAborted, "link closed");
    write_all(fd_, encode_pdu(pdu));
  }

  Pdu receive() override {
    if (fd_ < 0) throw TransferError(Errc::AssociationAborted, "link closed");
    auto pdu = read_pdu(fd_, reader_, timeout_ms_);
    if (!pdu) throw TransferError(Errc::AssociationAborted, "peer closed the connection");
    return std::move(*pdu);
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_;
  int timeout_ms_;
  PduReader reader_;
};

}  // namespace

std::unique_ptr<Link> memory_link(const ScpConfig& config, const ScpHandlers& handlers,
                                  std::shared_ptr<WireCapture> capture, std::shared_ptr<LinkFaults> faults) {
  return std::make_unique<MemoryLink>(config, handlers, std::move(capture), std::move(faults));
}

std::unique_ptr<Link> tcp_connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0 || res == nullptr) {
    throw TransferError(Errc::ConnectFailed, "cannot resolve " + host);
  }
  int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw TransferError(Errc::ConnectFailed, std::strerror(errno));
  }
  int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    throw TransferError(Errc::ConnectFailed, host + ":" + std::to_string(port) + ": " + why);
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<TcpLink>(fd, static_cast<int>(timeout.count()));
}

DimseServer::DimseServer(ScpConfig config, ScpHandlers handlers)
    : config_(std::move(config)), handlers_(std::move(handlers)) {}

DimseServer::~DimseServer() { stop(); }

void DimseServer::start(const std::string& host, std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw TransferError(Errc::ConnectFailed, std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransferError(Errc::ConnectFailed, "bad listen address " + host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransferError(Errc::PortInUse, host + ":" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void DimseServer::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard lock(mu_);
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void DimseServer::serve(int fd) {
  ScpSession session(config_, handlers_);
  PduReader reader;
  try {
    while (running_ && !session.closed()) {
      std::optional<Pdu> pdu;
      try {
        pdu = read_pdu(fd, reader, 500);
      } catch (const TransferError& e) {
        if (e.code() == Errc::Timeout) continue;
        break;
      }
      if (!pdu) break;
      for (const auto& rsp : session.on_pdu(*pdu)) write_all(fd, encode_pdu(rsp));
    }
  } catch (const std::exception&) {
  }
  std::lock_guard lock(mu_);
  auto it = std::find(client_fds_.begin(), client_fds_.end(), fd);
  if (it != client_fds_.end()) {
    client_fds_.erase(it);
    ::close(fd);
  }
}

void DimseServer::stop() {
  if (!running_.exchange(false)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  std::vector<int> fds;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
    fds.swap(client_fds_);
  }
  for (int fd : fds) ::shutdown(fd, SHUT_RDWR);
  for (auto& t : workers) t.join();
  for (int fd : fds) ::close(fd);
  ::close(listen_fd_);
  listen_fd_ = -1;
}

}  // namespace gridbox::transfer
