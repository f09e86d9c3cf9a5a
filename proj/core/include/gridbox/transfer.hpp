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

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/bytes.hpp"
#include "gridbox/crypto.hpp"
#include "gridbox/types.hpp"

// MG-DIMSE: association-based dataset exchange with AES-256-GCM protected DATA PDUs.
namespace gridbox::transfer {

inline constexpr std::uint16_t kDefaultPort = 11112;
inline constexpr std::size_t kMaxPduBody = 16u << 20;
inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kAeLength = 16;

enum class Errc {
  ProtocolError,
  Rejected,
  Timeout,
  AssociationAborted,
  RemoteFailure,
  NotFoundRemote,
  ChecksumMismatch,
  ConnectFailed,
  PortInUse,
};

class TransferError : public std::runtime_error {
 public:
  TransferError(Errc code, const std::string& detail, std::uint8_t reason = 0);
  Errc code() const { return code_; }
  std::uint8_t reason() const { return reason_; }  // ASSOC-RJ reason when code == Rejected

 private:
  Errc code_;
  std::uint8_t reason_;
};

enum class PduType : std::uint8_t {
  AssocRq = 0x01,
  AssocAc = 0x02,
  AssocRj = 0x03,
  Data = 0x04,
  ReleaseRq = 0x05,
  ReleaseRsp = 0x06,
};

struct Pdu {
  PduType type = PduType::Data;
  Bytes body;
  bool operator==(const Pdu&) const = default;
};

Bytes encode_pdu(const Pdu& pdu);
// Exactly one PDU; throws TransferError(ProtocolError).
Pdu decode_pdu(ByteView bytes);

// Incremental framing over a byte stream.
class PduReader {
 public:
  void feed(ByteView data);
  std::optional<Pdu> next();  // throws TransferError(ProtocolError) on a bad header

 private:
  Bytes buf_;
};

struct AssocRq {
  std::uint16_t version = kProtocolVersion;
  std::string calling_ae;
  std::string called_ae;
  std::uint8_t key_id = 0;
  bool operator==(const AssocRq&) const = default;
};

struct AssocAc {
  std::uint16_t version = kProtocolVersion;
  std::string responder_ae;
  bool operator==(const AssocAc&) const = default;
};

enum class RejectReason : std::uint8_t { BadVersion = 1, UnknownAe = 2, Unauthorized = 3 };

Bytes encode(const AssocRq& rq);
AssocRq decode_assoc_rq(ByteView body);
Bytes encode(const AssocAc& ac);
AssocAc decode_assoc_ac(ByteView body);

enum class Command : std::uint8_t { StoreRq = 1, StoreRsp = 2, FindRq = 3, FindRsp = 4, GetRq = 5, GetRsp = 6 };
enum class Status : std::uint8_t { Success = 0, Pending = 1, Failure = 2, Refused = 3 };

struct DimseMessage {
  std::uint16_t msg_id = 0;
  Command command = Command::StoreRq;
  Status status = Status::Success;
  Bytes payload;
  bool operator==(const DimseMessage&) const = default;
};

Bytes encode(const DimseMessage& m);
DimseMessage decode_dimse(ByteView bytes);

// One direction pair of an association. Frames are nonce(12) | ciphertext | tag(16),
// nonce = salt(4) | counter(8 LE), AAD = counter(8 LE).
class SecureChannel {
 public:
  explicit SecureChannel(const crypto::Key256& key);
  Bytes seal(ByteView plaintext);
  // nullopt on short frame, tag failure or a counter that does not increase.
  std::optional<Bytes> open(ByteView frame);

 private:
  crypto::Key256 key_;
  std::array<std::uint8_t, 4> salt_{};
  std::uint64_t sent_ = 0;
  std::uint64_t last_received_ = 0;
};

// ---- service provider ----

struct StoreOutcome {
  bool ok = false;
  std::string reason;
};

struct ScpHandlers {
  std::function<StoreOutcome(ByteView mgd)> store;
  // Row documents; throwing produces a failure response carrying the message.
  std::function<std::vector<nlohmann::json>(const nlohmann::json& ast)> find;
  std::function<std::optional<Bytes>(const Guid& guid)> get;
};

struct ScpConfig {
  std::string ae_title;
  std::map<std::uint8_t, crypto::Key256> keys;
};

// Transport-independent server side of one association.
class ScpSession {
 public:
  ScpSession(const ScpConfig& config, const ScpHandlers& handlers);
  std::vector<Pdu> on_pdu(const Pdu& pdu);
  bool open() const { return state_ == State::Open; }
  bool closed() const { return state_ == State::Closed; }
  bool aborted() const { return aborted_; }

 private:
  enum class State { Idle, Open, Closed };
  std::vector<Pdu> abort();
  std::vector<Pdu> handle(const DimseMessage& m);
  Pdu data(const DimseMessage& m);

  const ScpConfig& config_;
  const ScpHandlers& handlers_;
  State state_ = State::Idle;
  bool aborted_ = false;
  std::unique_ptr<SecureChannel> channel_;
};

// ---- links ----

class Link {
 public:
  virtual ~Link() = default;
  virtual void send(const Pdu& pdu) = 0;
  virtual Pdu receive() = 0;  // throws Timeout or AssociationAborted
  virtual void close() = 0;
};

// Every encoded PDU seen on a link, both directions.
class WireCapture {
 public:
  void record(ByteView frame);
  std::vector<Bytes> frames() const;
  std::uint64_t bytes() const;
  std::uint64_t count() const;

 private:
  mutable std::mutex mu_;
  std::vector<Bytes> frames_;
  std::uint64_t bytes_ = 0;
};

// Fault switches shared between a test harness and in-memory links.
struct LinkFaults {
  std::atomic<int> flip_next_data_frames{0};
};

// Delivers PDUs straight into a session owned by the link.
std::unique_ptr<Link> memory_link(const ScpConfig& config, const ScpHandlers& handlers,
                                  std::shared_ptr<WireCapture> capture = nullptr,
                                  std::shared_ptr<LinkFaults> faults = nullptr);

std::unique_ptr<Link> tcp_connect(const std::string& host, std::uint16_t port,
                                  std::chrono::milliseconds timeout);

// Thread-per-connection TCP server.
class DimseServer {
 public:
  DimseServer(ScpConfig config, ScpHandlers handlers);
  ~DimseServer();
  DimseServer(const DimseServer&) = delete;
  DimseServer& operator=(const DimseServer&) = delete;

  // port 0 picks a free port. Throws TransferError(PortInUse).
  void start(const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  ScpConfig config_;
  ScpHandlers handlers_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

// ---- service user ----

struct AssocParams {
  std::string calling_ae;
  std::string called_ae;
  std::uint8_t key_id = 0;
  crypto::Key256 key{};
  std::uint16_t version = kProtocolVersion;
};

class Association {
 public:
  // Throws TransferError(Rejected, reason) on ASSOC-RJ.
  static Association open(std::unique_ptr<Link> link, const AssocParams& params);

  Association(Association&&) noexcept;
  Association& operator=(Association&&) noexcept;
  ~Association();

  void c_store(ByteView mgd);  // throws RemoteFailure(reason)
  std::vector<nlohmann::json> c_find(const nlohmann::json& ast);
  Bytes c_get(const Guid& guid);  // throws NotFoundRemote
  void release();  // idempotent
  bool is_open() const { return link_ != nullptr; }

  // Request without waiting; responses are read with read_response().
  std::uint16_t send_request(Command command, ByteView payload);
  DimseMessage read_response();

 private:
  Association(std::unique_ptr<Link> link, const crypto::Key256& key);
  [[noreturn]] void abort(const std::string& why);
  DimseMessage expect(std::uint16_t msg_id, Command command);

  std::unique_ptr<Link> link_;
  std::unique_ptr<SecureChannel> channel_;
  std::uint16_t next_id_ = 1;
};

}  // namespace gridbox::transfer
