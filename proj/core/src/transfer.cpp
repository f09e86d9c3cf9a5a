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

#include "gridbox/transfer.hpp"

#include <algorithm>
#include <cstring>

namespace gridbox::transfer {

namespace {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::Rejected: return "Rejected";
    case Errc::Timeout: return "Timeout";
    case Errc::AssociationAborted: return "AssociationAborted";
    case Errc::RemoteFailure: return "RemoteFailure";
    case Errc::NotFoundRemote: return "NotFoundRemote";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ConnectFailed: return "ConnectFailed";
    case Errc::PortInUse: return "PortInUse";
  }
  return "TransferError";
}

[[noreturn]] void protocol(const std::string& why) { throw TransferError(Errc::ProtocolError, why); }

void put_ae(Bytes& out, const std::string& ae) {
  if (ae.size() > kAeLength) protocol("AE title longer than 16 bytes");
  out.insert(out.end(), ae.begin(), ae.end());
  out.insert(out.end(), kAeLength - ae.size(), ' ');
}

std::string get_ae(ByteReader& r) {
  auto raw = r.take(kAeLength);
  std::string ae = to_string(raw);
  for (char c : ae) {
    if (c < 0x20 || c > 0x7e) protocol("AE title is not printable ASCII");
  }
  ae.erase(ae.find_last_not_of(' ') + 1);
  return ae;
}

constexpr std::size_t kNonceSize = 12;
constexpr std::size_t kHeader = 6;

Bytes text_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace

TransferError::TransferError(Errc code, const std::string& detail, std::uint8_t reason)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code), reason_(reason) {}

Bytes encode_pdu(const Pdu& pdu) {
  if (pdu.body.size() > kMaxPduBody) protocol("PDU body exceeds 16 MiB");
  Bytes out;
  out.reserve(kHeader + pdu.body.size());
  out.push_back(static_cast<std::uint8_t>(pdu.type));
  out.push_back(0);
  put_u32le(out, static_cast<std::uint32_t>(pdu.body.size()));
  out.insert(out.end(), pdu.body.begin(), pdu.body.end());
  return out;
}

namespace {

std::uint32_t check_header(const std::uint8_t* h) {
  if (h[0] < 0x01 || h[0] > 0x06) protocol("unknown PDU type");
  if (h[1] != 0) protocol("reserved byte must be zero");
  const std::uint32_t len = get_u32le(h + 2);
  if (len > kMaxPduBody) protocol("PDU body exceeds 16 MiB");
  return len;
}

}  // namespace

Pdu decode_pdu(ByteView bytes) {
  if (bytes.size() < kHeader) protocol("truncated PDU header");
  const std::uint32_t len = check_header(bytes.data());
  if (bytes.size() - kHeader != len) protocol("PDU length does not match body");
  return Pdu{static_cast<PduType>(bytes[0]), Bytes(bytes.begin() + kHeader, bytes.end())};
}

void PduReader::feed(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

std::optional<Pdu> PduReader::next() {
  if (buf_.size() < kHeader) return std::nullopt;
  const std::uint32_t len = check_header(buf_.data());
  if (buf_.size() - kHeader < len) return std::nullopt;
  Pdu pdu{static_cast<PduType>(buf_[0]),
          Bytes(buf_.begin() + kHeader, buf_.begin() + static_cast<std::ptrdiff_t>(kHeader + len))};
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(kHeader + len));
  return pdu;
}

Bytes encode(const AssocRq& rq) {
  Bytes out;
  put_u16le(out, rq.version);
  put_ae(out, rq.calling_ae);
  put_ae(out, rq.called_ae);
  out.push_back(rq.key_id);
  return out;
}

AssocRq decode_assoc_rq(ByteView body) {
  try {
    ByteReader r(body);
    AssocRq rq;
    rq.version = r.u16le();
    rq.calling_ae = get_ae(r);
    rq.called_ae = get_ae(r);
    rq.key_id = r.u8();
    if (!r.done()) protocol("trailing bytes in ASSOC-RQ");
    return rq;
  } catch (const TruncatedInput&) {
    protocol("truncated ASSOC-RQ");
  }
}

Bytes encode(const AssocAc& ac) {
  Bytes out;
  put_u16le(out, ac.version);
  put_ae(out, ac.responder_ae);
  return out;
}

AssocAc decode_assoc_ac(ByteView body) {
  try {
    ByteReader r(body);
    AssocAc ac;
    ac.version = r.u16le();
    ac.responder_ae = get_ae(r);
    if (!r.done()) protocol("trailing bytes in ASSOC-AC");
    return ac;
  } catch (const TruncatedInput&) {
    protocol("truncated ASSOC-AC");
  }
}

Bytes encode(const DimseMessage& m) {
  Bytes out;
  out.reserve(4 + m.payload.size());
  put_u16le(out, m.msg_id);
  out.push_back(static_cast<std::uint8_t>(m.command));
  out.push_back(static_cast<std::uint8_t>(m.status));
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

DimseMessage decode_dimse(ByteView bytes) {
  if (bytes.size() < 4) protocol("truncated DIMSE message");
  DimseMessage m;
  m.msg_id = get_u16le(bytes.data());
  if (bytes[2] < 1 || bytes[2] > 6) protocol("unknown DIMSE command");
  if (bytes[3] > 3) protocol("unknown DIMSE status");
  m.command = static_cast<Command>(bytes[2]);
  m.status = static_cast<Status>(bytes[3]);
  m.payload.assign(bytes.begin() + 4, bytes.end());
  return m;
}

SecureChannel::SecureChannel(const crypto::Key256& key) : key_(key) { crypto::random_fill(salt_); }

Bytes SecureChannel::seal(ByteView plaintext) {
  const std::uint64_t counter = ++sent_;
  crypto::Nonce nonce{};
  std::copy(salt_.begin(), salt_.end(), nonce.begin());
  Bytes aad;
  put_u64le(aad, counter);
  std::copy(aad.begin(), aad.end(), nonce.begin() + 4);
  Bytes frame(nonce.begin(), nonce.end());
  auto sealed = crypto::aead_seal(key_, nonce, aad, plaintext);
  frame.insert(frame.end(), sealed.begin(), sealed.end());
  return frame;
}

std::optional<Bytes> SecureChannel::open(ByteView frame) {
  if (frame.size() < kNonceSize + crypto::kGcmTagSize) return std::nullopt;
  crypto::Nonce nonce{};
  std::copy_n(frame.begin(), kNonceSize, nonce.begin());
  const std::uint64_t counter = get_u64le(nonce.data() + 4);
  if (counter <= last_received_) return std::nullopt;
  Bytes aad;
  put_u64le(aad, counter);
  auto plain = crypto::aead_open(key_, nonce, aad, frame.subspan(kNonceSize));
  if (!plain) return std::nullopt;
  last_received_ = counter;
  return plain;
}

// ---- ScpSession ----

ScpSession::ScpSession(const ScpConfig& config, const ScpHandlers& handlers)
    : config_(config), handlers_(handlers) {}

std::vector<Pdu> ScpSession::abort() {
  state_ = State::Closed;
  aborted_ = true;
  channel_.reset();
  return {};
}

Pdu ScpSession::data(const DimseMessage& m) { return Pdu{PduType::Data, channel_->seal(encode(m))}; }

std::vector<Pdu> ScpSession::on_pdu(const Pdu& pdu) {
  if (state_ == State::Closed) return {};
  if (state_ == State::Idle) {
    if (pdu.type != PduType::AssocRq) return abort();
    AssocRq rq;
    try {
      rq = decode_assoc_rq(pdu.body);
    } catch (const TransferError&) {
      return abort();
    }
    auto reject = [&](RejectReason why) {
      state_ = State::Closed;
      return std::vector<Pdu>{Pdu{PduType::AssocRj, Bytes{static_cast<std::uint8_t>(why)}}};
    };
    if (rq.version != kProtocolVersion) return reject(RejectReason::BadVersion);
    if (rq.called_ae != config_.ae_title) return reject(RejectReason::UnknownAe);
    auto key = config_.keys.find(rq.key_id);
    if (key == config_.keys.end()) return reject(RejectReason::Unauthorized);
    channel_ = std::make_unique<SecureChannel>(key->second);
    state_ = State::Open;
    return {Pdu{PduType::AssocAc, encode(AssocAc{kProtocolVersion, config_.ae_title})}};
  }
  switch (pdu.type) {
    case PduType::Data: {
      auto plain = channel_->open(pdu.body);
      if (!plain) return abort();
      DimseMessage m;
      try {
        m = decode_dimse(*plain);
      } catch (const TransferError&) {
        return abort();
      }
      return handle(m);
    }
    case PduType::ReleaseRq:
      state_ = State::Closed;
      channel_.reset();
      return {Pdu{PduType::ReleaseRsp, {}}};
    default:
      return abort();
  }
}

std::vector<Pdu> ScpSession::handle(const DimseMessage& m) {
  auto reply = [&](Command c, Status s, Bytes payload) {
    return data(DimseMessage{m.msg_id, c, s, std::move(payload)});
  };
  std::vector<Pdu> out;
  switch (m.command) {
    case Command::StoreRq: {
      StoreOutcome res;
      try {
        res = handlers_.store ? handlers_.store(m.payload) : StoreOutcome{false, "store not supported"};
      } catch (const std::exception& e) {
        res = StoreOutcome{false, e.what()};
      }
      out.push_back(reply(Command::StoreRsp, res.ok ? Status::Success : Status::Failure,
                          res.ok ? Bytes{} : text_bytes(res.reason)));
      break;
    }
    case Command::FindRq: {
      std::vector<nlohmann::json> rows;
      try {
        if (!handlers_.find) throw std::runtime_error("find not supported");
        auto doc = nlohmann::json::parse(m.payload.begin(), m.payload.end());
        rows = handlers_.find(doc);
      } catch (const std::exception& e) {
        out.push_back(reply(Command::FindRsp, Status::Failure, text_bytes(e.what())));
        break;
      }
      for (const auto& row : rows) out.push_back(reply(Command::FindRsp, Status::Pending, text_bytes(row.dump())));
      out.push_back(reply(Command::FindRsp, Status::Success, {}));
      break;
    }
    case Command::GetRq: {
      if (m.payload.size() != 16) {
        out.push_back(reply(Command::GetRsp, Status::Failure, text_bytes("guid must be 16 bytes")));
        break;
      }
      Guid guid;
      std::copy(m.payload.begin(), m.payload.end(), guid.bytes.begin());
      std::optional<Bytes> file;
      try {
        if (handlers_.get) file = handlers_.get(guid);
      } catch (const std::exception& e) {
        out.push_back(reply(Command::GetRsp, Status::Failure, text_bytes(e.what())));
        break;
      }
      if (file) {
        out.push_back(reply(Command::GetRsp, Status::Success, std::move(*file)));
      } else {
        out.push_back(reply(Command::GetRsp, Status::Failure, text_bytes("not found")));
      }
      break;
    }
    default:
      return abort();
  }
  return out;
}

// ---- Association ----

Association::Association(std::unique_ptr<Link> link, const crypto::Key256& key)
    : link_(std::move(link)), channel_(std::make_unique<SecureChannel>(key)) {}

Association::Association(Association&&) noexcept = default;
Association& Association::operator=(Association&&) noexcept = default;

Association::~Association() {
  try {
    release();
  } catch (...) {
  }
}

Association Association::open(std::unique_ptr<Link> link, const AssocParams& p) {
  link->send(Pdu{PduType::AssocRq, encode(AssocRq{p.version, p.calling_ae, p.called_ae, p.key_id})});
  Pdu rsp = link->receive();
  if (rsp.type == PduType::AssocRj) {
    link->close();
    const std::uint8_t reason = rsp.body.size() == 1 ? rsp.body[0] : 0;
    throw TransferError(Errc::Rejected, "association rejected, reason " + std::to_string(reason), reason);
  }
  if (rsp.type != PduType::AssocAc) {
    link->close();
    protocol("expected ASSOC-AC");
  }
  (void)decode_assoc_ac(rsp.body);
  return Association(std::move(link), p.key);
}

void Association::abort(const std::string& why) {
  if (link_) link_->close();
  link_.reset();
  throw TransferError(Errc::AssociationAborted, why);
}

std::uint16_t Association::send_request(Command command, ByteView payload) {
  if (!link_) throw TransferError(Errc::AssociationAborted, "association is not open");
  const std::uint16_t id = next_id_++;
  DimseMessage m{id, command, Status::Success, Bytes(payload.begin(), payload.end())};
  try {
    link_->send(Pdu{PduType::Data, channel_->seal(encode(m))});
  } catch (const TransferError& e) {
    abort(e.what());
  }
  return id;
}

DimseMessage Association::read_response() {
  if (!link_) throw TransferError(Errc::AssociationAborted, "association is not open");
  Pdu pdu;
  try {
    pdu = link_->receive();
  } catch (const TransferError& e) {
    abort(e.what());
  }
  if (pdu.type != PduType::Data) abort("unexpected PDU from provider");
  auto plain = channel_->open(pdu.body);
  if (!plain) abort("frame failed authentication");
  try {
    return decode_dimse(*plain);
  } catch (const TransferError& e) {
    abort(e.what());
  }
}

DimseMessage Association::expect(std::uint16_t msg_id, Command command) {
  DimseMessage m = read_response();
  if (m.msg_id != msg_id || m.command != command) abort("response does not match request");
  return m;
}

void Association::c_store(ByteView mgd) {
  const auto id = send_request(Command::StoreRq, mgd);
  auto rsp = expect(id, Command::StoreRsp);
  if (rsp.status != Status::Success) throw TransferError(Errc::RemoteFailure, to_string(rsp.payload));
}

std::vector<nlohmann::json> Association::c_find(const nlohmann::json& ast) {
  const std::string doc = ast.dump();
  const auto id = send_request(Command::FindRq, as_bytes(doc));
  std::vector<nlohmann::json> rows;
  for (;;) {
    auto rsp = expect(id, Command::FindRsp);
    if (rsp.status == Status::Pending) {
      try {
        rows.push_back(nlohmann::json::parse(rsp.payload.begin(), rsp.payload.end()));
      } catch (const nlohmann::json::exception&) {
        abort("undecodable row document");
      }
      continue;
    }
    if (rsp.status == Status::Success) return rows;
    throw TransferError(Errc::RemoteFailure, to_string(rsp.payload));
  }
}

Bytes Association::c_get(const Guid& guid) {
  const auto id = send_request(Command::GetRq, guid.bytes);
  auto rsp = expect(id, Command::GetRsp);
  if (rsp.status != Status::Success) throw TransferError(Errc::NotFoundRemote, to_string(rsp.payload));
  return std::move(rsp.payload);
}

void Association::release() {
  if (!link_) return;
  auto link = std::move(link_);
  try {
    link->send(Pdu{PduType::ReleaseRq, {}});
    // Drain responses to requests still in flight.
    for (int i = 0; i < 1 << 20; ++i) {
      if (link->receive().type == PduType::ReleaseRsp) break;
    }
  } catch (const TransferError&) {
  }
  link->close();
}

}  // namespace gridbox::transfer
