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

#include "gridbox/change_log.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gridbox::sync {

namespace {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::BadDigest: return "BadDigest";
    case Errc::BadRecord: return "BadRecord";
    case Errc::BufferOverflow: return "BufferOverflow";
    case Errc::CorruptLog: return "CorruptLog";
    case Errc::StorageFailure: return "StorageFailure";
  }
  return "SyncError";
}

constexpr std::uint32_t kMaxEntry = 64u << 20;

}  // namespace

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::AddFile: return "AddFile";
    case Kind::AddReplica: return "AddReplica";
    case Kind::PutMeta: return "PutMeta";
    case Kind::DefineAttr: return "DefineAttr";
    case Kind::JobEvent: return "JobEvent";
  }
  return "?";
}

std::optional<Kind> parse_kind(std::string_view s) {
  for (Kind k : {Kind::AddFile, Kind::AddReplica, Kind::PutMeta, Kind::DefineAttr, Kind::JobEvent}) {
    if (kind_name(k) == s) return k;
  }
  return std::nullopt;
}

std::string ChangeRecord::body() const {
  nlohmann::json j{{"origin", origin.str()}, {"seq", seq}, {"kind", kind_name(kind)}, {"payload", payload}};
  return j.dump();
}

ChangeRecord make_record(const SiteId& origin, std::uint64_t seq, Kind kind, nlohmann::json payload) {
  ChangeRecord r{origin, seq, kind, std::move(payload), {}};
  r.seal();
  return r;
}

nlohmann::json to_json(const ChangeRecord& r) {
  return {{"origin", r.origin.str()},
          {"seq", r.seq},
          {"kind", kind_name(r.kind)},
          {"payload", r.payload},
          {"digest", to_hex(r.digest)}};
}

ChangeRecord record_from_json(const nlohmann::json& j) {
  try {
    ChangeRecord r;
    r.origin = SiteId(j.at("origin").get<std::string>());
    r.seq = j.at("seq").get<std::uint64_t>();
    if (r.seq == 0) throw SyncError(Errc::BadRecord, "seq starts at 1");
    auto k = parse_kind(j.at("kind").get<std::string>());
    if (!k) throw SyncError(Errc::BadRecord, "unknown kind");
    r.kind = *k;
    r.payload = j.at("payload");
    if (auto d = j.find("digest"); d != j.end()) {
      auto raw = from_hex(d->get<std::string>());
      if (raw.size() != r.digest.size()) throw SyncError(Errc::BadRecord, "digest must be 32 bytes");
      std::copy(raw.begin(), raw.end(), r.digest.begin());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SyncError(Errc::BadRecord, e.what());
  } catch (const std::invalid_argument& e) {
    throw SyncError(Errc::BadRecord, e.what());
  }
}

nlohmann::json vector_to_json(const SeqVector& v) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [site, seq] : v) j[site.str()] = seq;
  return j;
}

SeqVector vector_from_json(const nlohmann::json& j) {
  SeqVector v;
  if (j.is_null()) return v;
  if (!j.is_object()) throw SyncError(Errc::BadRecord, "vector must be an object");
  try {
    for (const auto& [site, seq] : j.items()) {
      if (seq.get<std::uint64_t>() > 0) v[SiteId(site)] = seq.get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SyncError(Errc::BadRecord, e.what());
  } catch (const InvalidName& e) {
    throw SyncError(Errc::BadRecord, e.what());
  }
  return v;
}

SyncError::SyncError(Errc code, const std::string& detail, std::uint64_t offset)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code), offset_(offset) {}

Bytes encode_log_entry(const ChangeRecord& r) {
  const std::string body = r.body();
  Bytes out;
  out.reserve(4 + body.size() + 32);
  put_u32le(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  const auto d = crypto::sha256(as_bytes(body));
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

ChangeLog::Loaded ChangeLog::load(const std::filesystem::path& path, bool recover) {
  Loaded out;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) return out;
    throw SyncError(Errc::StorageFailure, "cannot read " + path.string());
  }
  const Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto corrupt = [&](const std::string& why) {
    if (!recover) {
      throw SyncError(Errc::CorruptLog,
                      why + " at offset " + std::to_string(pos) +
                          "; restart with log recovery to truncate to the last valid record",
                      pos);
    }
  };
  while (pos < data.size()) {
    if (data.size() - pos < 4) {
      corrupt("truncated length");
      break;
    }
    const std::uint32_t len = get_u32le(data.data() + pos);
    if (len > kMaxEntry || data.size() - pos - 4 < std::uint64_t{len} + 32) {
      corrupt("truncated record");
      break;
    }
    const auto body = ByteView(data).subspan(pos + 4, len);
    crypto::Digest stored;
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(pos + 4 + len), 32, stored.begin());
    if (crypto::sha256(body) != stored) {
      corrupt("digest mismatch");
      break;
    }
    try {
      auto rec = record_from_json(nlohmann::json::parse(body.begin(), body.end()));
      rec.digest = stored;
      out.records.push_back(std::move(rec));
    } catch (const std::exception&) {
      corrupt("undecodable record");
      break;
    }
    pos += 4 + len + 32;
  }
  out.valid_bytes = pos;
  out.dropped_bytes = data.size() - pos;
  if (recover && out.dropped_bytes > 0) {
    std::error_code ec;
    std::filesystem::resize_file(path, pos, ec);
    if (ec) throw SyncError(Errc::StorageFailure, "truncate failed: " + ec.message());
  }
  return out;
}

ChangeLog::ChangeLog(std::filesystem::path path, bool durable) : path_(std::move(path)), durable_(durable) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw SyncError(Errc::StorageFailure, path_.string() + ": " + std::strerror(errno));
}

ChangeLog::~ChangeLog() {
  if (fd_ >= 0) ::close(fd_);
}

void ChangeLog::append(const std::vector<ChangeRecord>& records) {
  if (records.empty()) return;
  Bytes buf;
  for (const auto& r : records) {
    auto e = encode_log_entry(r);
    buf.insert(buf.end(), e.begin(), e.end());
  }
  std::size_t done = 0;
  while (done < buf.size()) {
    ssize_t n = ::write(fd_, buf.data() + done, buf.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SyncError(Errc::StorageFailure, std::string("log write: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (durable_ && ::fsync(fd_) != 0) throw SyncError(Errc::StorageFailure, std::string("fsync: ") + std::strerror(errno));
}

}  // namespace gridbox::sync
