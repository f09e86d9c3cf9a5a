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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridbox/change_log.hpp"
#include "gridbox/federation.hpp"
#include "gridbox/jobs.hpp"
#include "gridbox/node_config.hpp"
#include "gridbox/querylang.hpp"
#include "gridbox/sync.hpp"
#include "gridbox/transfer.hpp"

// The gridbox: persistence layout, ingest pipeline, document API, job agent and
// anti-entropy, independent of how requests arrive.
namespace gridbox::node {

struct ApiRequest {
  std::string method = "GET";
  std::string path;
  std::map<std::string, std::string> params;
  std::map<std::string, std::string> headers;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;

  static ApiResponse json(int status, const nlohmann::json& doc);
  nlohmann::json doc() const;  // parses body
};

struct PeerUnreachable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// How a node reaches its peers.
class PeerNetwork {
 public:
  virtual ~PeerNetwork() = default;
  // Throws PeerUnreachable.
  virtual ApiResponse call(const SiteId& peer, const ApiRequest& req, std::chrono::milliseconds timeout) = 0;
  // Best effort, no reply.
  virtual void post(const SiteId& peer, ApiRequest req) = 0;
  virtual std::unique_ptr<transfer::Link> dimse_connect(const SiteId& peer) = 0;
  virtual bool concurrent() const { return true; }
};

enum class Errc {
  DirNotEmpty,
  NotInitialized,
  DecodeError,
  DuplicateSop,
  NotAnonymized,
  StorageFailure,
  UnknownGuid,
  UnknownLfn,
  FetchFailed,
  ChecksumMismatch,
  BadRequest,
};
std::string_view errc_name(Errc c);

class NodeError : public std::runtime_error {
 public:
  NodeError(Errc code, const std::string& detail);
  Errc code() const { return code_; }

 private:
  Errc code_;
};

struct NodeOptions {
  bool recover_log = false;
  bool durable = true;  // fsync log and store writes
  std::function<std::int64_t()> now_ms;  // defaults to the system clock
  // Called at named points ("after_store_write", "after_job_running"); may throw to
  // simulate a crash.
  std::function<void(std::string_view)> crash_hook;
};

struct IngestResult {
  Lfn lfn;
  Guid guid;
};

// Data directory layout.
struct Layout {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path log() const { return root / "log" / "changes.log"; }
  std::filesystem::path store() const { return root / "store"; }
  std::filesystem::path reid() const { return root / "reid" / "reid.log"; }
  std::filesystem::path snapshots() const { return root / "snapshots"; }
};

class Node {
 public:
  // Creates the layout; DirNotEmpty if data_dir has any entry, BadConfig on invalid config.
  static void init(const NodeConfig& config);

  // Throws NodeError(NotInitialized) or sync::SyncError(CorruptLog).
  Node(NodeConfig config, PeerNetwork* net, NodeOptions options = {});
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const NodeConfig& config() const { return config_; }
  const SiteId& site() const { return config_.site_id; }
  Layout layout() const { return Layout{config_.data_dir}; }
  std::size_t swept_at_start() const { return swept_; }

  // Raw acquisitions from the site's own workstation: anonymized here.
  IngestResult ingest(ByteView raw_mgd, const nlohmann::json& patient_attrs = nlohmann::json::object());
  // C-STORE path: the dataset must already be anonymized.
  transfer::StoreOutcome store_anonymized(ByteView mgd);

  // {ast|text, scope?: "local"}.
  query::Query typed_query(const nlohmann::json& request) const;
  query::LocalResult local_query(const query::Query& typed) const;
  federation::FederatedResult federated_query(const query::Query& typed);
  nlohmann::json query(const nlohmann::json& request);

  std::optional<Bytes> read_local(const Guid& guid) const;
  // Local copy, or fetched from a replica site, checksum-verified and registered locally.
  Bytes fetch(const Guid& guid);
  Bytes preview(const Guid& guid);
  std::optional<catalogue::Resolved> resolve(const Lfn& lfn) const;
  std::optional<catalogue::Resolved> resolve(const Guid& guid) const;
  std::vector<std::string> list(std::string_view path) const;

  // Query-result retrieval: replicate_back fetches every file here, remote_analysis submits
  // the attached job to the data sites instead.
  nlohmann::json retrieve(const std::vector<Lfn>& files, const std::optional<nlohmann::json>& job);

  jobs::Job submit_job(jobs::Algorithm algorithm, const nlohmann::json& params, const std::vector<Lfn>& inputs);
  jobs::Job job_status(const jobs::JobId& id) const;
  std::vector<jobs::Job> jobs() const;
  // Runs at most one job; true when a job was executed.
  bool agent_step();

  nlohmann::json changes_since(const sync::SeqVector& after) const;
  nlohmann::json receive_push(const nlohmann::json& doc);
  void anti_entropy_tick();

  sync::SeqVector seq_vector() const;
  nlohmann::json status() const;
  nlohmann::json canonical_state() const;
  nlohmann::json canonical_with_jobs() const;
  std::size_t file_count() const;
  std::size_t rejected_records() const;

  transfer::ScpConfig scp_config() const;
  transfer::ScpHandlers scp_handlers();

  // The HTTP document API.
  ApiResponse handle(const ApiRequest& req);

 private:
  IngestResult commit_ingest(dataset::Dataset ds, const dataset::ReidPair* reid, const nlohmann::json& attrs);
  void write_store_file(const Guid& guid, ByteView bytes);
  void append_reid(const dataset::ReidPair& pair);
  void push(const std::vector<sync::ChangeRecord>& records);
  std::int64_t now_ms() const;
  void hook(std::string_view point);
  void sweep_orphans();
  transfer::Association associate(const SiteId& peer);
  Bytes fetch_from(const SiteId& peer, const catalogue::Resolved& r);
  void run_job(const jobs::Job& job);
  // Appends a PutMeta item with the next local version; caller holds the write lock.
  void put_meta(std::vector<std::pair<sync::Kind, nlohmann::json>>& out, metastore::Entity e,
                const std::string& id, const std::string& attr, metastore::Value v);

  NodeConfig config_;
  PeerNetwork* net_;
  NodeOptions options_;
  std::chrono::steady_clock::time_point started_;

  mutable std::shared_mutex mu_;
  std::unique_ptr<sync::ReplicatedState> state_;
  std::unique_ptr<sync::ChangeLog> log_;
  std::unique_ptr<sync::SyncEngine> engine_;
  std::mutex reid_mu_;
  std::mutex agent_mu_;
  std::set<jobs::JobId> resume_;
  std::size_t swept_ = 0;
};

// guid = first 16 bytes of SHA-256 over a domain tag and the parts.
Guid derive_guid(std::string_view domain, const std::vector<std::string>& parts);

}  // namespace gridbox::node
