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

#include "gridbox/node.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gridbox/analysis.hpp"
#include "gridbox/dataset.hpp"
#include "gridbox/preview.hpp"

namespace gridbox::node {

namespace fs = std::filesystem;
using metastore::Entity;
using sync::Kind;

std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::DirNotEmpty: return "DirNotEmpty";
    case Errc::NotInitialized: return "NotInitialized";
    case Errc::DecodeError: return "DecodeError";
    case Errc::DuplicateSop: return "DuplicateSop";
    case Errc::NotAnonymized: return "NotAnonymized";
    case Errc::StorageFailure: return "StorageFailure";
    case Errc::UnknownGuid: return "UnknownGuid";
    case Errc::UnknownLfn: return "UnknownLfn";
    case Errc::FetchFailed: return "FetchFailed";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::BadRequest: return "BadRequest";
  }
  return "NodeError";
}

NodeError::NodeError(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

Guid derive_guid(std::string_view domain, const std::vector<std::string>& parts) {
  std::string text(domain);
  for (const auto& p : parts) {
    text.push_back('\0');
    text += p;
  }
  const auto d = crypto::sha256(as_bytes(text));
  Guid g;
  std::copy_n(d.begin(), g.bytes.size(), g.bytes.begin());
  return g;
}

namespace {

void write_file_atomic(const fs::path& target, ByteView bytes, bool durable) {
  fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw NodeError(Errc::StorageFailure, tmp.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw NodeError(Errc::StorageFailure, std::string("write: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  if (durable && ::fsync(fd) != 0) {
    ::close(fd);
    throw NodeError(Errc::StorageFailure, std::string("fsync: ") + std::strerror(errno));
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw NodeError(Errc::StorageFailure, "rename: " + ec.message());
  if (durable) {
    int dfd = ::open(target.parent_path().c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (dfd >= 0) {
      ::fsync(dfd);
      ::close(dfd);
    }
  }
}

std::optional<Bytes> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::optional<std::string> iso_date(const std::optional<std::string>& da) {
  if (!da || da->size() != 8) return std::nullopt;
  std::string iso = da->substr(0, 4) + "-" + da->substr(4, 2) + "-" + da->substr(6, 2);
  if (!metastore::is_iso_date(iso)) return std::nullopt;
  return iso;
}

std::optional<std::int64_t> age_years(const std::optional<std::string>& as) {
  if (!as || as->size() != 4 || (*as)[3] != 'Y') return std::nullopt;
  if (!std::all_of(as->begin(), as->begin() + 3, ::isdigit)) return std::nullopt;
  return std::stoll(as->substr(0, 3));
}

bool segment_ok(const std::string& s) { return Lfn::valid("/" + s); }

}  // namespace

void Node::init(const NodeConfig& config) {
  validate(config);
  const Layout l{config.data_dir};
  std::error_code ec;
  if (fs::exists(l.root, ec) && !fs::is_empty(l.root, ec)) {
    throw NodeError(Errc::DirNotEmpty, l.root.string());
  }
  fs::create_directories(l.root / "log");
  fs::create_directories(l.store());
  fs::create_directories(l.reid().parent_path());
  fs::permissions(l.reid().parent_path(), fs::perms::owner_all, fs::perm_options::replace);
  fs::create_directories(l.snapshots());
  {
    int fd = ::open(l.reid().c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0600);
    if (fd < 0) throw NodeError(Errc::StorageFailure, l.reid().string());
    ::close(fd);
  }
  { std::ofstream touch(l.log(), std::ios::binary | std::ios::app); }
  save_config(config, l.config());
}

Node::Node(NodeConfig config, PeerNetwork* net, NodeOptions options)
    : config_(std::move(config)), net_(net), options_(std::move(options)), started_(std::chrono::steady_clock::now()) {
  validate(config_);
  const Layout l = layout();
  if (!fs::exists(l.log())) throw NodeError(Errc::NotInitialized, l.root.string());
  auto loaded = sync::ChangeLog::load(l.log(), options_.recover_log);
  state_ = std::make_unique<sync::ReplicatedState>();
  log_ = std::make_unique<sync::ChangeLog>(l.log(), options_.durable);
  engine_ = std::make_unique<sync::SyncEngine>(config_.site_id, *state_, log_.get());
  engine_->replay(loaded.records);
  sweep_orphans();
  for (const auto& job : state_->jobs.unfinished_at(site())) resume_.insert(job.id);
}

Node::~Node() = default;

std::int64_t Node::now_ms() const {
  if (options_.now_ms) return options_.now_ms();
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void Node::hook(std::string_view point) {
  if (options_.crash_hook) options_.crash_hook(point);
}

void Node::sweep_orphans() {
  std::set<fs::path> expected;
  for (const auto& e : state_->catalogue.entries()) {
    for (const auto& r : state_->catalogue.replicas_of(e.guid)) {
      if (r.site == site()) expected.insert(fs::path(config_.data_dir) / r.pfn);
    }
  }
  const fs::path store = layout().store();
  if (!fs::exists(store)) return;
  std::vector<fs::path> doomed;
  for (const auto& entry : fs::recursive_directory_iterator(store)) {
    if (entry.is_regular_file() && !expected.contains(entry.path())) doomed.push_back(entry.path());
  }
  for (const auto& p : doomed) {
    std::error_code ec;
    if (fs::remove(p, ec)) ++swept_;
  }
}

void Node::write_store_file(const Guid& guid, ByteView bytes) {
  write_file_atomic(fs::path(config_.data_dir) / catalogue::pfn_for(guid), bytes, options_.durable);
}

void Node::append_reid(const dataset::ReidPair& pair) {
  std::lock_guard lock(reid_mu_);
  const std::string line = pair.pseudonym + "\t" + pair.original_id + "\n";
  int fd = ::open(layout().reid().c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0600);
  if (fd < 0) throw NodeError(Errc::StorageFailure, std::string("reid.log: ") + std::strerror(errno));
  const bool ok = ::write(fd, line.data(), line.size()) == static_cast<ssize_t>(line.size()) &&
                  (!options_.durable || ::fsync(fd) == 0);
  ::close(fd);
  if (!ok) throw NodeError(Errc::StorageFailure, "reid.log write failed");
}

void Node::put_meta(std::vector<std::pair<Kind, nlohmann::json>>& out, Entity e, const std::string& id,
                    const std::string& attr, metastore::Value v) {
  metastore::MetaRecord r{e, id, attr, std::move(v), state_->meta.next_version(e, id, attr), site()};
  out.emplace_back(Kind::PutMeta, sync::put_meta_payload(r));
}

void Node::push(const std::vector<sync::ChangeRecord>& records) {
  if (!net_ || records.empty()) return;
  auto arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(sync::to_json(r));
  const std::string body = nlohmann::json{{"records", std::move(arr)}}.dump();
  for (const auto& peer : config_.peer_ids()) {
    try {
      net_->post(peer, ApiRequest{"POST", "/api/sync/push", {}, {}, body});
    } catch (const std::exception&) {
    }
  }
}

// ---- ingest ----

IngestResult Node::ingest(ByteView raw_mgd, const nlohmann::json& patient_attrs) {
  dataset::Dataset ds;
  try {
    ds = dataset::decode(raw_mgd);
  } catch (const dataset::DatasetError& e) {
    throw NodeError(Errc::DecodeError, e.what());
  }
  dataset::Anonymized anon;
  try {
    anon = dataset::anonymize(ds, config_.federation_key);
  } catch (const dataset::DatasetError& e) {
    throw NodeError(Errc::DecodeError, e.what());
  }
  return commit_ingest(std::move(anon.dataset), &anon.reid, patient_attrs);
}

transfer::StoreOutcome Node::store_anonymized(ByteView mgd) {
  dataset::Dataset ds;
  try {
    ds = dataset::decode(mgd);
  } catch (const dataset::DatasetError& e) {
    return {false, std::string("decode error: ") + e.what()};
  }
  if (auto problem = dataset::anonymization_problem(ds)) return {false, *problem};
  try {
    commit_ingest(std::move(ds), nullptr, nlohmann::json::object());
  } catch (const NodeError& e) {
    if (e.code() == Errc::DuplicateSop) return {false, "duplicate"};
    return {false, e.what()};
  }
  return {true, {}};
}

IngestResult Node::commit_ingest(dataset::Dataset ds, const dataset::ReidPair* reid, const nlohmann::json& attrs) {
  using dataset::tags::kPatientId;
  const auto sop = ds.get_string(dataset::tags::kSopInstanceUid);
  const auto study = ds.get_string(dataset::tags::kStudyInstanceUid);
  const auto pseudonym = ds.get_string(kPatientId);
  if (!sop || !study || !pseudonym) throw NodeError(Errc::DecodeError, "SOPInstanceUID, StudyInstanceUID and PatientID are required");
  if (!segment_ok(*sop + ".mgd") || !segment_ok(*study) || !segment_ok(*pseudonym)) {
    throw NodeError(Errc::DecodeError, "identifiers do not form a valid logical name");
  }
  analysis::Image image;
  try {
    image = analysis::image_from_dataset(ds);
  } catch (const std::exception& e) {
    throw NodeError(Errc::DecodeError, e.what());
  }
  const analysis::QcReport qc = analysis::qc_report(image);
  ds.set_ds(dataset::tags::kMeanBrightness, qc.mean_brightness);
  ds.set_ds(dataset::tags::kRmsContrast, qc.rms_contrast);
  ds.set_ds(dataset::tags::kBreastDensity, qc.breast_density);
  ds.set_ul(dataset::tags::kMicrocalcCount, static_cast<std::uint32_t>(qc.microcalc_count));
  const Bytes file = dataset::encode(ds);

  const Lfn lfn("/acq/" + site().str() + "/" + *pseudonym + "/" + *study + "/" + *sop + ".mgd");
  const Guid guid = derive_guid("ingest", {site().str(), lfn.str()});

  std::vector<sync::ChangeRecord> appended;
  {
    std::unique_lock lock(mu_);
    if (state_->meta.current_record(Entity::Image, *sop, "lfn") || state_->catalogue.find(lfn) ||
        state_->catalogue.find(guid)) {
      throw NodeError(Errc::DuplicateSop, *sop);
    }
    std::vector<std::pair<Kind, nlohmann::json>> items;
    std::vector<std::pair<std::string, metastore::Value>> patient;
    if (auto sex = ds.get_string(dataset::tags::kPatientSex)) patient.emplace_back("sex", *sex);
    if (auto age = age_years(ds.get_string(dataset::tags::kPatientAge))) patient.emplace_back("age", *age);
    if (attrs.is_object()) {
      for (const auto& [name, raw] : attrs.items()) {
        const auto* d = state_->meta.descriptor(Entity::Patient, name);
        if (!d) throw NodeError(Errc::BadRequest, "unknown patient attribute " + name);
        auto v = metastore::coerce(d->vtype, raw);
        if (!v) throw NodeError(Errc::BadRequest, "patient attribute " + name + " has the wrong type");
        if (reid && raw.is_string() && raw.get<std::string>().find(reid->original_id) != std::string::npos) {
          throw NodeError(Errc::BadRequest, "patient attributes must not carry the patient identifier");
        }
        std::erase_if(patient, [&](const auto& p) { return p.first == name; });
        patient.emplace_back(name, *v);
      }
    } else if (!attrs.is_null()) {
      throw NodeError(Errc::BadRequest, "patient attributes must be an object");
    }

    catalogue::FileEntry entry{lfn, guid, file.size(), dataset::checksum(file), site(), engine_->next_seq()};
    items.emplace_back(Kind::AddFile, sync::add_file_payload(entry, catalogue::pfn_for(guid)));
    put_meta(items, Entity::Image, *sop, "lfn", lfn.str());
    put_meta(items, Entity::Image, *sop, "study_id", *study);
    put_meta(items, Entity::Image, *sop, "mean_brightness", qc.mean_brightness);
    put_meta(items, Entity::Image, *sop, "rms_contrast", qc.rms_contrast);
    put_meta(items, Entity::Image, *sop, "breast_density", qc.breast_density);
    put_meta(items, Entity::Image, *sop, "microcalc_count", qc.microcalc_count);
    put_meta(items, Entity::Study, *study, "patient_id", *pseudonym);
    if (auto date = iso_date(ds.get_string(dataset::tags::kStudyDate))) put_meta(items, Entity::Study, *study, "date", *date);
    for (auto& [name, v] : patient) put_meta(items, Entity::Patient, *pseudonym, name, v);

    write_store_file(guid, file);
    hook("after_store_write");
    if (reid) append_reid(*reid);
    try {
      appended = engine_->append_batch(std::move(items));
    } catch (const sync::SyncError& e) {
      throw NodeError(Errc::StorageFailure, e.what());
    }
  }
  push(appended);
  return IngestResult{lfn, guid};
}

// ---- queries ----

query::Query Node::typed_query(const nlohmann::json& request) const {
  query::Query q;
  if (request.contains("ast")) {
    q = query::from_json(request.at("ast"));
  } else if (request.contains("text") && request.at("text").is_string()) {
    q = query::parse(request.at("text").get<std::string>());
  } else {
    throw query::QueryError(query::Errc::BadDocument, "request needs 'ast' or 'text'");
  }
  std::shared_lock lock(mu_);
  return query::validate(q, state_->meta);
}

query::LocalResult Node::local_query(const query::Query& typed) const {
  std::shared_lock lock(mu_);
  auto filter = federation::partition_filter(state_->meta, state_->catalogue, site());
  return query::evaluate_local(typed, state_->meta, site(), filter);
}

federation::FederatedResult Node::federated_query(const query::Query& typed) {
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(config_.query_timeout_s * 1000));
  auto p = federation::plan(typed, site(), net_ ? config_.peer_ids() : std::vector<SiteId>{}, timeout);
  auto dispatch = [this, typed, timeout](const SiteId& target, const nlohmann::json& doc) {
    if (target == site()) {
      auto local = local_query(typed);
      return federation::SiteAnswer{std::move(local.rows), local.truncated};
    }
    ApiResponse rsp = net_->call(target, ApiRequest{"POST", "/api/query", {}, {}, doc.dump()}, timeout);
    nlohmann::json body = rsp.doc();
    if (rsp.status != 200) {
      throw std::runtime_error(body.contains("error") ? body["error"].value("message", "error") : "HTTP " + std::to_string(rsp.status));
    }
    federation::SiteAnswer answer;
    for (const auto& row : body.at("rows")) answer.rows.push_back(query::row_from_json(row, typed));
    answer.truncated = body.value("truncated", false);
    return answer;
  };
  return federation::execute(p, dispatch, !net_ || net_->concurrent());
}

nlohmann::json Node::query(const nlohmann::json& request) {
  const query::Query typed = typed_query(request);
  if (request.value("scope", "") == "local") {
    auto local = local_query(typed);
    auto rows = nlohmann::json::array();
    for (const auto& r : local.rows) rows.push_back(query::to_json(r, typed));
    return {{"rows", std::move(rows)}, {"truncated", local.truncated}};
  }
  return federation::to_json(federated_query(typed), typed);
}

// ---- files ----

std::optional<catalogue::Resolved> Node::resolve(const Lfn& lfn) const {
  std::shared_lock lock(mu_);
  return state_->catalogue.find(lfn);
}

std::optional<catalogue::Resolved> Node::resolve(const Guid& guid) const {
  std::shared_lock lock(mu_);
  return state_->catalogue.find(guid);
}

std::vector<std::string> Node::list(std::string_view path) const {
  std::shared_lock lock(mu_);
  return state_->catalogue.list(path);
}

std::optional<Bytes> Node::read_local(const Guid& guid) const {
  std::string pfn;
  {
    std::shared_lock lock(mu_);
    for (const auto& r : state_->catalogue.replicas_of(guid)) {
      if (r.site == site()) pfn = r.pfn;
    }
  }
  if (pfn.empty()) return std::nullopt;
  return read_file(fs::path(config_.data_dir) / pfn);
}

transfer::Association Node::associate(const SiteId& peer) {
  if (!net_) throw NodeError(Errc::FetchFailed, "no peer network");
  const PeerConfig* pc = config_.peer(peer);
  if (!pc) throw NodeError(Errc::FetchFailed, "unknown peer " + peer.str());
  transfer::AssocParams params{config_.ae_title, pc->ae_title.empty() ? peer.str() : pc->ae_title,
                               config_.federation_key_id, config_.federation_key};
  return transfer::Association::open(net_->dimse_connect(peer), params);
}

Bytes Node::fetch_from(const SiteId& peer, const catalogue::Resolved& r) {
  auto assoc = associate(peer);
  Bytes bytes = assoc.c_get(r.entry.guid);
  assoc.release();
  if (dataset::checksum(bytes) != r.entry.checksum) {
    throw NodeError(Errc::ChecksumMismatch, r.entry.lfn.str() + " from " + peer.str());
  }
  return bytes;
}

Bytes Node::fetch(const Guid& guid) {
  auto resolved = resolve(guid);
  if (!resolved) throw NodeError(Errc::UnknownGuid, guid.hex());
  if (auto local = read_local(guid)) return *local;
  std::string last_error = "no remote replica";
  bool checksum_failed = false;
  for (const auto& rep : resolved->replicas) {
    if (rep.site == site()) continue;
    Bytes bytes;
    try {
      bytes = fetch_from(rep.site, *resolved);
    } catch (const NodeError& e) {
      checksum_failed = checksum_failed || e.code() == Errc::ChecksumMismatch;
      last_error = e.what();
      continue;
    } catch (const std::exception& e) {
      last_error = e.what();
      continue;
    }
    std::vector<sync::ChangeRecord> appended;
    {
      std::unique_lock lock(mu_);
      const std::string pfn = catalogue::pfn_for(guid);
      write_store_file(guid, bytes);
      appended.push_back(engine_->append(Kind::AddReplica, sync::add_replica_payload({guid, site(), pfn})));
    }
    push(appended);
    return bytes;
  }
  throw NodeError(checksum_failed ? Errc::ChecksumMismatch : Errc::FetchFailed, last_error);
}

Bytes Node::preview(const Guid& guid) {
  const Bytes bytes = fetch(guid);
  return render_preview(analysis::image_from_dataset(dataset::decode(bytes)));
}

nlohmann::json Node::retrieve(const std::vector<Lfn>& files, const std::optional<nlohmann::json>& job) {
  std::vector<Guid> guids;
  for (const auto& lfn : files) {
    auto r = resolve(lfn);
    if (!r) throw NodeError(Errc::UnknownLfn, lfn.str());
    guids.push_back(r->entry.guid);
  }
  federation::TransferDecision d;
  {
    std::shared_lock lock(mu_);
    d = federation::decide_transfer(guids, job.has_value(), state_->catalogue, config_.replicate_threshold_bytes);
  }
  nlohmann::json out{{"mode", federation::mode_name(d.mode)},
                     {"total_bytes", d.total_bytes},
                     {"threshold_bytes", d.threshold_bytes}};
  if (d.mode == federation::TransferMode::RemoteAnalysis) {
    const std::string name = job->value("algorithm", "");
    auto algorithm = jobs::parse_algorithm(name);
    if (!algorithm) throw jobs::JobError(jobs::Errc::UnknownAlgorithm, name);
    out["job"] = jobs::to_json(submit_job(*algorithm, job->value("params", nlohmann::json::object()), files));
    return out;
  }
  auto fetched = nlohmann::json::array();
  for (const auto& g : guids) {
    fetch(g);
    fetched.push_back(g.hex());
  }
  out["fetched"] = std::move(fetched);
  return out;
}

// ---- jobs ----

jobs::Job Node::submit_job(jobs::Algorithm algorithm, const nlohmann::json& params, const std::vector<Lfn>& inputs) {
  std::vector<sync::ChangeRecord> appended;
  jobs::JobId id;
  {
    std::unique_lock lock(mu_);
    const SiteId target = jobs::choose_target(inputs, state_->catalogue);
    std::vector<std::string> parts{site().str(), std::to_string(engine_->next_seq()),
                                   std::string(jobs::algorithm_name(algorithm)), params.dump()};
    for (const auto& l : inputs) parts.push_back(l.str());
    id = derive_guid("job", parts);
    jobs::JobEvent e;
    e.job = id;
    e.transition = jobs::Status::Queued;
    e.site = site();
    e.at_ms = now_ms();
    e.algorithm = algorithm;
    e.params = params.is_null() ? nlohmann::json::object() : params;
    e.inputs = inputs;
    e.target = target;
    e.submitter = site();
    appended.push_back(engine_->append(Kind::JobEvent, sync::job_event_payload(e)));
  }
  push(appended);
  return job_status(id);
}

jobs::Job Node::job_status(const jobs::JobId& id) const {
  std::shared_lock lock(mu_);
  return state_->jobs.status(id);
}

std::vector<jobs::Job> Node::jobs() const {
  std::shared_lock lock(mu_);
  return state_->jobs.all();
}

bool Node::agent_step() {
  std::lock_guard agent(agent_mu_);
  std::optional<jobs::Job> rerun;
  std::optional<jobs::Job> fresh;
  {
    std::shared_lock lock(mu_);
    const std::int64_t now = now_ms();
    const auto stall = static_cast<std::int64_t>(config_.job_stall_s * 1000);
    for (const auto& job : state_->jobs.unfinished_at(site())) {
      if (resume_.contains(job.id) || now - job.last_event_ms >= stall) {
        rerun = job;
        break;
      }
    }
    if (!rerun) {
      auto queued = state_->jobs.queued_for(site());
      if (!queued.empty()) fresh = queued.front();
    }
  }
  if (rerun) {
    resume_.erase(rerun->id);
    run_job(*rerun);
    return true;
  }
  if (!fresh) return false;
  std::vector<sync::ChangeRecord> appended;
  {
    std::unique_lock lock(mu_);
    auto event = [&](jobs::Status s) {
      jobs::JobEvent e;
      e.job = fresh->id;
      e.transition = s;
      e.site = site();
      e.at_ms = now_ms();
      return sync::job_event_payload(e);
    };
    std::vector<std::pair<Kind, nlohmann::json>> items;
    items.emplace_back(Kind::JobEvent, event(jobs::Status::Claimed));
    items.emplace_back(Kind::JobEvent, event(jobs::Status::Running));
    appended = engine_->append_batch(std::move(items));
  }
  push(appended);
  hook("after_job_running");
  run_job(*fresh);
  return true;
}

void Node::run_job(const jobs::Job& job) {
  struct Derived {
    catalogue::FileEntry entry;
    std::string sop;
    std::string study;
    Lfn source;
  };
  std::vector<std::tuple<std::string, std::string, metastore::Value>> image_attrs;
  std::vector<Derived> derived;
  std::vector<Lfn> outputs;
  std::string failure;
  try {
    for (const auto& lfn : job.inputs) {
      auto resolved = resolve(lfn);
      if (!resolved) throw NodeError(Errc::UnknownLfn, lfn.str());
      Bytes bytes;
      try {
        bytes = fetch(resolved->entry.guid);
      } catch (const NodeError& e) {
        if (e.code() == Errc::ChecksumMismatch) {
          failure = "checksum";
          break;
        }
        throw;
      }
      const dataset::Dataset ds = dataset::decode(bytes);
      const std::string sop = ds.get_string(dataset::tags::kSopInstanceUid).value_or("");
      auto result = jobs::run_algorithm(job.algorithm, job.params, ds);
      for (auto& [attr, v] : result.image_attrs) image_attrs.emplace_back(sop, attr, v);
      if (result.derived) {
        const Lfn out("/derived/" + job.id.hex() + "/" + std::string(lfn.basename()));
        const Guid guid = derive_guid("derived", {job.id.hex(), lfn.str()});
        std::uint64_t tail = 0;
        for (int i = 0; i < 8; ++i) tail = (tail << 8) | guid.bytes[static_cast<std::size_t>(i)];
        const std::string new_sop = "2.25." + std::to_string(tail);
        dataset::Dataset d = *result.derived;
        d.set_string(dataset::tags::kSopInstanceUid, new_sop);
        const Bytes file = dataset::encode(d);
        write_store_file(guid, file);
        derived.push_back({catalogue::FileEntry{out, guid, file.size(), dataset::checksum(file), site(), 0}, new_sop,
                           ds.get_string(dataset::tags::kStudyInstanceUid).value_or(""), lfn});
        outputs.push_back(out);
      } else {
        outputs.push_back(lfn);
      }
    }
  } catch (const std::exception& e) {
    failure = e.what();
  }
  std::vector<sync::ChangeRecord> appended;
  {
    std::unique_lock lock(mu_);
    std::vector<std::pair<Kind, nlohmann::json>> items;
    jobs::JobEvent e;
    e.job = job.id;
    e.site = site();
    e.at_ms = now_ms();
    if (failure.empty()) {
      for (auto& d : derived) {
        if (!state_->catalogue.find(d.entry.lfn)) {
          d.entry.created_seq = engine_->next_seq() + items.size();
          items.emplace_back(Kind::AddFile, sync::add_file_payload(d.entry, catalogue::pfn_for(d.entry.guid)));
        }
        put_meta(items, Entity::Image, d.sop, "lfn", d.entry.lfn.str());
        if (!d.study.empty()) put_meta(items, Entity::Image, d.sop, "study_id", d.study);
        put_meta(items, Entity::Image, d.sop, "standardized", std::int64_t{1});
        put_meta(items, Entity::Image, d.sop, "source_lfn", d.source.str());
      }
      for (auto& [sop, attr, v] : image_attrs) put_meta(items, Entity::Image, sop, attr, v);
      e.transition = jobs::Status::Done;
      e.outputs = outputs;
    } else {
      e.transition = jobs::Status::Failed;
      e.reason = failure;
    }
    items.emplace_back(Kind::JobEvent, sync::job_event_payload(e));
    appended = engine_->append_batch(std::move(items));
  }
  push(appended);
}

// ---- sync ----

nlohmann::json Node::changes_since(const sync::SeqVector& after) const {
  std::shared_lock lock(mu_);
  bool more = false;
  auto records = engine_->pull_since(after, sync::SyncEngine::kPullCap, &more);
  auto arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(sync::to_json(r));
  return {{"records", std::move(arr)}, {"more", more}, {"vector", sync::vector_to_json(engine_->vector())}};
}

nlohmann::json Node::receive_push(const nlohmann::json& doc) {
  std::vector<sync::ChangeRecord> records;
  if (!doc.contains("records") || !doc.at("records").is_array()) {
    throw sync::SyncError(sync::Errc::BadRecord, "push needs a records array");
  }
  for (const auto& j : doc.at("records")) records.push_back(sync::record_from_json(j));
  std::unique_lock lock(mu_);
  auto res = engine_->receive(records);
  return {{"vector", sync::vector_to_json(engine_->vector())},
          {"applied", res.applied},
          {"duplicates", res.duplicates},
          {"buffered", res.buffered}};
}

void Node::anti_entropy_tick() {
  if (!net_) return;
  const auto timeout = std::chrono::milliseconds(static_cast<std::int64_t>(config_.query_timeout_s * 1000));
  for (const auto& peer : config_.peer_ids()) {
    try {
      sync::SeqVector theirs;
      for (int page = 0; page < 64; ++page) {
        ApiRequest req{"GET", "/api/sync/changes", {{"after", sync::vector_to_json(seq_vector()).dump()}}, {}, {}};
        ApiResponse rsp = net_->call(peer, req, timeout);
        if (rsp.status != 200) break;
        const nlohmann::json body = rsp.doc();
        theirs = sync::vector_from_json(body.at("vector"));
        std::vector<sync::ChangeRecord> records;
        for (const auto& j : body.at("records")) records.push_back(sync::record_from_json(j));
        {
          std::unique_lock lock(mu_);
          engine_->receive(records);
        }
        if (!body.value("more", false)) break;
      }
      for (int page = 0; page < 64; ++page) {
        nlohmann::json mine = changes_since(theirs);
        if (mine.at("records").empty()) break;
        const bool more = mine.value("more", false);
        mine.erase("vector");
        mine.erase("more");
        ApiResponse rsp = net_->call(peer, ApiRequest{"POST", "/api/sync/push", {}, {}, mine.dump()}, timeout);
        if (rsp.status != 200) break;
        theirs = sync::vector_from_json(rsp.doc().at("vector"));
        if (!more) break;
      }
    } catch (const std::exception&) {
      // per-peer failures are skipped until the next tick
    }
  }
}

sync::SeqVector Node::seq_vector() const {
  std::shared_lock lock(mu_);
  return engine_->vector();
}

nlohmann::json Node::status() const {
  std::shared_lock lock(mu_);
  auto peers = nlohmann::json::array();
  for (const auto& p : config_.peers) {
    peers.push_back({{"site_id", p.site_id.str()}, {"http", p.http.str()}, {"dimse", p.dimse.str()}});
  }
  const auto uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {{"site", site().str()},
          {"ae_title", config_.ae_title},
          {"seq_vector", sync::vector_to_json(engine_->vector())},
          {"peers", std::move(peers)},
          {"uptime_s", uptime},
          {"files", state_->catalogue.file_count()},
          {"records", engine_->record_count()},
          {"buffered", engine_->buffered()},
          {"jobs", state_->jobs.all().size()}};
}

nlohmann::json Node::canonical_state() const {
  std::shared_lock lock(mu_);
  return state_->canonical();
}

nlohmann::json Node::canonical_with_jobs() const {
  std::shared_lock lock(mu_);
  return state_->canonical_with_jobs();
}

std::size_t Node::file_count() const {
  std::shared_lock lock(mu_);
  return state_->catalogue.file_count();
}

std::size_t Node::rejected_records() const {
  std::shared_lock lock(mu_);
  return engine_->rejected_count();
}

transfer::ScpConfig Node::scp_config() const {
  return transfer::ScpConfig{config_.ae_title, {{config_.federation_key_id, config_.federation_key}}};
}

transfer::ScpHandlers Node::scp_handlers() {
  transfer::ScpHandlers h;
  h.store = [this](ByteView mgd) { return store_anonymized(mgd); };
  h.find = [this](const nlohmann::json& doc) {
    nlohmann::json request = doc.contains("ast") ? doc : nlohmann::json{{"ast", doc}};
    const auto typed = typed_query(request);
    std::vector<nlohmann::json> rows;
    for (const auto& r : local_query(typed).rows) rows.push_back(query::to_json(r, typed));
    return rows;
  };
  h.get = [this](const Guid& guid) { return read_local(guid); };
  return h;
}

}  // namespace gridbox::node
