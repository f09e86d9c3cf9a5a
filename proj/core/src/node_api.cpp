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

#include <string_view>

#include "gridbox/dataset.hpp"
#include "gridbox/node.hpp"

namespace gridbox::node {

ApiResponse ApiResponse::json(int status, const nlohmann::json& doc) {
  return ApiResponse{status, "application/json", doc.dump()};
}

nlohmann::json ApiResponse::doc() const {
  if (body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(body);
}

namespace {

ApiResponse error(int status, std::string_view code, const std::string& message,
                  nlohmann::json extra = nlohmann::json::object()) {
  extra["code"] = code;
  extra["message"] = message;
  return ApiResponse::json(status, {{"error", std::move(extra)}});
}

std::string_view query_code(query::Errc c) {
  switch (c) {
    case query::Errc::SyntaxError: return "SyntaxError";
    case query::Errc::UnknownField: return "UnknownField";
    case query::Errc::TypeError: return "TypeError";
    case query::Errc::BadDocument: return "BadDocument";
  }
  return "QueryError";
}

nlohmann::json query_error_doc(const query::QueryError& e) {
  nlohmann::json d{{"code", query_code(e.code())}, {"message", e.what()}};
  if (e.line() > 0) {
    d["line"] = e.line();
    d["col"] = e.col();
  }
  if (!e.expected().empty()) d["expected"] = e.expected();
  return d;
}

int node_status(Errc c) {
  switch (c) {
    case Errc::DecodeError:
    case Errc::NotAnonymized:
    case Errc::BadRequest: return 400;
    case Errc::UnknownGuid:
    case Errc::UnknownLfn: return 404;
    case Errc::DuplicateSop: return 409;
    case Errc::FetchFailed:
    case Errc::ChecksumMismatch: return 502;
    case Errc::DirNotEmpty:
    case Errc::NotInitialized:
    case Errc::StorageFailure: return 500;
  }
  return 500;
}

std::string_view job_code(jobs::Errc c) {
  switch (c) {
    case jobs::Errc::UnknownLfn: return "UnknownLfn";
    case jobs::Errc::UnknownAlgorithm: return "UnknownAlgorithm";
    case jobs::Errc::UnknownJob: return "UnknownJob";
    case jobs::Errc::NoInputs: return "NoInputs";
  }
  return "JobError";
}

std::string_view sync_code(sync::Errc c) {
  switch (c) {
    case sync::Errc::BadDigest: return "BadDigest";
    case sync::Errc::BadRecord: return "BadRecord";
    case sync::Errc::BufferOverflow: return "BufferOverflow";
    case sync::Errc::CorruptLog: return "CorruptLog";
    case sync::Errc::StorageFailure: return "StorageFailure";
  }
  return "SyncError";
}

nlohmann::json resolved_doc(const catalogue::Resolved& r) {
  auto replicas = nlohmann::json::array();
  for (const auto& rep : r.replicas) replicas.push_back({{"site", rep.site.str()}, {"pfn", rep.pfn}});
  return {{"entry", catalogue::to_json(r.entry)}, {"replicas", std::move(replicas)}};
}

bool strip_prefix(std::string_view& path, std::string_view prefix) {
  if (!path.starts_with(prefix) || path.size() == prefix.size()) return false;
  path.remove_prefix(prefix.size());
  return path.find('/') == std::string_view::npos;
}

std::string param(const ApiRequest& req, const std::string& name) {
  auto it = req.params.find(name);
  return it == req.params.end() ? std::string{} : it->second;
}

}  // namespace

ApiResponse Node::handle(const ApiRequest& req) {
  std::string_view path = req.path;
  const bool get = req.method == "GET";
  const bool post = req.method == "POST";
  try {
    if (post && path == "/api/query") return ApiResponse::json(200, query(nlohmann::json::parse(req.body)));

    if (post && path == "/api/query/validate") {
      try {
        const auto typed = typed_query(nlohmann::json::parse(req.body));
        return ApiResponse::json(200, {{"valid", true}, {"text", query::to_text(typed)}, {"ast", query::to_json(typed)}});
      } catch (const query::QueryError& e) {
        return ApiResponse::json(200, {{"valid", false}, {"error", query_error_doc(e)}});
      }
    }

    if (post && path == "/api/ingest") {
      nlohmann::json attrs = nlohmann::json::object();
      if (auto it = req.headers.find("X-Patient-Attrs"); it != req.headers.end() && !it->second.empty()) {
        auto raw = crypto::base64_decode(it->second);
        if (!raw) return error(400, "BadRequest", "X-Patient-Attrs is not base64");
        attrs = nlohmann::json::parse(std::string(raw->begin(), raw->end()));
      }
      auto res = ingest(as_bytes(req.body), attrs);
      return ApiResponse::json(201, {{"lfn", res.lfn.str()}, {"guid", res.guid.hex()}});
    }

    if (get && strip_prefix(path, "/api/file/")) {
      const Bytes bytes = fetch(Guid::from_hex(path));
      return ApiResponse{200, "application/octet-stream", std::string(bytes.begin(), bytes.end())};
    }
    path = req.path;

    if (get && strip_prefix(path, "/api/preview/")) {
      const Bytes png = preview(Guid::from_hex(path));
      return ApiResponse{200, "image/png", std::string(png.begin(), png.end())};
    }
    path = req.path;

    if (post && path == "/api/jobs") {
      const auto doc = nlohmann::json::parse(req.body);
      const std::string name = doc.value("algorithm", "");
      const auto algorithm = jobs::parse_algorithm(name);
      if (!algorithm) return error(400, "UnknownAlgorithm", "unknown algorithm '" + name + "'");
      std::vector<Lfn> inputs;
      for (const auto& l : doc.value("inputs", nlohmann::json::array())) inputs.emplace_back(l.get<std::string>());
      auto job = submit_job(*algorithm, doc.value("params", nlohmann::json::object()), inputs);
      return ApiResponse::json(201, jobs::to_json(job));
    }

    if (post && path == "/api/retrieve") {
      const auto doc = nlohmann::json::parse(req.body);
      std::vector<Lfn> files;
      for (const auto& l : doc.value("files", nlohmann::json::array())) files.emplace_back(l.get<std::string>());
      std::optional<nlohmann::json> job;
      if (doc.contains("job") && doc.at("job").is_object()) job = doc.at("job");
      return ApiResponse::json(200, retrieve(files, job));
    }

    if (get && path == "/api/jobs") {
      auto arr = nlohmann::json::array();
      for (const auto& j : jobs()) arr.push_back(jobs::to_json(j));
      return ApiResponse::json(200, {{"jobs", std::move(arr)}});
    }

    if (get && strip_prefix(path, "/api/jobs/")) return ApiResponse::json(200, jobs::to_json(job_status(Guid::from_hex(path))));
    path = req.path;

    if (get && path == "/api/catalogue/list") {
      std::string dir = param(req, "path");
      if (dir.empty()) dir = "/";
      return ApiResponse::json(200, {{"path", dir}, {"entries", list(dir)}});
    }

    if (get && path == "/api/catalogue/resolve") {
      std::optional<catalogue::Resolved> r;
      if (auto lfn = param(req, "lfn"); !lfn.empty()) {
        r = resolve(Lfn(lfn));
      } else if (auto guid = param(req, "guid"); !guid.empty()) {
        r = resolve(Guid::from_hex(guid));
      } else {
        return error(400, "BadRequest", "lfn or guid required");
      }
      if (!r) return error(404, "NotFound", "not catalogued");
      return ApiResponse::json(200, resolved_doc(*r));
    }

    if (get && path == "/api/sync/changes") {
      const std::string after = param(req, "after");
      sync::SeqVector v = after.empty() ? sync::SeqVector{} : sync::vector_from_json(nlohmann::json::parse(after));
      return ApiResponse::json(200, changes_since(v));
    }

    if (post && path == "/api/sync/push") return ApiResponse::json(200, receive_push(nlohmann::json::parse(req.body)));

    if (get && path == "/api/status") return ApiResponse::json(200, status());

    return error(404, "NotFound", req.method + " " + req.path);
  } catch (const query::QueryError& e) {
    return ApiResponse::json(400, {{"error", query_error_doc(e)}});
  } catch (const NodeError& e) {
    return error(node_status(e.code()), errc_name(e.code()), e.what());
  } catch (const jobs::JobError& e) {
    return error(e.code() == jobs::Errc::UnknownJob ? 404 : 400, job_code(e.code()), e.what());
  } catch (const sync::SyncError& e) {
    const int status = e.code() == sync::Errc::BufferOverflow ? 503 : e.code() == sync::Errc::StorageFailure ? 500 : 400;
    return error(status, sync_code(e.code()), e.what());
  } catch (const federation::UnknownGuid& e) {
    return error(404, "UnknownGuid", e.what());
  } catch (const dataset::DatasetError& e) {
    return error(400, "DecodeError", e.what());
  } catch (const nlohmann::json::exception& e) {
    return error(400, "BadRequest", e.what());
  } catch (const std::invalid_argument& e) {
    return error(400, "BadRequest", e.what());
  } catch (const std::exception& e) {
    return error(500, "Internal", e.what());
  }
}

}  // namespace gridbox::node
