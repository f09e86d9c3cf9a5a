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

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "gridbox/crypto.hpp"
#include "gridbox/node.hpp"
#include "gridbox/node_server.hpp"
#include "gridbox/scenario.hpp"

namespace {

using namespace gridbox;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRemote = 2;
constexpr int kLocal = 3;

struct Failure {
  int code;
  std::string message;
};

fs::path data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("MG_DATA_DIR"); env && *env) return env;
  return "gridbox-data";
}

node::NodeConfig load(const fs::path& dir) {
  try {
    return node::load_config(dir / "config.json");
  } catch (const std::exception& e) {
    throw Failure{kLocal, e.what()};
  }
}

node::Endpoint target(const node::NodeConfig& c, const std::string& site) {
  if (site.empty() || site == c.site_id.str()) {
    node::Endpoint e = c.listen_http;
    if (e.host == "0.0.0.0") e.host = "127.0.0.1";
    return e;
  }
  for (const auto& p : c.peers) {
    if (p.site_id.str() == site) return p.http;
  }
  throw Failure{kUsage, "unknown site " + site};
}

// Returns the body; throws Failure(kRemote) on transport or HTTP errors.
std::string http(const node::Endpoint& ep, const std::string& method, const std::string& path,
                 const std::string& body = {}, const httplib::Headers& headers = {},
                 const std::string& content_type = "application/json") {
  httplib::Client cli(ep.host, ep.port);
  cli.set_connection_timeout(std::chrono::seconds(5));
  cli.set_read_timeout(std::chrono::seconds(60));
  auto res = method == "POST" ? cli.Post(path, headers, body, content_type) : cli.Get(path, headers);
  if (!res) throw Failure{kRemote, ep.str() + ": " + httplib::to_string(res.error())};
  if (res->status >= 300) {
    std::string msg = res->body;
    try {
      msg = nlohmann::json::parse(res->body).at("error").value("message", res->body);
    } catch (const std::exception&) {
    }
    throw Failure{kRemote, "HTTP " + std::to_string(res->status) + ": " + msg};
  }
  return res->body;
}

std::string cell(const nlohmann::json& v) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void print_rows(const nlohmann::json& doc) {
  std::vector<std::string> header{"site"};
  for (const auto& c : doc.value("columns", nlohmann::json::array())) header.push_back(c.get<std::string>());
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : doc.at("rows")) {
    std::vector<std::string> line{r.value("site", "")};
    for (const auto& v : r.value("values", nlohmann::json::array())) line.push_back(cell(v));
    rows.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) {
      std::cout << std::left << std::setw(static_cast<int>(width[i]) + 2) << r[i];
    }
    std::cout << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  std::cout << rows.size() << " row(s)";
  if (doc.value("truncated", false)) std::cout << ", truncated";
  for (const auto& f : doc.value("failed", nlohmann::json::array())) {
    std::cout << "; partial: " << f.value("site", "") << ' ' << f.value("reason", "");
  }
  std::cout << '\n';
}

std::atomic<node::NodeServer*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) std::thread([s] { s->stop(); }).detach();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mgctl: run and talk to a gridbox node"};
  app.require_subcommand(1);
  std::string dir_flag;
  app.add_option("-d,--data-dir", dir_flag, "node data directory (default $MG_DATA_DIR or ./gridbox-data)");

  // init
  auto* init = app.add_subcommand("init", "create a data directory and its config");
  std::string site, ae, http_ep = "127.0.0.1:8080", dimse_ep = "127.0.0.1:11112", key_hex;
  std::vector<std::string> peer_specs;
  double sync_s = 5;
  init->add_option("--site", site, "site id")->required();
  init->add_option("--ae", ae, "AE title (default: site id)");
  init->add_option("--http", http_ep, "HTTP listen host:port");
  init->add_option("--dimse", dimse_ep, "DIMSE listen host:port");
  init->add_option("--key", key_hex, "federation key, 64 hex chars (random when omitted)");
  init->add_option("--peer", peer_specs, "peer as site=dimse_host:port,http_host:port[,AE]");
  init->add_option("--sync-interval", sync_s, "anti-entropy interval in seconds");

  // serve
  auto* serve = app.add_subcommand("serve", "run the node");
  bool recover_log = false;
  std::string log_file;
  serve->add_flag("--recover-log", recover_log, "truncate a damaged change-log tail instead of refusing to start");
  serve->add_option("--log", log_file, "request log file (default stderr)");

  auto* ingest = app.add_subcommand("ingest", "ingest raw MGD acquisitions through the local node");
  std::vector<std::string> files;
  std::string attrs;
  ingest->add_option("files", files, "MGD files")->required();
  ingest->add_option("--attrs", attrs, "patient attributes JSON document");

  auto* query = app.add_subcommand("query", "run a federated query");
  std::string text, query_site;
  bool as_json = false, local_only = false;
  query->add_option("text", text, "query text")->required();
  query->add_option("--site", query_site, "coordinating site (default: this node)");
  query->add_flag("--local", local_only, "answer from the coordinator's partition only");
  query->add_flag("--json", as_json, "print the raw result document");

  auto* get = app.add_subcommand("get", "fetch a file by logical name");
  std::string lfn, out_path;
  get->add_option("lfn", lfn, "logical file name")->required();
  get->add_option("-o,--output", out_path, "output path")->required();

  auto* job = app.add_subcommand("job", "analysis jobs");
  job->require_subcommand(1);
  auto* submit = job->add_subcommand("submit", "submit a job");
  std::string algorithm, params = "{}";
  std::vector<std::string> inputs;
  submit->add_option("--algorithm", algorithm, "qc_report | detect_microcalcs | standardize")->required();
  submit->add_option("--input", inputs, "input lfn")->required();
  submit->add_option("--params", params, "parameters JSON document");
  auto* status = job->add_subcommand("status", "show a job");
  std::string job_id;
  status->add_option("id", job_id, "job id")->required();

  auto* peers = app.add_subcommand("peers", "show peers and their reachability");

  auto* sim = app.add_subcommand("sim", "simulation");
  sim->require_subcommand(1);
  auto* sim_run = sim->add_subcommand("run", "run a scenario file");
  std::string scenario_file, report_file;
  std::uint64_t seed = 0;
  sim_run->add_option("scenario", scenario_file, "scenario JSON")->required();
  sim_run->add_option("--seed", seed, "override the topology seed");
  sim_run->add_option("--report", report_file, "write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    const fs::path dir = data_dir(dir_flag);

    if (*init) {
      node::NodeConfig c;
      try {
        c.site_id = SiteId(site);
        c.ae_title = ae.empty() ? site : ae;
        c.data_dir = fs::absolute(dir);
        c.listen_http = node::Endpoint::parse(http_ep);
        c.listen_dimse = node::Endpoint::parse(dimse_ep);
        c.sync_interval_s = sync_s;
        if (key_hex.empty()) {
          crypto::random_fill(c.federation_key);
        } else {
          auto raw = from_hex(key_hex);
          if (raw.size() != 32) throw std::invalid_argument("--key must be 64 hex characters");
          std::copy(raw.begin(), raw.end(), c.federation_key.begin());
        }
        for (const auto& spec : peer_specs) {
          const auto eq = spec.find('=');
          if (eq == std::string::npos) throw std::invalid_argument("bad --peer " + spec);
          node::PeerConfig p;
          p.site_id = SiteId(spec.substr(0, eq));
          std::vector<std::string> parts;
          std::stringstream ss(spec.substr(eq + 1));
          for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
          if (parts.size() < 2) throw std::invalid_argument("bad --peer " + spec);
          p.dimse = node::Endpoint::parse(parts[0]);
          p.http = node::Endpoint::parse(parts[1]);
          p.ae_title = parts.size() > 2 ? parts[2] : p.site_id.str();
          c.peers.push_back(p);
        }
      } catch (const std::invalid_argument& e) {
        throw Failure{kUsage, e.what()};
      }
      try {
        node::Node::init(c);
      } catch (const std::exception& e) {
        throw Failure{kLocal, e.what()};
      }
      std::cout << "initialized " << c.site_id.str() << " in " << c.data_dir.string() << '\n';
      return kOk;
    }

    if (*serve) {
      node::NodeConfig c = load(dir);
      std::ofstream log_out;
      node::ServerOptions opts;
      opts.node.recover_log = recover_log;
      if (!log_file.empty()) {
        log_out.open(log_file, std::ios::app);
        opts.log = &log_out;
      } else {
        opts.log = &std::cerr;
      }
      std::unique_ptr<node::NodeServer> server;
      try {
        server = std::make_unique<node::NodeServer>(c, opts);
        server->start();
      } catch (const std::exception& e) {
        throw Failure{kLocal, e.what()};
      }
      g_server = server.get();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << c.site_id.str() << " http=" << server->http_port() << " dimse=" << server->dimse_port()
                << std::endl;
      server->wait();
      server->stop();
      g_server = nullptr;
      return kOk;
    }

    const node::NodeConfig c = load(dir);

    if (*ingest) {
      httplib::Headers headers;
      if (!attrs.empty()) {
        nlohmann::json parsed;
        try {
          parsed = nlohmann::json::parse(attrs);
        } catch (const std::exception& e) {
          throw Failure{kUsage, std::string("--attrs: ") + e.what()};
        }
        headers.emplace("X-Patient-Attrs", crypto::base64_encode(as_bytes(parsed.dump())));
      }
      int failures = 0;
      for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw Failure{kLocal, "cannot read " + f};
        const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        try {
          auto doc = nlohmann::json::parse(
              http(target(c, ""), "POST", "/api/ingest", body, headers, "application/octet-stream"));
          std::cout << f << " -> " << doc.at("lfn").get<std::string>() << '\n';
        } catch (const Failure& e) {
          std::cerr << f << ": " << e.message << '\n';
          ++failures;
        }
      }
      return failures == 0 ? kOk : kRemote;
    }

    if (*query) {
      nlohmann::json req{{"text", text}};
      if (local_only) req["scope"] = "local";
      const auto doc = nlohmann::json::parse(http(target(c, query_site), "POST", "/api/query", req.dump()));
      if (as_json) {
        std::cout << doc.dump(2) << '\n';
      } else {
        print_rows(doc);
      }
      return kOk;
    }

    if (*get) {
      const auto ep = target(c, "");
      const auto resolved = nlohmann::json::parse(
          http(ep, "GET", "/api/catalogue/resolve?lfn=" + httplib::detail::encode_query_param(lfn)));
      const std::string guid = resolved.at("entry").at("guid");
      const std::string bytes = http(ep, "GET", "/api/file/" + guid);
      std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
      if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
        throw Failure{kLocal, "cannot write " + out_path};
      }
      std::cout << lfn << " -> " << out_path << " (" << bytes.size() << " bytes)\n";
      return kOk;
    }

    if (*submit) {
      nlohmann::json p;
      try {
        p = nlohmann::json::parse(params);
      } catch (const std::exception& e) {
        throw Failure{kUsage, std::string("--params: ") + e.what()};
      }
      nlohmann::json req{{"algorithm", algorithm}, {"params", p}, {"inputs", inputs}};
      const auto doc = nlohmann::json::parse(http(target(c, ""), "POST", "/api/jobs", req.dump()));
      std::cout << doc.at("id").get<std::string>() << ' ' << doc.value("status", "") << " target=" << doc.value("target", "")
                << '\n';
      return kOk;
    }

    if (*status) {
      std::cout << nlohmann::json::parse(http(target(c, ""), "GET", "/api/jobs/" + job_id)).dump(2) << '\n';
      return kOk;
    }

    if (*peers) {
      int down = 0;
      std::vector<std::string> sites{c.site_id.str()};
      for (const auto& p : c.peers) sites.push_back(p.site_id.str());
      for (const auto& s : sites) {
        try {
          const auto doc = nlohmann::json::parse(http(target(c, s), "GET", "/api/status"));
          std::cout << s << " up files=" << doc.value("files", 0) << " seq=" << doc.at("seq_vector").dump() << '\n';
        } catch (const Failure& e) {
          std::cout << s << " down (" << e.message << ")\n";
          ++down;
        }
      }
      return down == 0 ? kOk : kRemote;
    }

    if (*sim_run) {
      nlohmann::json scenario;
      try {
        std::ifstream in(scenario_file);
        if (!in) throw Failure{kLocal, "cannot read " + scenario_file};
        scenario = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Failure{kUsage, scenario_file + ": " + e.what()};
      }
      simnet::ScenarioOptions opts;
      if (seed != 0) opts.seed = seed;
      nlohmann::json report;
      try {
        report = simnet::run_scenario(scenario, opts);
      } catch (const simnet::BadScenario& e) {
        throw Failure{kUsage, e.what()};
      }
      for (const auto& s : report.at("steps")) {
        std::cout << (s.at("ok").get<bool>() ? "ok   " : "FAIL ") << std::setw(3) << s.at("index").get<int>() << ' '
                  << s.at("op").get<std::string>() << ' ' << s.at("detail").dump() << '\n';
      }
      std::cout << report.at("name").get<std::string>() << ": " << (report.at("passed").get<bool>() ? "PASS" : "FAIL")
                << " assertions=" << report.at("assertions").dump() << " counters=" << report.at("counters").dump()
                << " virtual_ms=" << report.at("virtual_ms") << " wall_ms=" << report.at("wall_ms") << '\n';
      if (!report_file.empty()) {
        std::ofstream out(report_file, std::ios::trunc);
        out << report.dump(2) << '\n';
      }
      return report.at("passed").get<bool>() ? kOk : kLocal;
    }
  } catch (const Failure& f) {
    std::cerr << "mgctl: " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "mgctl: " << e.what() << '\n';
    return kLocal;
  }
  return kUsage;
}
