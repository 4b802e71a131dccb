#include "orchard/http_api.hpp"

#include <chrono>
#include <functional>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "orchard/analytics.hpp"
#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/util.hpp"

namespace orchard::api {

using nlohmann::json;

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation:
    case ErrorCode::insufficient_data:
    case ErrorCode::undefined_correlation:
    case ErrorCode::degenerate_fit:
      return 400;
    case ErrorCode::not_found:
      return 404;
    case ErrorCode::conflict:
    case ErrorCode::docking:
    case ErrorCode::invalid_transition:
    case ErrorCode::cycle:
    case ErrorCode::no_resource:
      return 409;
    default:
      return 500;
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::validation, "request body is not valid JSON");
  return j;
}

std::string envelope_ok(const json& data) {
  return json{{"ok", true}, {"data", data}}.dump() + "\n";
}

std::string envelope_error(const char* code, const std::string& message) {
  return json{{"ok", false}, {"error", {{"code", code}, {"message", message}}}}.dump() + "\n";
}

std::vector<std::string> csv_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : util::split(s, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

warehouse::QueryFilter filter_from_params(const httplib::Request& req) {
  warehouse::QueryFilter f;
  if (req.has_param("datatype")) f.datatype = req.get_param_value("datatype");
  if (req.has_param("subject")) f.subject = req.get_param_value("subject");
  if (req.has_param("tags")) f.include_tags = csv_list(req.get_param_value("tags"));
  if (req.has_param("exclude_tags"))
    f.exclude_tags = csv_list(req.get_param_value("exclude_tags"));
  return f;
}

warehouse::QueryFilter filter_from_json(const json& j) {
  warehouse::QueryFilter f;
  if (j.contains("subject")) f.subject = j.at("subject").get<std::string>();
  if (j.contains("tags")) j.at("tags").get_to(f.include_tags);
  if (j.contains("exclude_tags")) j.at("exclude_tags").get_to(f.exclude_tags);
  return f;
}

sched::SubmitRequest submit_from_json(const json& j) {
  sched::SubmitRequest req;
  req.instance = j.value("instance", "");
  req.app = j.value("app", "");
  req.user = j.value("user", "");
  req.subject = j.value("subject", "");
  req.session = j.value("session", "");
  if (j.contains("config")) req.config = j.at("config");
  if (j.contains("inputs")) j.at("inputs").get_to(req.bindings);
  if (j.contains("deps")) j.at("deps").get_to(req.deps);
  if (j.contains("output_tags")) j.at("output_tags").get_to(req.output_tags);
  if (j.contains("preferred_resource") && j.at("preferred_resource").is_string())
    req.preferred_resource = j.at("preferred_resource").get<std::string>();
  return req;
}

pipeline::RuleSpec rule_spec_from_json(const json& j) {
  pipeline::RuleSpec spec;
  spec.project = j.value("project", "");
  spec.name = j.value("name", "");
  spec.app = j.value("app", "");
  spec.user = j.value("user", "");
  if (j.contains("selectors")) {
    for (const auto& [slot, sel] : j.at("selectors").items()) {
      pipeline::SlotSelector selector;
      if (sel.is_array()) {
        sel.get_to(selector.tags);
      } else if (sel.is_object() && sel.contains("tags")) {
        sel.at("tags").get_to(selector.tags);
      }
      spec.selectors[slot] = std::move(selector);
    }
  }
  if (j.contains("output_tags")) j.at("output_tags").get_to(spec.output_tags);
  if (j.contains("subject_filter") && j.at("subject_filter").is_string())
    spec.subject_filter = j.at("subject_filter").get<std::string>();
  if (j.contains("config")) spec.config = j.at("config");
  return spec;
}

// Materializes an uploaded file list into dir. Entries carry a relative
// "path" plus either "content" or "content_b64".
void stage_upload(const json& files, const std::filesystem::path& dir) {
  if (!files.is_array() || files.empty())
    fail(ErrorCode::validation, "files must be a non-empty array");
  for (const auto& f : files) {
    std::string rel = f.value("path", "");
    if (rel.empty() || rel.front() == '/')
      fail(ErrorCode::validation, "file path must be relative: " + rel);
    for (const auto& part : util::split(rel, '/')) {
      if (part.empty() || part == "..")
        fail(ErrorCode::validation, "file path not allowed: " + rel);
    }
    std::string content;
    if (f.contains("content_b64")) {
      content = util::from_base64(f.at("content_b64").get<std::string>());
    } else if (f.contains("content")) {
      content = f.at("content").get<std::string>();
    } else {
      fail(ErrorCode::validation, "file entry needs content or content_b64: " + rel);
    }
    auto path = dir / rel;
    std::filesystem::create_directories(path.parent_path());
    util::atomic_write_file(path, content);
  }
}

}  // namespace

ApiServer::ApiServer(platform::Platform& platform, ServerOptions opts)
    : platform_(platform), opts_(std::move(opts)), server_(std::make_unique<httplib::Server>()) {
  setup_routes();
}

ApiServer::~ApiServer() { stop(); }

httplib::Server& ApiServer::raw() { return *server_; }

void ApiServer::setup_routes() {
  using Request = httplib::Request;
  using Response = httplib::Response;

  // Wraps a JSON-producing handler with the response envelope, the error
  // mapping and the idempotency replay cache.
  auto wrap = [this](std::function<json(const Request&)> fn) {
    return [this, fn = std::move(fn)](const Request& req, Response& res) {
      std::string idem_key;
      if (req.has_header("X-Idempotency-Key"))
        idem_key = req.method + " " + req.path + " " + req.get_header_value("X-Idempotency-Key");
      std::lock_guard<std::mutex> lock(mutex_);
      if (!idem_key.empty()) {
        auto it = idempotency_.find(idem_key);
        if (it != idempotency_.end()) {
          res.status = it->second.first;
          res.set_content(it->second.second, "application/json");
          res.set_header("X-Idempotent-Replay", "true");
          return;
        }
      }
      try {
        auto body = envelope_ok(fn(req));
        res.status = 200;
        res.set_content(body, "application/json");
      } catch (const Error& e) {
        res.status = status_for(e.code());
        res.set_content(envelope_error(e.code_name(), e.what()), "application/json");
      } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(envelope_error("validation", e.what()), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(envelope_error("internal", e.what()), "application/json");
      }
      if (!idem_key.empty()) idempotency_[idem_key] = {res.status, res.body};
    };
  };

  auto& s = *server_;

  s.Get("/api/v1/health", wrap([this](const Request&) {
    return json{{"status", "ok"}, {"store", platform_.root().string()},
                {"tick", platform_.sched.current_tick()}};
  }));

  // --- projects ---------------------------------------------------------
  s.Post("/api/v1/project", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::optional<std::string> dua;
    if (j.contains("dua_text")) dua = j.at("dua_text").get<std::string>();
    auto p = platform_.wh.create_project(j.value("owner", ""), j.value("name", ""),
                                         j.value("avoid_public_resources", false), dua);
    return json(p);
  }));
  s.Get("/api/v1/project", wrap([this](const Request&) {
    return json(platform_.wh.list_projects());
  }));
  s.Get(R"(/api/v1/project/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.wh.get_project(req.matches[1]));
  }));

  // --- datatypes ----------------------------------------------------------
  s.Post("/api/v1/datatype", wrap([this](const Request& req) {
    auto def = parse_body(req).get<warehouse::Datatype>();
    return json(platform_.wh.register_datatype(std::move(def)));
  }));
  s.Get("/api/v1/datatype", wrap([this](const Request& req) {
    if (req.has_param("name"))
      return json(platform_.wh.get_datatype(req.get_param_value("name")));
    return json(platform_.wh.list_datatypes());
  }));

  // --- data objects -------------------------------------------------------
  s.Post("/api/v1/data", wrap([this](const Request& req) {
    auto j = parse_body(req);
    warehouse::ArchiveRequest areq;
    areq.project = j.value("project", "");
    areq.datatype = j.value("datatype", "");
    if (j.contains("datatype_tags")) j.at("datatype_tags").get_to(areq.datatype_tags);
    if (j.contains("tags")) j.at("tags").get_to(areq.tags);
    areq.subject = j.value("subject", "");
    areq.session = j.value("session", "");
    auto stage = platform_.root() / "tmp" /
                 ("upload-" + std::to_string(platform_.seq.next()));
    try {
      stage_upload(j.value("files", json::array()), stage);
      areq.files = stage;
      auto obj = platform_.wh.archive_object(areq);
      std::filesystem::remove_all(stage);
      return json(obj);
    } catch (...) {
      std::filesystem::remove_all(stage);
      throw;
    }
  }));
  s.Get("/api/v1/data", wrap([this](const Request& req) {
    if (!req.has_param("project"))
      fail(ErrorCode::validation, "project parameter is required");
    return json(platform_.wh.query_objects(req.get_param_value("project"),
                                           filter_from_params(req)));
  }));
  s.Get(R"(/api/v1/data/([^/]+)/archive)", [this](const Request& req, Response& res) {
    std::lock_guard<std::mutex> lock(mutex_);
    try {
      auto bytes = platform_.wh.object_archive_bytes(req.matches[1]);
      res.status = 200;
      res.set_content(bytes, "application/x-tar");
    } catch (const Error& e) {
      res.status = status_for(e.code());
      res.set_content(envelope_error(e.code_name(), e.what()), "application/json");
    }
  });
  s.Get(R"(/api/v1/data/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.wh.get_object(req.matches[1]));
  }));

  // --- apps -----------------------------------------------------------------
  s.Post("/api/v1/app", wrap([this](const Request& req) {
    auto j = parse_body(req);
    if (j.contains("service_dir"))
      return json(platform_.apps.register_from_dir(j.at("service_dir").get<std::string>()));
    return json(platform_.apps.register_app(j.get<apps::App>()));
  }));
  s.Get("/api/v1/app", wrap([this](const Request&) {
    return json(platform_.apps.list_apps());
  }));
  s.Get(R"(/api/v1/app/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.apps.get_app(req.matches[1]));
  }));
  s.Post("/api/v1/docking", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::vector<warehouse::DataObject> staged;
    for (const auto& id : j.value("objects", std::vector<std::string>{}))
      staged.push_back(platform_.wh.get_object(id));
    if (j.contains("app")) {
      const auto& app = platform_.apps.get_app(j.at("app").get<std::string>());
      return json(platform_.apps.check_docking(app, staged));
    }
    return json(platform_.apps.compatible_apps(staged));
  }));

  // --- resources --------------------------------------------------------
  s.Post("/api/v1/resource", wrap([this](const Request& req) {
    auto spec = parse_body(req).get<resources::Resource>();
    return json(platform_.broker.register_resource(std::move(spec)));
  }));
  s.Get("/api/v1/resource", wrap([this](const Request&) {
    return json(platform_.broker.list());
  }));
  s.Get(R"(/api/v1/resource/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.broker.get(req.matches[1]));
  }));
  s.Post(R"(/api/v1/resource/([^/]+)/enable)", wrap([this](const Request& req) {
    auto j = parse_body(req);
    platform_.broker.enable_service(req.matches[1], j.value("app", ""),
                                    j.value("default_score", 0));
    return json(platform_.broker.get(req.matches[1]));
  }));
  s.Post(R"(/api/v1/resource/([^/]+)/status)", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::string id = req.matches[1];
    if (j.contains("status"))
      platform_.broker.set_status(
          id, resources::resource_status_from_string(j.at("status").get<std::string>()));
    if (j.contains("queue_length"))
      platform_.broker.set_queue_length(id, j.at("queue_length").get<int>());
    return json(platform_.broker.get(id));
  }));

  // --- instances ---------------------------------------------------------
  s.Post("/api/v1/instance", wrap([this](const Request& req) {
    auto j = parse_body(req);
    return json(platform_.sched.create_instance(j.value("project", ""), j.value("name", ""),
                                                j.value("description", "")));
  }));
  s.Get("/api/v1/instance", wrap([this](const Request& req) {
    std::optional<std::string> project;
    if (req.has_param("project")) project = req.get_param_value("project");
    return json(platform_.sched.list_instances(project));
  }));
  s.Get(R"(/api/v1/instance/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.sched.get_instance(req.matches[1]));
  }));

  // --- tasks ------------------------------------------------------------
  s.Post("/api/v1/task", wrap([this](const Request& req) {
    return json(platform_.sched.submit_task(submit_from_json(parse_body(req))));
  }));
  s.Get("/api/v1/task", wrap([this](const Request& req) {
    sched::TaskFilter f;
    if (req.has_param("instance")) f.instance = req.get_param_value("instance");
    if (req.has_param("project")) f.project = req.get_param_value("project");
    if (req.has_param("rule")) f.rule = req.get_param_value("rule");
    if (req.has_param("subject")) f.subject = req.get_param_value("subject");
    if (req.has_param("state"))
      for (const auto& s : csv_list(req.get_param_value("state")))
        f.states.insert(sched::task_state_from_string(s));
    return json(platform_.sched.list_tasks(f));
  }));
  s.Get(R"(/api/v1/task/([^/]+)/events)", wrap([this](const Request& req) {
    return json(platform_.sched.task_events(req.matches[1]));
  }));
  s.Get(R"(/api/v1/task/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.sched.get_task(req.matches[1]));
  }));
  s.Post(R"(/api/v1/task/([^/]+)/stop)", wrap([this](const Request& req) {
    platform_.sched.stop_task(req.matches[1]);
    return json(platform_.sched.get_task(req.matches[1]));
  }));
  s.Delete(R"(/api/v1/task/([^/]+))", wrap([this](const Request& req) {
    platform_.sched.remove_task(req.matches[1]);
    return json(platform_.sched.get_task(req.matches[1]));
  }));

  // --- scheduler control --------------------------------------------------
  s.Post("/api/v1/tick", wrap([this](const Request& req) {
    int count = parse_body(req).value("count", 1);
    for (int i = 0; i < count; ++i) platform_.sched.tick();
    return json{{"tick", platform_.sched.current_tick()},
                {"idle", platform_.sched.idle()}};
  }));
  s.Post("/api/v1/run", wrap([this](const Request& req) {
    int max_ticks = parse_body(req).value("max_ticks", 10000);
    int ticks = platform_.sched.run_until_idle(max_ticks);
    return json{{"ticks", ticks}, {"tick", platform_.sched.current_tick()},
                {"idle", platform_.sched.idle()}};
  }));

  // --- rules --------------------------------------------------------------
  s.Post("/api/v1/rule", wrap([this](const Request& req) {
    return json(platform_.pipeline.define_rule(rule_spec_from_json(parse_body(req))));
  }));
  s.Get("/api/v1/rule", wrap([this](const Request& req) {
    std::optional<std::string> project;
    if (req.has_param("project")) project = req.get_param_value("project");
    return json(platform_.pipeline.list(project));
  }));
  s.Post("/api/v1/rule/run", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::optional<std::string> project;
    if (j.contains("project")) project = j.at("project").get<std::string>();
    return json(platform_.pipeline.run_rules(project, j.value("max_rounds", 50)));
  }));
  s.Get(R"(/api/v1/rule/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.pipeline.get(req.matches[1]));
  }));
  s.Post(R"(/api/v1/rule/([^/]+)/evaluate)", wrap([this](const Request& req) {
    return json(platform_.pipeline.evaluate_rule(req.matches[1]));
  }));
  s.Post(R"(/api/v1/rule/([^/]+)/rearm)", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::optional<std::string> subject;
    if (j.contains("subject")) subject = j.at("subject").get<std::string>();
    return json{{"cleared", platform_.pipeline.rearm(req.matches[1], subject)}};
  }));
  s.Post(R"(/api/v1/rule/([^/]+)/active)", wrap([this](const Request& req) {
    platform_.pipeline.set_active(req.matches[1], parse_body(req).value("active", true));
    return json(platform_.pipeline.get(req.matches[1]));
  }));

  // --- provenance -----------------------------------------------------------
  s.Get(R"(/api/v1/provenance/([^/]+)/graph)", wrap([this](const Request& req) {
    auto graph = platform_.provenance.graph(req.matches[1]);
    if (req.has_param("format") && req.get_param_value("format") == "dot")
      return json{{"dot", prov::ProvenanceStore::graph_dot(graph)}};
    return graph;
  }));
  s.Get(R"(/api/v1/provenance/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.provenance.get(req.matches[1]));
  }));
  s.Post("/api/v1/reproduce", wrap([this](const Request& req) {
    auto j = parse_body(req);
    std::string object = j.value("object", "");
    std::filesystem::path out = j.value("out_dir", "");
    if (out.empty()) fail(ErrorCode::validation, "out_dir is required");
    if (out.is_relative()) out = platform_.root() / out;
    auto plan = platform_.provenance.emit_reproduce_script(object, out, platform_.wh,
                                                           platform_.apps);
    return json{{"script", plan.script_path.string()},
                {"imported", plan.imported},
                {"tasks", plan.tasks}};
  }));

  // --- publications --------------------------------------------------------
  s.Post("/api/v1/publication", wrap([this](const Request& req) {
    auto j = parse_body(req);
    return json(platform_.provenance.create_publication(
        j.value("project", ""), j.value("name", ""),
        j.value("objects", std::vector<std::string>{}), platform_.wh));
  }));
  s.Get("/api/v1/publication", wrap([this](const Request&) {
    return json(platform_.provenance.list_publications());
  }));
  s.Get(R"(/api/v1/publication/([^/]+))", wrap([this](const Request& req) {
    return json(platform_.provenance.get_publication(req.matches[1]));
  }));

  // --- analytics -------------------------------------------------------------
  s.Post("/api/v1/collate", wrap([this](const Request& req) {
    auto j = parse_body(req);
    auto result = analytics::collate_features(platform_.wh, platform_.provenance,
                                              j.value("project", ""), j.value("datatype", ""),
                                              filter_from_json(j), j.value("strict", true));
    return json{{"tsv", analytics::tidy_tsv(result.table)},
                {"sidecar", analytics::collate_sidecar(result)}};
  }));
  s.Post("/api/v1/reference/build", wrap([this](const Request& req) {
    auto j = parse_body(req);
    auto result = analytics::collate_features(platform_.wh, platform_.provenance,
                                              j.value("project", ""), j.value("datatype", ""),
                                              filter_from_json(j), j.value("strict", true));
    auto build = analytics::build_reference(result.table, j.value("outlier_k", 3.0),
                                            j.value("source", j.value("project", "")));
    return json{{"reference", analytics::reference_json(build.reference)},
                {"diagnostics", build.diagnostics}};
  }));
  s.Post("/api/v1/reference/classify", wrap([this](const Request& req) {
    auto j = parse_body(req);
    auto ref = analytics::reference_from_json(j.at("reference"));
    auto band = analytics::classify_band(ref, j.value("structure", ""),
                                         j.value("measure", ""), j.value("value", 0.0));
    return json{{"band", analytics::to_string(band)}};
  }));

  // --- simulation ------------------------------------------------------------
  s.Post("/api/v1/sim/run", wrap([this](const Request& req) {
    auto scenario = platform::scenario_from_json(parse_body(req));
    return platform::metrics_json(platform::run_scenario(platform_, scenario));
  }));
}

void ApiServer::start_ticker() {
  if (opts_.tick_seconds <= 0) return;
  ticker_ = std::thread([this] {
    auto interval = std::chrono::duration<double>(opts_.tick_seconds);
    while (running_) {
      std::this_thread::sleep_for(interval);
      if (!running_) break;
      std::lock_guard<std::mutex> lock(mutex_);
      if (!platform_.sched.idle()) platform_.sched.tick();
    }
  });
}

bool ApiServer::serve() {
  running_ = true;
  start_ticker();
  bool ok = server_->listen(opts_.host, opts_.port);
  running_ = false;
  if (ticker_.joinable()) ticker_.join();
  return ok;
}

int ApiServer::start_background() {
  int port = server_->bind_to_any_port(opts_.host);
  if (port < 0) fail(ErrorCode::io, "could not bind " + opts_.host);
  running_ = true;
  start_ticker();
  serve_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void ApiServer::stop() {
  if (!running_.exchange(false)) {
    if (server_->is_running()) server_->stop();
    if (serve_thread_.joinable()) serve_thread_.join();
    if (ticker_.joinable()) ticker_.join();
    return;
  }
  server_->stop();
  if (serve_thread_.joinable()) serve_thread_.join();
  if (ticker_.joinable()) ticker_.join();
}

}  // namespace orchard::api
