#include "orchard/provenance.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/tar.hpp"
#include "orchard/util.hpp"

namespace orchard::prov {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const ProvenanceRecord& r) {
  j = json{{"object", r.object},
           {"output_slot", r.output_slot},
           {"task", r.task},
           {"instance", r.instance},
           {"project", r.project},
           {"app", r.app},
           {"app_version", r.app_version},
           {"service_digest", r.service_digest},
           {"config_text", r.config_text},
           {"inputs", r.inputs},
           {"resource", r.resource},
           {"created_at", r.created_at}};
}

void from_json(const json& j, ProvenanceRecord& r) {
  j.at("object").get_to(r.object);
  j.at("output_slot").get_to(r.output_slot);
  j.at("task").get_to(r.task);
  r.instance = j.value("instance", "");
  r.project = j.value("project", "");
  j.at("app").get_to(r.app);
  r.app_version = j.value("app_version", "");
  r.service_digest = j.value("service_digest", "");
  r.config_text = j.value("config_text", "");
  if (j.contains("inputs")) j.at("inputs").get_to(r.inputs);
  r.resource = j.value("resource", "");
  r.created_at = j.value("created_at", std::int64_t{0});
}

void to_json(json& j, const Publication& p) {
  j = json{{"id", p.id},
           {"doi", p.doi},
           {"project", p.project},
           {"name", p.name},
           {"objects", p.objects},
           {"created_at", p.created_at}};
}

void from_json(const json& j, Publication& p) {
  j.at("id").get_to(p.id);
  j.at("doi").get_to(p.doi);
  j.at("project").get_to(p.project);
  j.at("name").get_to(p.name);
  j.at("objects").get_to(p.objects);
  p.created_at = j.value("created_at", std::int64_t{0});
}

ProvenanceStore::ProvenanceStore(fs::path root, Sequence& seq)
    : root_(std::move(root)), seq_(seq) {
  load();
}

void ProvenanceStore::load() {
  if (auto text = util::read_file_if_exists(root_ / "provenance.jsonl")) {
    std::istringstream lines(*text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      json doc = json::parse(line, nullptr, false);
      if (doc.is_discarded()) continue;  // torn trailing write
      ProvenanceRecord rec = doc.get<ProvenanceRecord>();
      seq_.bump(rec.created_at);
      by_object_[rec.object] = std::move(rec);
    }
  }
  if (auto text = util::read_file_if_exists(root_ / "publications.json")) {
    json doc = json::parse(*text);
    next_pub_ = doc.value("next_pub", std::uint64_t{1});
    for (const auto& item : doc.at("publications")) {
      Publication p = item.get<Publication>();
      seq_.bump(p.created_at);
      publications_[p.id] = std::move(p);
    }
  }
}

void ProvenanceStore::record(ProvenanceRecord rec) {
  if (rec.object.empty() || rec.task.empty() || rec.app.empty())
    fail(ErrorCode::validation, "provenance record needs object, task and app");
  if (by_object_.count(rec.object))
    fail(ErrorCode::conflict, "object already has provenance: " + rec.object);
  if (rec.created_at == 0) rec.created_at = seq_.next();
  util::append_line(root_ / "provenance.jsonl", json(rec).dump());
  by_object_[rec.object] = std::move(rec);
}

bool ProvenanceStore::has(const std::string& object) const {
  return by_object_.count(object) > 0;
}

const ProvenanceRecord& ProvenanceStore::get(const std::string& object) const {
  auto it = by_object_.find(object);
  if (it == by_object_.end())
    fail(ErrorCode::not_found, "no provenance for object: " + object);
  return it->second;
}

std::vector<ProvenanceRecord> ProvenanceStore::records_for_task(const std::string& task) const {
  std::vector<ProvenanceRecord> out;
  for (const auto& [id, rec] : by_object_)
    if (rec.task == task) out.push_back(rec);
  return out;
}

std::vector<ProvenanceRecord> ProvenanceStore::records_for_app(const std::string& app) const {
  std::vector<ProvenanceRecord> out;
  for (const auto& [id, rec] : by_object_)
    if (rec.app == app) out.push_back(rec);
  return out;
}

std::vector<ProvenanceRecord> ProvenanceStore::all() const {
  std::vector<ProvenanceRecord> out;
  out.reserve(by_object_.size());
  for (const auto& [id, rec] : by_object_) out.push_back(rec);
  return out;
}

json ProvenanceStore::graph(const std::string& object) const {
  if (!by_object_.count(object))
    fail(ErrorCode::not_found, "no provenance for object: " + object);
  std::map<std::string, std::string> nodes;  // id -> kind
  std::set<std::tuple<std::string, std::string, std::string>> edges;
  std::vector<std::string> queue{object};
  std::set<std::string> seen;
  while (!queue.empty()) {
    std::string obj = queue.back();
    queue.pop_back();
    if (!seen.insert(obj).second) continue;
    nodes.emplace(obj, "object");
    auto it = by_object_.find(obj);
    if (it == by_object_.end()) continue;  // imported data, no producer
    const auto& rec = it->second;
    nodes.emplace(rec.task, "task");
    edges.insert({obj, rec.task, "produced_by"});
    for (const auto& [slot, in_obj] : rec.inputs) {
      nodes.emplace(in_obj, "object");
      edges.insert({in_obj, rec.task, "input_to"});
      queue.push_back(in_obj);
    }
  }
  json jnodes = json::array();
  for (const auto& [id, kind] : nodes) jnodes.push_back({{"id", id}, {"kind", kind}});
  json jedges = json::array();
  for (const auto& [from, to, label] : edges)
    jedges.push_back({{"from", from}, {"to", to}, {"label", label}});
  return json{{"nodes", jnodes}, {"edges", jedges}};
}

std::string ProvenanceStore::graph_dot(const json& graph) {
  std::ostringstream out;
  out << "digraph provenance {\n";
  for (const auto& node : graph.at("nodes")) {
    out << "  \"" << node.at("id").get<std::string>() << "\"";
    if (node.at("kind").get<std::string>() == "task") out << " [shape=box]";
    out << ";\n";
  }
  for (const auto& edge : graph.at("edges")) {
    out << "  \"" << edge.at("from").get<std::string>() << "\" -> \""
        << edge.at("to").get<std::string>() << "\" [label=\""
        << edge.at("label").get<std::string>() << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

namespace {

std::string sq(const std::string& s) { return "'" + s + "'"; }

struct ReplayTask {
  std::string id;
  ProvenanceRecord rep;               // representative record (shared fields)
  std::set<std::string> dep_tasks;    // producer tasks this one waits for
};

}  // namespace

ReproducePlan ProvenanceStore::emit_reproduce_script(const std::string& object,
                                                     const fs::path& out_dir,
                                                     const warehouse::Warehouse& wh,
                                                     const apps::AppRegistry& registry) const {
  const ProvenanceRecord& target = get(object);

  std::map<std::string, ReplayTask> tasks;
  std::set<std::string> imported;
  std::vector<std::string> queue{target.task};
  while (!queue.empty()) {
    std::string task_id = queue.back();
    queue.pop_back();
    if (tasks.count(task_id)) continue;
    auto recs = records_for_task(task_id);
    if (recs.empty()) fail(ErrorCode::integrity, "no provenance records for task " + task_id);
    ReplayTask rt;
    rt.id = task_id;
    rt.rep = recs.front();
    for (const auto& [slot, in_obj] : rt.rep.inputs) {
      auto it = by_object_.find(in_obj);
      if (it == by_object_.end()) {
        imported.insert(in_obj);
      } else {
        rt.dep_tasks.insert(it->second.task);
        queue.push_back(it->second.task);
      }
    }
    tasks.emplace(task_id, std::move(rt));
  }

  // Execution order: producers before consumers, ties by task id.
  std::vector<std::string> order;
  std::map<std::string, int> pending;
  for (const auto& [id, rt] : tasks) pending[id] = static_cast<int>(rt.dep_tasks.size());
  while (order.size() < tasks.size()) {
    std::string picked;
    for (const auto& [id, n] : pending)
      if (n == 0 && !std::count(order.begin(), order.end(), id)) {
        picked = id;
        break;
      }
    if (picked.empty()) fail(ErrorCode::integrity, "provenance graph has a cycle");
    order.push_back(picked);
    pending[picked] = -1;
    for (auto& [id, rt] : tasks)
      if (rt.dep_tasks.count(picked)) --pending[id];
  }

  // Service copies, refused when the service changed since the run.
  fs::create_directories(out_dir);
  std::set<std::string> apps_done;
  for (const auto& task_id : order) {
    const auto& rt = tasks.at(task_id);
    if (!apps_done.insert(rt.rep.app).second) continue;
    const apps::App& app = registry.get_app(rt.rep.app);
    std::string current = digest::tree_digest(app.service_ref);
    if (!rt.rep.service_digest.empty() && current != rt.rep.service_digest)
      fail(ErrorCode::integrity,
           "service for app " + app.id + " has changed since task " + task_id + " ran");
    util::copy_tree(app.service_ref, out_dir / "services" / app.id);
  }

  std::ostringstream sh;
  sh << "#!/bin/sh\n"
     << "# replays the tasks that produced object " << object << "\n"
     << "set -eu\n"
     << "ROOT=$(CDPATH= cd -- \"$(dirname -- \"$0\")\" && pwd)\n"
     << "cd \"$ROOT\"\n\n";

  if (!imported.empty()) {
    sh << "# source data this pipeline started from; place each object's files\n"
       << "# under imported/<object id>/ before running\n";
    for (const auto& obj : imported) {
      const auto& meta = wh.get_object(obj);
      sh << "[ -d " << sq("imported/" + obj) << " ] || { echo " << sq("place object " + obj + " (" + meta.datatype + ") under imported/" + obj + "/")
         << " >&2; exit 1; }\n";
    }
    sh << "sha256sum -c <<'ORCHARD_SUM'\n";
    for (const auto& obj : imported) {
      auto entries = tar::read_archive(wh.object_archive_bytes(obj));
      for (const auto& entry : entries)
        sh << digest::sha256_hex(entry.data) << "  imported/" << obj << "/" << entry.path
           << "\n";
    }
    sh << "ORCHARD_SUM\n\n";
  }

  for (const auto& task_id : order) {
    const auto& rt = tasks.at(task_id);
    std::string dir = "tasks/" + task_id;
    sh << "echo " << sq("== task " + task_id + " (app " + rt.rep.app + ")") << "\n"
       << "rm -rf " << sq(dir) << "\n"
       << "mkdir -p " << sq(dir) << "\n"
       << "cp -R \"$ROOT/services/" << rt.rep.app << "/.\" " << sq(dir + "/") << "\n";
    for (const auto& [slot, in_obj] : rt.rep.inputs) {
      std::string src;
      auto it = by_object_.find(in_obj);
      if (it == by_object_.end())
        src = "$ROOT/imported/" + in_obj;
      else
        src = "$ROOT/tasks/" + it->second.task + "/outputs/" + it->second.output_slot;
      sh << "mkdir -p " << sq(dir + "/inputs/" + slot) << "\n"
         << "cp -R \"" << src << "/.\" " << sq(dir + "/inputs/" + slot + "/") << "\n";
    }
    if (rt.rep.config_text.empty() || rt.rep.config_text.back() != '\n' ||
        rt.rep.config_text.find("\nORCHARD_CONFIG\n") != std::string::npos)
      fail(ErrorCode::integrity, "recorded config for task " + task_id + " cannot be emitted");
    sh << "cat > " << sq(dir + "/config.json") << " <<'ORCHARD_CONFIG'\n"
       << rt.rep.config_text.substr(0, rt.rep.config_text.size() - 1) << "\n"
       << "ORCHARD_CONFIG\n"
       << "(\n"
       << "  cd " << sq(dir) << "\n"
       << "  sh ./start\n"
       << "  tries=0\n"
       << "  while :; do\n"
       << "    rc=0\n"
       << "    sh ./status || rc=$?\n"
       << "    case \"$rc\" in\n"
       << "      1) break ;;\n"
       << "      0) tries=$((tries+1))\n"
       << "         [ \"$tries\" -lt 600 ] || { echo 'timeout waiting for task " << task_id
       << "' >&2; exit 1; }\n"
       << "         sleep 1 ;;\n"
       << "      *) echo 'task " << task_id << " failed (status '\"$rc\"')' >&2; exit 1 ;;\n"
       << "    esac\n"
       << "  done\n"
       << ")\n\n";
  }

  sh << "echo " << sq("reproduced " + object + " at tasks/" + target.task + "/outputs/" +
                      target.output_slot + "/")
     << "\n";

  ReproducePlan plan;
  plan.script_path = out_dir / "reproduce.sh";
  plan.imported.assign(imported.begin(), imported.end());
  plan.tasks = order;
  util::atomic_write_file(plan.script_path, sh.str());
  fs::permissions(plan.script_path,
                  fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                      fs::perms::others_read | fs::perms::others_exec,
                  fs::perm_options::replace);
  return plan;
}

Publication& ProvenanceStore::create_publication(const std::string& project,
                                                 const std::string& name,
                                                 const std::vector<std::string>& objects,
                                                 const warehouse::Warehouse& wh) {
  if (!wh.has_project(project)) fail(ErrorCode::not_found, "no such project: " + project);
  if (name.empty()) fail(ErrorCode::validation, "publication name must not be empty");
  if (objects.empty()) fail(ErrorCode::validation, "publication needs at least one object");
  for (const auto& obj : objects) {
    const auto& meta = wh.get_object(obj);
    if (meta.project != project)
      fail(ErrorCode::validation,
           "object " + obj + " belongs to project " + meta.project + ", not " + project);
  }
  Publication pub;
  pub.id = "pub-" + std::to_string(next_pub_);
  pub.doi = "10.25663/sim.pub." + std::to_string(next_pub_);
  ++next_pub_;
  pub.project = project;
  pub.name = name;
  pub.objects = objects;
  pub.created_at = seq_.next();

  json entries = json::array();
  for (const auto& obj : objects) {
    const auto& meta = wh.get_object(obj);
    entries.push_back({{"id", meta.id},
                       {"datatype", meta.datatype},
                       {"subject", meta.subject},
                       {"session", meta.session},
                       {"content_hash", meta.content_hash}});
  }
  json manifest{{"id", pub.id},       {"doi", pub.doi},
                {"project", project}, {"name", name},
                {"objects", entries}, {"created_at", pub.created_at}};
  fs::create_directories(root_ / "publications" / pub.id);
  util::atomic_write_file(root_ / "publications" / pub.id / "manifest.json",
                          manifest.dump(2) + "\n");

  auto [it, inserted] = publications_.emplace(pub.id, std::move(pub));
  json items = json::array();
  for (const auto& [id, p] : publications_) items.push_back(p);
  util::atomic_write_file(root_ / "publications.json",
                          json{{"next_pub", next_pub_}, {"publications", items}}.dump(2) + "\n");
  return it->second;
}

const Publication& ProvenanceStore::get_publication(const std::string& id) const {
  auto it = publications_.find(id);
  if (it == publications_.end()) fail(ErrorCode::not_found, "no such publication: " + id);
  return it->second;
}

std::vector<Publication> ProvenanceStore::list_publications() const {
  std::vector<Publication> out;
  for (const auto& [id, p] : publications_) out.push_back(p);
  return out;
}

}  // namespace orchard::prov
