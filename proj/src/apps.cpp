#include "orchard/apps.hpp"

#include <algorithm>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/util.hpp"

namespace orchard::apps {

using nlohmann::json;

const char* verdict_name(DockingVerdict v) {
  switch (v) {
    case DockingVerdict::kAccepted: return "accepted";
    case DockingVerdict::kRejected: return "rejected";
    case DockingVerdict::kAmbiguous: return "ambiguous";
  }
  return "unknown";
}

void to_json(json& j, const Slot& s) {
  j = json{{"id", s.slot_id},
           {"datatype", s.datatype},
           {"required_datatype_tags", s.required_datatype_tags},
           {"datatype_tags", s.datatype_tags},
           {"optional", s.optional}};
}

void from_json(const json& j, Slot& s) {
  j.at("id").get_to(s.slot_id);
  j.at("datatype").get_to(s.datatype);
  if (j.contains("required_datatype_tags"))
    j.at("required_datatype_tags").get_to(s.required_datatype_tags);
  if (j.contains("datatype_tags")) j.at("datatype_tags").get_to(s.datatype_tags);
  s.optional = j.value("optional", false);
}

void to_json(json& j, const ConfigField& f) {
  j = json{{"key", f.key}, {"type", f.type}};
  if (f.default_value) j["default"] = json::parse(*f.default_value);
}

void from_json(const json& j, ConfigField& f) {
  j.at("key").get_to(f.key);
  f.type = j.value("type", "string");
  if (j.contains("default")) f.default_value = j.at("default").dump();
}

void to_json(json& j, const App& a) {
  j = json{{"id", a.id},
           {"name", a.name},
           {"service_ref", a.service_ref},
           {"version", a.version},
           {"inputs", a.input_slots},
           {"outputs", a.output_slots},
           {"config", a.config_schema},
           {"doi", a.doi},
           {"created_at", a.created_at}};
}

void from_json(const json& j, App& a) {
  if (j.contains("id")) j.at("id").get_to(a.id);
  j.at("name").get_to(a.name);
  if (j.contains("service_ref")) j.at("service_ref").get_to(a.service_ref);
  a.version = j.value("version", "1.0");
  if (j.contains("inputs")) j.at("inputs").get_to(a.input_slots);
  if (j.contains("outputs")) j.at("outputs").get_to(a.output_slots);
  if (j.contains("config")) j.at("config").get_to(a.config_schema);
  if (j.contains("doi")) j.at("doi").get_to(a.doi);
  if (j.contains("created_at")) j.at("created_at").get_to(a.created_at);
}

void to_json(json& j, const DockingResult& r) {
  const char* verdict = r.verdict == DockingVerdict::kAccepted    ? "accepted"
                        : r.verdict == DockingVerdict::kRejected ? "rejected"
                                                                 : "ambiguous";
  j = json{{"verdict", verdict}, {"bindings", r.bindings}, {"reasons", r.reasons}};
}

AppRegistry::AppRegistry(fs::path root, const warehouse::Warehouse& wh, Sequence& seq)
    : root_(std::move(root)), warehouse_(wh), seq_(seq) {
  load();
}

void AppRegistry::load() {
  auto text = util::read_file_if_exists(root_ / "apps.json");
  if (!text) return;
  json j = json::parse(*text);
  next_doi_ = j.value("next_doi", 1);
  next_app_ = j.value("next_app", 1);
  for (const auto& e : j.at("apps")) {
    App a = e.get<App>();
    apps_.emplace(a.id, std::move(a));
  }
}

void AppRegistry::save() const {
  json arr = json::array();
  for (const auto& [_, a] : apps_) arr.push_back(a);
  json j{{"next_doi", next_doi_}, {"next_app", next_app_}, {"apps", arr}};
  util::atomic_write_file(root_ / "apps.json", j.dump(2) + "\n");
}

App AppRegistry::register_app(App descriptor) {
  if (descriptor.name.empty())
    fail(ErrorCode::validation, "app name must be non-empty");
  std::set<std::string> seen;
  auto check_slots = [&](const std::vector<Slot>& slots, const char* kind) {
    for (const auto& s : slots) {
      if (s.slot_id.empty())
        fail(ErrorCode::validation, std::string(kind) + " slot id must be non-empty");
      if (!seen.insert(s.slot_id).second)
        fail(ErrorCode::validation, "duplicate slot id: " + s.slot_id);
      if (!warehouse_.has_datatype(s.datatype))
        fail(ErrorCode::validation,
             "slot " + s.slot_id + " references unknown datatype: " + s.datatype);
    }
  };
  check_slots(descriptor.input_slots, "input");
  seen.clear();
  check_slots(descriptor.output_slots, "output");
  if (descriptor.service_ref.empty() || !fs::is_directory(descriptor.service_ref))
    fail(ErrorCode::source, "service_ref not resolvable: " + descriptor.service_ref);
  if (descriptor.version.empty()) descriptor.version = "1.0";

  descriptor.id = util::make_id("a", next_app_++);
  descriptor.doi = "10.25663/sim.app." + std::to_string(next_doi_++);
  descriptor.created_at = seq_.next();
  auto [it, _] = apps_.emplace(descriptor.id, std::move(descriptor));
  save();
  return it->second;
}

App AppRegistry::register_from_dir(const fs::path& service_dir) {
  auto text = util::read_file_if_exists(service_dir / "app.json");
  if (!text)
    fail(ErrorCode::source, "no app.json in service dir: " + service_dir.string());
  App a = json::parse(*text).get<App>();
  a.service_ref = service_dir.string();
  return register_app(std::move(a));
}

const App& AppRegistry::get_app(const std::string& id) const {
  auto it = apps_.find(id);
  if (it == apps_.end()) fail(ErrorCode::not_found, "unknown app: " + id);
  return it->second;
}

std::vector<App> AppRegistry::list_apps() const {
  std::vector<App> out;
  for (const auto& [_, a] : apps_) out.push_back(a);
  return out;
}

DockingResult AppRegistry::check_docking(
    const App& app, const std::vector<warehouse::DataObject>& staged) const {
  // deterministic regardless of the staged order handed in
  std::vector<const warehouse::DataObject*> objects;
  objects.reserve(staged.size());
  for (const auto& o : staged) objects.push_back(&o);
  std::sort(objects.begin(), objects.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });

  DockingResult result;
  bool ambiguous = false;
  bool rejected = false;
  for (const auto& slot : app.input_slots) {
    std::vector<const warehouse::DataObject*> matches;
    for (const auto* o : objects) {
      if (o->datatype != slot.datatype) continue;
      if (!util::is_subset(slot.required_datatype_tags, o->datatype_tags)) continue;
      matches.push_back(o);
    }
    if (matches.size() == 1) {
      result.bindings[slot.slot_id] = matches.front()->id;
    } else if (matches.empty()) {
      if (!slot.optional) {
        rejected = true;
        result.reasons.push_back("slot " + slot.slot_id + ": no compatible object");
      }
    } else {
      ambiguous = true;
      std::vector<std::string> ids;
      for (const auto* m : matches) ids.push_back(m->id);
      result.reasons.push_back("slot " + slot.slot_id + ": " +
                               std::to_string(matches.size()) +
                               " candidates (" + util::join(ids, ", ") + ")");
    }
  }
  result.verdict = rejected     ? DockingVerdict::kRejected
                   : ambiguous  ? DockingVerdict::kAmbiguous
                                : DockingVerdict::kAccepted;
  return result;
}

std::vector<App> AppRegistry::compatible_apps(
    const std::vector<warehouse::DataObject>& staged) const {
  std::vector<App> out;
  for (const auto& [_, a] : apps_) {
    if (check_docking(a, staged).verdict != DockingVerdict::kRejected)
      out.push_back(a);
  }
  return out;
}

void AppRegistry::resolve_service(const App& app, const fs::path& work_dir) const {
  if (!fs::is_directory(app.service_ref))
    fail(ErrorCode::source, "service_ref not resolvable: " + app.service_ref);
  util::copy_tree(app.service_ref, work_dir);
  for (const char* hook : {"start", "status", "stop"}) {
    auto path = work_dir / hook;
    if (!fs::is_regular_file(path))
      fail(ErrorCode::contract, std::string(hook) + " missing");
    auto perms = fs::status(path).permissions();
    if ((perms & fs::perms::owner_exec) == fs::perms::none)
      fail(ErrorCode::contract, std::string(hook) + " not executable");
  }
}

}  // namespace orchard::apps
