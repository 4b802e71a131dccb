#include "orchard/warehouse.hpp"

#include <algorithm>
#include <sstream>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/tar.hpp"
#include "orchard/util.hpp"

namespace orchard::warehouse {

using nlohmann::json;

void to_json(json& j, const Project& p) {
  j = json{{"id", p.id},
           {"name", p.name},
           {"owner", p.owner},
           {"admins", p.admins},
           {"members", p.members},
           {"visibility", p.visibility == Visibility::kPublic ? "public" : "private"},
           {"avoid_public_resources", p.avoid_public_resources},
           {"created_at", p.created_at}};
  if (p.dua_text) j["dua_text"] = *p.dua_text;
}

void from_json(const json& j, Project& p) {
  j.at("id").get_to(p.id);
  j.at("name").get_to(p.name);
  j.at("owner").get_to(p.owner);
  j.at("admins").get_to(p.admins);
  j.at("members").get_to(p.members);
  p.visibility = j.at("visibility").get<std::string>() == "public"
                     ? Visibility::kPublic
                     : Visibility::kPrivate;
  j.at("avoid_public_resources").get_to(p.avoid_public_resources);
  j.at("created_at").get_to(p.created_at);
  if (j.contains("dua_text")) p.dua_text = j.at("dua_text").get<std::string>();
}

void to_json(json& j, const FileSpecEntry& e) {
  j = json{{"pattern", e.pattern}, {"required", e.required}};
}

void from_json(const json& j, FileSpecEntry& e) {
  j.at("pattern").get_to(e.pattern);
  e.required = j.value("required", true);
}

void to_json(json& j, const FeatureColumns& f) {
  j = json{{"path", f.path_pattern},
           {"structure", f.structure_column},
           {"measure", f.measure_column},
           {"value", f.value_column}};
}

void from_json(const json& j, FeatureColumns& f) {
  f.path_pattern = j.value("path", f.path_pattern);
  f.structure_column = j.value("structure", f.structure_column);
  f.measure_column = j.value("measure", f.measure_column);
  f.value_column = j.value("value", f.value_column);
}

void to_json(json& j, const Datatype& d) {
  j = json{{"name", d.name},
           {"file_spec", d.file_spec},
           {"is_statistical_feature", d.is_statistical_feature},
           {"bids_compatible", d.bids_compatible}};
  if (d.feature_columns) j["feature_columns"] = *d.feature_columns;
}

void from_json(const json& j, Datatype& d) {
  j.at("name").get_to(d.name);
  j.at("file_spec").get_to(d.file_spec);
  d.is_statistical_feature = j.value("is_statistical_feature", false);
  d.bids_compatible = j.value("bids_compatible", false);
  if (j.contains("feature_columns"))
    d.feature_columns = j.at("feature_columns").get<FeatureColumns>();
}

void to_json(json& j, const DataObject& o) {
  j = json{{"id", o.id},
           {"project", o.project},
           {"datatype", o.datatype},
           {"datatype_tags", o.datatype_tags},
           {"tags", o.tags},
           {"subject", o.subject},
           {"archive_path", o.archive_path},
           {"content_hash", o.content_hash},
           {"created_at", o.created_at}};
  if (!o.session.empty()) j["session"] = o.session;
  if (!o.provenance_task.empty()) j["provenance_task"] = o.provenance_task;
}

void from_json(const json& j, DataObject& o) {
  j.at("id").get_to(o.id);
  j.at("project").get_to(o.project);
  j.at("datatype").get_to(o.datatype);
  j.at("datatype_tags").get_to(o.datatype_tags);
  j.at("tags").get_to(o.tags);
  j.at("subject").get_to(o.subject);
  j.at("archive_path").get_to(o.archive_path);
  j.at("content_hash").get_to(o.content_hash);
  j.at("created_at").get_to(o.created_at);
  o.session = j.value("session", "");
  o.provenance_task = j.value("provenance_task", "");
}

void to_json(json& j, const ValidationResult& v) {
  j = json{{"ok", v.ok}, {"violations", v.violations}, {"warnings", v.warnings}};
}

namespace {

std::uint64_t id_counter_floor(const std::string& id) {
  // ids look like "<prefix><zero padded number>"; recover the number
  std::size_t pos = id.find_first_of("0123456789");
  if (pos == std::string::npos) return 0;
  return std::strtoull(id.c_str() + pos, nullptr, 10);
}

void require_user(const std::string& user) {
  if (user.empty()) fail(ErrorCode::validation, "user id must be non-empty");
}

}  // namespace

Warehouse::Warehouse(fs::path root, std::string bucket, Sequence& seq)
    : root_(std::move(root)), bucket_(std::move(bucket)), seq_(seq) {
  if (bucket_.empty() || bucket_.find('/') != std::string::npos)
    fail(ErrorCode::validation, "bucket name must be a single path component");
  fs::create_directories(root_ / bucket_);
  load();
}

void Warehouse::load() {
  if (auto text = util::read_file_if_exists(root_ / "projects.json")) {
    for (const auto& j : json::parse(*text)) {
      Project p = j.get<Project>();
      next_project_ = std::max(next_project_, id_counter_floor(p.id) + 1);
      seq_.bump(p.created_at);
      projects_.emplace(p.id, std::move(p));
    }
  }
  if (auto text = util::read_file_if_exists(root_ / "datatypes.json")) {
    for (const auto& j : json::parse(*text)) {
      Datatype d = j.get<Datatype>();
      datatypes_.emplace(d.name, std::move(d));
    }
  }
  std::error_code ec;
  for (const auto& dir : fs::directory_iterator(root_ / bucket_, ec)) {
    if (!dir.is_directory()) continue;
    auto index = dir.path() / "index.jsonl";
    auto text = util::read_file_if_exists(index);
    if (!text) continue;
    std::istringstream lines(*text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;  // tolerate a torn trailing line
      DataObject o = j.get<DataObject>();
      next_object_ = std::max(next_object_, id_counter_floor(o.id) + 1);
      seq_.bump(o.created_at);
      objects_.emplace(o.id, std::move(o));
    }
  }
}

void Warehouse::save_projects() const {
  json j = json::array();
  for (const auto& [_, p] : projects_) j.push_back(p);
  util::atomic_write_file(root_ / "projects.json", j.dump(2) + "\n");
}

void Warehouse::save_datatypes() const {
  json j = json::array();
  for (const auto& [_, d] : datatypes_) j.push_back(d);
  util::atomic_write_file(root_ / "datatypes.json", j.dump(2) + "\n");
}

Project Warehouse::create_project(const std::string& owner, const std::string& name,
                                  bool avoid_public_resources,
                                  std::optional<std::string> dua_text) {
  require_user(owner);
  if (name.empty()) fail(ErrorCode::validation, "project name must be non-empty");
  Project p;
  p.id = util::make_id("p", next_project_++);
  p.name = name;
  p.owner = owner;
  p.admins.insert(owner);
  p.members.insert(owner);
  p.visibility = Visibility::kPrivate;
  p.avoid_public_resources = avoid_public_resources;
  p.dua_text = std::move(dua_text);
  p.created_at = seq_.next();
  auto [it, _] = projects_.emplace(p.id, p);
  save_projects();
  return it->second;
}

const Project& Warehouse::get_project(const std::string& id) const {
  auto it = projects_.find(id);
  if (it == projects_.end()) fail(ErrorCode::not_found, "unknown project: " + id);
  return it->second;
}

std::vector<Project> Warehouse::list_projects() const {
  std::vector<Project> out;
  for (const auto& [_, p] : projects_) out.push_back(p);
  return out;
}

void Warehouse::set_visibility(const std::string& id, Visibility v) {
  auto it = projects_.find(id);
  if (it == projects_.end()) fail(ErrorCode::not_found, "unknown project: " + id);
  it->second.visibility = v;
  save_projects();
}

void Warehouse::set_avoid_public_resources(const std::string& id, bool flag) {
  auto it = projects_.find(id);
  if (it == projects_.end()) fail(ErrorCode::not_found, "unknown project: " + id);
  it->second.avoid_public_resources = flag;
  save_projects();
}

Datatype Warehouse::register_datatype(Datatype def) {
  if (def.name.empty()) fail(ErrorCode::validation, "datatype name must be non-empty");
  if (datatypes_.count(def.name))
    fail(ErrorCode::conflict, "datatype already registered: " + def.name);
  if (def.file_spec.empty())
    fail(ErrorCode::validation, "datatype file spec must be non-empty");
  bool any_required = std::any_of(def.file_spec.begin(), def.file_spec.end(),
                                  [](const FileSpecEntry& e) { return e.required; });
  if (!any_required)
    fail(ErrorCode::validation, "datatype file spec needs at least one required entry");
  if (def.is_statistical_feature && !def.feature_columns)
    def.feature_columns = FeatureColumns{};
  auto [it, _] = datatypes_.emplace(def.name, std::move(def));
  save_datatypes();
  return it->second;
}

const Datatype& Warehouse::get_datatype(const std::string& name) const {
  auto it = datatypes_.find(name);
  if (it == datatypes_.end()) fail(ErrorCode::not_found, "unknown datatype: " + name);
  return it->second;
}

std::vector<Datatype> Warehouse::list_datatypes() const {
  std::vector<Datatype> out;
  for (const auto& [_, d] : datatypes_) out.push_back(d);
  return out;
}

ValidationResult Warehouse::validate_object(const fs::path& files,
                                            const Datatype& datatype) const {
  ValidationResult result;
  auto present = util::list_files(files);
  std::set<std::string> matched;
  for (const auto& entry : datatype.file_spec) {
    bool hit = false;
    for (const auto& f : present) {
      if (util::glob_match(entry.pattern, f)) {
        hit = true;
        matched.insert(f);
      }
    }
    if (!hit && entry.required)
      result.violations.push_back(entry.pattern + " missing");
  }
  for (const auto& f : present) {
    if (!matched.count(f))
      result.warnings.push_back("unmatched extra file: " + f);
  }
  result.ok = result.violations.empty();
  return result;
}

DataObject Warehouse::archive_object(const ArchiveRequest& req) {
  const Project& project = get_project(req.project);
  const Datatype& datatype = get_datatype(req.datatype);
  auto validation = validate_object(req.files, datatype);
  if (!validation.ok)
    fail(ErrorCode::validation,
         "datatype validation failed: " + util::join(validation.violations, "; "));

  DataObject obj;
  obj.id = util::make_id("d", next_object_++);
  obj.project = project.id;
  obj.datatype = datatype.name;
  obj.datatype_tags = req.datatype_tags;
  obj.tags = req.tags;
  obj.subject = req.subject;
  obj.session = req.session;
  obj.provenance_task = req.provenance_task;
  obj.archive_path = bucket_ + "/" + project.id + "/" + obj.id + ".tar";
  obj.created_at = seq_.next();

  std::string bytes = tar::archive_tree(req.files);
  obj.content_hash = digest::sha256_hex(bytes);
  util::atomic_write_file(root_ / obj.archive_path, bytes);
  util::append_line(root_ / bucket_ / project.id / "index.jsonl", json(obj).dump());
  auto [it, _] = objects_.emplace(obj.id, std::move(obj));
  return it->second;
}

std::vector<DataObject> Warehouse::query_objects(const std::string& project,
                                                 const QueryFilter& filter) const {
  get_project(project);
  std::vector<DataObject> out;
  for (const auto& [_, o] : objects_) {
    if (o.project != project) continue;
    if (filter.datatype && o.datatype != *filter.datatype) continue;
    if (filter.subject && o.subject != *filter.subject) continue;
    if (!util::is_subset(filter.include_tags, o.tags)) continue;
    if (util::intersects(filter.exclude_tags, o.tags)) continue;
    out.push_back(o);
  }
  std::sort(out.begin(), out.end(), [](const DataObject& a, const DataObject& b) {
    return a.created_at != b.created_at ? a.created_at > b.created_at : a.id > b.id;
  });
  return out;
}

const DataObject& Warehouse::get_object(const std::string& id) const {
  auto it = objects_.find(id);
  if (it == objects_.end()) fail(ErrorCode::not_found, "unknown object: " + id);
  return it->second;
}

std::string Warehouse::object_archive_bytes(const std::string& id) const {
  const DataObject& obj = get_object(id);
  std::string bytes = util::read_file(root_ / obj.archive_path);
  if (digest::sha256_hex(bytes) != obj.content_hash)
    fail(ErrorCode::integrity, "content hash mismatch for object " + id);
  return bytes;
}

void Warehouse::fetch_object(const std::string& id, const fs::path& dest) const {
  tar::extract_archive(object_archive_bytes(id), dest);
}

}  // namespace orchard::warehouse
