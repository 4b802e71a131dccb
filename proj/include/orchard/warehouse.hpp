#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace orchard {

// Monotonic event sequence shared by every store; doubles as the logical
// creation timestamp so replays order identically.
class Sequence {
 public:
  std::uint64_t next() { return ++value_; }
  void bump(std::uint64_t seen) {
    std::uint64_t cur = value_.load();
    while (seen > cur && !value_.compare_exchange_weak(cur, seen)) {
    }
  }
  std::uint64_t current() const { return value_.load(); }

 private:
  std::atomic<std::uint64_t> value_{0};
};

namespace warehouse {

namespace fs = std::filesystem;

enum class Visibility { kPrivate, kPublic };

struct Project {
  std::string id;
  std::string name;
  std::string owner;
  std::set<std::string> admins;
  std::set<std::string> members;
  Visibility visibility = Visibility::kPrivate;
  bool avoid_public_resources = false;
  std::optional<std::string> dua_text;
  std::uint64_t created_at = 0;
};

struct FileSpecEntry {
  std::string pattern;  // relative path glob ('*' within a segment)
  bool required = true;
};

// How statistical-feature payloads map onto the tidy row schema.
struct FeatureColumns {
  std::string path_pattern = "features.tsv";
  std::string structure_column = "structure";
  std::string measure_column = "measure";
  std::string value_column = "value";
};

struct Datatype {
  std::string name;  // namespaced, e.g. "sample/stats"
  std::vector<FileSpecEntry> file_spec;
  bool is_statistical_feature = false;
  bool bids_compatible = false;
  std::optional<FeatureColumns> feature_columns;
};

struct DataObject {
  std::string id;
  std::string project;
  std::string datatype;
  std::vector<std::string> datatype_tags;
  std::vector<std::string> tags;
  std::string subject;
  std::string session;
  std::string archive_path;  // "<bucket>/<projectID>/<objectID>.tar"
  std::string content_hash;  // sha256 of the tar bytes
  std::string provenance_task;
  std::uint64_t created_at = 0;
};

struct ValidationResult {
  bool ok = false;
  std::vector<std::string> violations;
  std::vector<std::string> warnings;
};

struct ArchiveRequest {
  std::string project;
  std::string datatype;
  fs::path files;  // staged file tree
  std::vector<std::string> datatype_tags;
  std::vector<std::string> tags;
  std::string subject;
  std::string session;
  std::string provenance_task;
};

struct QueryFilter {
  std::optional<std::string> datatype;
  std::vector<std::string> include_tags;
  std::vector<std::string> exclude_tags;
  std::optional<std::string> subject;
};

// File-backed store for projects, datatype definitions and archived data
// objects. Layout under the store root:
//
//   datatypes.json
//   projects.json
//   <bucket>/<projectID>/<objectID>.tar
//   <bucket>/<projectID>/index.jsonl     one DataObject record per line
//
// An object becomes visible only after both its tar and its index line are
// committed; tar writes go through write-then-rename.
class Warehouse {
 public:
  Warehouse(fs::path root, std::string bucket, Sequence& seq);

  // projects
  Project create_project(const std::string& owner, const std::string& name,
                         bool avoid_public_resources = false,
                         std::optional<std::string> dua_text = std::nullopt);
  const Project& get_project(const std::string& id) const;
  bool has_project(const std::string& id) const { return projects_.count(id) > 0; }
  std::vector<Project> list_projects() const;
  void set_visibility(const std::string& id, Visibility v);
  void set_avoid_public_resources(const std::string& id, bool flag);

  // datatypes
  Datatype register_datatype(Datatype def);
  const Datatype& get_datatype(const std::string& name) const;
  bool has_datatype(const std::string& name) const { return datatypes_.count(name) > 0; }
  std::vector<Datatype> list_datatypes() const;

  // objects
  ValidationResult validate_object(const fs::path& files,
                                   const Datatype& datatype) const;
  DataObject archive_object(const ArchiveRequest& req);
  std::vector<DataObject> query_objects(const std::string& project,
                                        const QueryFilter& filter = {}) const;
  const DataObject& get_object(const std::string& id) const;
  bool has_object(const std::string& id) const { return objects_.count(id) > 0; }
  // Verifies the stored hash, then extracts into dest.
  void fetch_object(const std::string& id, const fs::path& dest) const;
  // Raw verified archive bytes.
  std::string object_archive_bytes(const std::string& id) const;

  const std::string& bucket() const { return bucket_; }
  const fs::path& root() const { return root_; }
  fs::path archive_file(const DataObject& obj) const { return root_ / obj.archive_path; }

 private:
  void load();
  void save_projects() const;
  void save_datatypes() const;

  fs::path root_;
  std::string bucket_;
  Sequence& seq_;
  std::map<std::string, Project> projects_;
  std::map<std::string, Datatype> datatypes_;
  std::map<std::string, DataObject> objects_;
  std::uint64_t next_project_ = 1;
  std::uint64_t next_object_ = 1;
};

}  // namespace warehouse
}  // namespace orchard
