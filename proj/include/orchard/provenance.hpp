#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/apps.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::prov {

// One record per archived output object, written when its producing task
// finalizes. config_text holds the exact config.json bytes the task ran
// with, so a replay can restage them unchanged.
struct ProvenanceRecord {
  std::string object;
  std::string output_slot;
  std::string task;
  std::string instance;
  std::string project;
  std::string app;
  std::string app_version;
  std::string service_digest;
  std::string config_text;
  std::map<std::string, std::string> inputs;  // input slot -> object id
  std::string resource;
  std::int64_t created_at = 0;
};

struct Publication {
  std::string id;
  std::string doi;
  std::string project;
  std::string name;
  std::vector<std::string> objects;
  std::int64_t created_at = 0;
};

struct ReproducePlan {
  std::filesystem::path script_path;
  std::vector<std::string> imported;  // objects the caller must place by hand
  std::vector<std::string> tasks;     // replayed tasks in execution order
};

class ProvenanceStore {
 public:
  ProvenanceStore(std::filesystem::path root, Sequence& seq);

  void record(ProvenanceRecord rec);
  bool has(const std::string& object) const;
  const ProvenanceRecord& get(const std::string& object) const;
  std::vector<ProvenanceRecord> records_for_task(const std::string& task) const;
  std::vector<ProvenanceRecord> records_for_app(const std::string& app) const;
  std::vector<ProvenanceRecord> all() const;

  // Ancestry graph of an object: object and task nodes, with edges from
  // each object to the task that produced it (produced_by) and to each
  // task that consumed it (input_to).
  nlohmann::json graph(const std::string& object) const;
  static std::string graph_dot(const nlohmann::json& graph);

  // Writes <out_dir>/reproduce.sh plus the service copies it runs. The
  // script rebuilds the object's ancestry with the real hooks; objects
  // without provenance must be placed under imported/<id>/ first and are
  // checksum-verified before anything runs.
  ReproducePlan emit_reproduce_script(const std::string& object,
                                      const std::filesystem::path& out_dir,
                                      const warehouse::Warehouse& wh,
                                      const apps::AppRegistry& registry) const;

  Publication& create_publication(const std::string& project, const std::string& name,
                                  const std::vector<std::string>& objects,
                                  const warehouse::Warehouse& wh);
  const Publication& get_publication(const std::string& id) const;
  std::vector<Publication> list_publications() const;

 private:
  void load();

  std::filesystem::path root_;
  Sequence& seq_;
  std::map<std::string, ProvenanceRecord> by_object_;
  std::map<std::string, Publication> publications_;
  std::uint64_t next_pub_ = 1;
};

void to_json(nlohmann::json& j, const ProvenanceRecord& r);
void from_json(const nlohmann::json& j, ProvenanceRecord& r);
void to_json(nlohmann::json& j, const Publication& p);
void from_json(const nlohmann::json& j, Publication& p);

}  // namespace orchard::prov
