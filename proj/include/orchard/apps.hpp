#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "orchard/warehouse.hpp"

namespace orchard::apps {

namespace fs = std::filesystem;

struct Slot {
  std::string slot_id;
  std::string datatype;
  // For input slots: tags a candidate object's datatype_tags must contain.
  std::vector<std::string> required_datatype_tags;
  // For output slots: datatype_tags stamped onto produced objects.
  std::vector<std::string> datatype_tags;
  bool optional = false;
};

struct ConfigField {
  std::string key;
  std::string type;  // "string" | "number" | "integer" | "boolean"
  std::optional<std::string> default_value;  // JSON-encoded
};

struct App {
  std::string id;
  std::string name;
  std::string service_ref;  // local service source directory
  std::string version;
  std::vector<Slot> input_slots;
  std::vector<Slot> output_slots;
  std::vector<ConfigField> config_schema;
  std::string doi;
  std::uint64_t created_at = 0;
};

enum class DockingVerdict { kAccepted, kRejected, kAmbiguous };

struct DockingResult {
  DockingVerdict verdict = DockingVerdict::kRejected;
  std::map<std::string, std::string> bindings;  // slot_id -> object id
  std::vector<std::string> reasons;
};

const char* verdict_name(DockingVerdict v);

// Registered ABCD services with typed slots. Persisted as apps.json.
class AppRegistry {
 public:
  AppRegistry(fs::path root, const warehouse::Warehouse& wh, Sequence& seq);

  // Registers from an in-memory descriptor; slots must reference known
  // datatypes and service_ref must exist on disk. DOI minting is local.
  App register_app(App descriptor);
  // Reads `app.json` from the service source root.
  App register_from_dir(const fs::path& service_dir);

  const App& get_app(const std::string& id) const;
  bool has_app(const std::string& id) const { return apps_.count(id) > 0; }
  std::vector<App> list_apps() const;

  DockingResult check_docking(const App& app,
                              const std::vector<warehouse::DataObject>& staged) const;
  std::vector<App> compatible_apps(
      const std::vector<warehouse::DataObject>& staged) const;

  // Copies the service source into work_dir and verifies the three
  // executable hooks (start/status/stop) are present.
  void resolve_service(const App& app, const fs::path& work_dir) const;

 private:
  void load();
  void save() const;

  fs::path root_;
  const warehouse::Warehouse& warehouse_;
  Sequence& seq_;
  std::map<std::string, App> apps_;
  std::uint64_t next_app_ = 1;
  std::uint64_t next_doi_ = 1;
};

}  // namespace orchard::apps
