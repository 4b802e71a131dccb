#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/apps.hpp"
#include "orchard/pipeline.hpp"
#include "orchard/provenance.hpp"
#include "orchard/resources.hpp"
#include "orchard/scheduler.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::platform {

struct PlatformConfig {
  std::filesystem::path store_root;
  std::string bucket = "warehouse";
  bool rule2_per_dependency = true;
  int queue_penalty_divisor = 0;
  int status_unknown_limit = 10;
  std::uint64_t rng_seed = 1;
  std::string placement = "scored";  // or "round_robin"
};

// Reads <store_root>/config.json when present and overlays it on the
// defaults; the store_root itself always comes from the caller.
PlatformConfig load_config(const std::filesystem::path& store_root);

// One store directory wired end to end.
class Platform {
 public:
  explicit Platform(PlatformConfig cfg);

  const PlatformConfig& config() const { return cfg_; }
  std::filesystem::path root() const { return cfg_.store_root; }

  Sequence seq;
  warehouse::Warehouse wh;
  apps::AppRegistry apps;
  resources::ResourceBroker broker;
  prov::ProvenanceStore provenance;
  sched::Scheduler sched;
  pipeline::PipelineEngine pipeline;

 private:
  PlatformConfig cfg_;
};

struct ScenarioResource {
  std::string name;
  std::string kind = "shared";
  std::string owner;
  int latency_ticks = 2;
  double failure_rate = 0.0;
  int default_score = 10;
};

// A self-contained benchmark: per subject, a chain of synthetic apps is
// submitted up front with deferred bindings and run to completion.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::string placement = "scored";
  int max_ticks = 10000;
  int subjects = 10;
  int chain_length = 3;
  bool feature_final = false;  // last app emits a feature table
  bool rule2_per_dependency = true;
  int queue_penalty_divisor = 0;
  std::vector<ScenarioResource> resources;
};

struct ScenarioMetrics {
  int submitted = 0;
  int finished = 0;
  int failed = 0;
  double success_rate = 1.0;  // finished over terminal tasks
  std::int64_t transfers_total = 0;
  std::int64_t transfers_after_first_stage = 0;
  int ticks = 0;
  std::map<std::string, int> tasks_per_resource;
  std::map<std::string, int> failure_reasons;
};

Scenario scenario_from_json(const nlohmann::json& doc);
ScenarioMetrics run_scenario(Platform& platform, const Scenario& scenario);
nlohmann::json metrics_json(const ScenarioMetrics& m);

}  // namespace orchard::platform
