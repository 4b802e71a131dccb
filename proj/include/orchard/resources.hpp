#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "orchard/apps.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::resources {

enum class ResourceKind { kPublic, kShared, kPrivate };
enum class ResourceStatus { kOk, kDown };

std::string to_string(ResourceKind k);
ResourceKind resource_kind_from_string(const std::string& s);
std::string to_string(ResourceStatus s);
ResourceStatus resource_status_from_string(const std::string& s);

// Execution profile used when a resource is backed by the simulator rather
// than by forked hook processes.
struct SimProfile {
  int latency_ticks = 2;       // polls before a started job reports finished
  double failure_rate = 0.0;   // probability a job fails instead of finishing
};

struct Resource {
  std::string id;
  std::string name;
  ResourceKind kind = ResourceKind::kShared;
  std::string owner;
  // app id -> default score granted by rule 2 when the app runs here.
  std::map<std::string, int> enabled_services;
  ResourceStatus status = ResourceStatus::kOk;
  std::string geolocation;
  int queue_length = 0;
  std::string backend_kind = "sim";  // "sim" or "process"
  SimProfile sim;
  std::int64_t created_at = 0;
};

struct ScoreBreakdown {
  bool disqualified = false;
  std::string reason;  // not_enabled | avoid_public | down
  int base = 0;
  int dep_bonus = 0;
  int exclusive_bonus = 0;
  int preferred_bonus = 0;
  int queue_penalty = 0;  // subtracted from total when the rule is enabled
  int total = 0;
};

// Residency of one dependency's outputs: the resources on which every output
// of that dependency is already present.
struct DepResidency {
  std::string task_id;
  std::set<std::string> resident_on;
};

struct ScoringContext {
  std::string submitting_user;
  bool avoid_public = false;
  std::optional<std::string> preferred_resource;
  std::vector<DepResidency> deps;
};

struct Selection {
  std::string resource_id;
  std::string report;
  std::vector<std::pair<std::string, ScoreBreakdown>> breakdowns;
};

// Scores resources for app placement and picks where each task runs.
//
// Scoring rules, applied in order:
//   1. disqualify when the app is not enabled here (not_enabled), when the
//      submitting project avoids public resources and this resource is
//      public (avoid_public), or when the resource is down (down)
//   2. base = the default score the resource grants the app
//   3. +5 per dependency whose outputs are all resident here
//      (a single +5 for any resident dependency in flat mode)
//   4. +10 when the resource is private and owned by the submitting user
//   5. +15 when the resource is the task's preferred resource
//   6. optional: -(queue_length / queue_penalty_divisor)
// Highest total wins; ties break to the lexicographically smallest id.
class ResourceBroker {
 public:
  ResourceBroker(std::filesystem::path root, const apps::AppRegistry& registry, Sequence& seq);

  Resource& register_resource(Resource spec);
  void enable_service(const std::string& resource_id, const std::string& app_id,
                      int default_score);
  void set_status(const std::string& resource_id, ResourceStatus status);
  void set_queue_length(const std::string& resource_id, int queue_length);
  void adjust_queue_length(const std::string& resource_id, int delta);

  const Resource& get(const std::string& id) const;
  bool has(const std::string& id) const;
  std::vector<Resource> list() const;

  ScoreBreakdown score_resource(const Resource& r, const std::string& app_id,
                                const ScoringContext& ctx) const;
  // Throws ErrorCode::no_resource when every resource is disqualified.
  Selection select_resource(const std::string& app_id, const ScoringContext& ctx) const;
  // Baseline placement policy: cycles through the eligible resources in id
  // order, ignoring scores. Used to compare transfer counts against the
  // scored policy.
  Selection select_round_robin(const std::string& app_id, const ScoringContext& ctx);

  // Rule 3 accumulates +5 per resident dependency when true (the default);
  // when false a single +5 is granted if any dependency is resident.
  void set_rule2_per_dependency(bool per_dependency) { per_dependency_ = per_dependency; }
  bool rule2_per_dependency() const { return per_dependency_; }
  // 0 disables the queue penalty rule.
  void set_queue_penalty_divisor(int divisor) { queue_divisor_ = divisor; }
  int queue_penalty_divisor() const { return queue_divisor_; }

 private:
  void load();
  void save() const;
  Resource& must_get(const std::string& id);

  std::filesystem::path root_;
  const apps::AppRegistry& registry_;
  Sequence& seq_;
  std::map<std::string, Resource> resources_;
  std::uint64_t next_resource_ = 1;
  bool per_dependency_ = true;
  int queue_divisor_ = 0;
  std::uint64_t round_robin_cursor_ = 0;
};

}  // namespace orchard::resources
