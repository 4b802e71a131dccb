#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/apps.hpp"
#include "orchard/backend.hpp"
#include "orchard/provenance.hpp"
#include "orchard/resources.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::sched {

enum class TaskState { kRequested, kRunning, kFinished, kFailed, kStopped, kRemoved };

std::string to_string(TaskState s);
TaskState task_state_from_string(const std::string& s);
bool is_terminal(TaskState s);

struct Instance {
  std::string id;
  std::string project;
  std::string name;
  std::string description;
  std::int64_t created_at = 0;
};

// An input binding is either a warehouse object id or a deferred reference
// "task:<task id>:<output slot>" resolved when the task is dispatched.
struct Task {
  std::string id;
  std::string instance;
  std::string project;
  std::string app;
  std::string user;
  std::string subject;
  std::string session;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> bindings;
  std::vector<std::string> deps;
  std::vector<std::string> output_tags;
  std::optional<std::string> preferred_resource;
  std::string rule;

  TaskState state = TaskState::kRequested;
  std::string resource;
  std::string service_digest;
  std::string fail_reason;
  std::string work_dir;  // relative to the store root
  std::map<std::string, std::string> resolved_inputs;  // slot -> object id
  std::map<std::string, std::string> outputs;          // slot -> object id
  int transfers = 0;
  int unknown_count = 0;
  std::int64_t created_at = 0;
  std::int64_t dispatched_tick = -1;
  std::int64_t finished_tick = -1;
};

struct Transition {
  std::int64_t seq = 0;
  std::int64_t tick = 0;
  std::string task;
  std::string from;
  std::string to;
  std::string reason;
};

struct SubmitRequest {
  std::string instance;
  std::string app;
  std::string user;
  std::string subject;
  std::string session;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> bindings;
  std::vector<std::string> deps;
  std::vector<std::string> output_tags;
  std::optional<std::string> preferred_resource;
  std::string rule;
};

struct TaskFilter {
  std::optional<std::string> instance;
  std::optional<std::string> project;
  std::optional<std::string> rule;
  std::optional<std::string> subject;
  std::set<TaskState> states;  // empty matches all
};

enum class PlacementPolicy { kScored, kRoundRobin };

struct SchedulerOptions {
  std::uint64_t rng_seed = 1;
  int status_unknown_limit = 10;
  PlacementPolicy placement = PlacementPolicy::kScored;
};

// Drives the task state machine. Each tick, in order: failures propagate to
// dependents, eligible requested tasks dispatch, running jobs are polled,
// finished jobs are validated, archived and recorded in provenance, and
// failures propagate once more.
class Scheduler {
 public:
  Scheduler(std::filesystem::path root, warehouse::Warehouse& wh,
            const apps::AppRegistry& registry, resources::ResourceBroker& broker,
            prov::ProvenanceStore& provenance, Sequence& seq, SchedulerOptions opts = {});

  Instance& create_instance(const std::string& project, const std::string& name,
                            const std::string& description = "");
  const Instance& get_instance(const std::string& id) const;
  bool has_instance(const std::string& id) const;
  std::vector<Instance> list_instances(const std::optional<std::string>& project = {}) const;

  Task& submit_task(const SubmitRequest& req);
  const Task& get_task(const std::string& id) const;
  bool has_task(const std::string& id) const;
  std::vector<Task> list_tasks(const TaskFilter& filter = {}) const;

  void tick();
  // Ticks until no task is requested or running, up to max_ticks. Returns
  // the number of ticks spent.
  int run_until_idle(int max_ticks = 10000);
  bool idle() const;

  void stop_task(const std::string& id);
  void remove_task(const std::string& id);

  const std::vector<Transition>& transitions() const { return transitions_; }
  std::vector<Transition> task_events(const std::string& task) const;

  std::set<std::string> residency(const std::string& object) const;
  std::int64_t current_tick() const { return tick_; }
  std::int64_t total_transfers() const { return total_transfers_; }
  std::filesystem::path work_path(const Task& task) const;

  void set_placement(PlacementPolicy p) { opts_.placement = p; }
  PlacementPolicy placement() const { return opts_.placement; }
  void set_rng_seed(std::uint64_t seed) { opts_.rng_seed = seed; }
  std::uint64_t rng_seed() const { return opts_.rng_seed; }

 private:
  void load();
  void persist_task(const Task& t);
  void persist_instance(const Instance& i);
  void persist_meta() const;
  void persist_residency(const std::string& object);
  void transition(Task& t, TaskState to, const std::string& reason);
  void propagate_failures();
  void dispatch_eligible();
  void poll_running();
  bool deps_finished(const Task& t) const;
  void dispatch(Task& t);
  void finalize(Task& t);
  void fail_task(Task& t, const std::string& reason);
  std::map<std::string, std::string> resolve_bindings(const Task& t) const;
  resources::ScoringContext scoring_context(const Task& t) const;
  exec::ExecutionBackend& backend_for(const resources::Resource& r);
  bool decide_failure(const Task& t, double rate) const;

  std::filesystem::path root_;
  warehouse::Warehouse& wh_;
  const apps::AppRegistry& registry_;
  resources::ResourceBroker& broker_;
  prov::ProvenanceStore& provenance_;
  Sequence& seq_;
  SchedulerOptions opts_;

  std::map<std::string, Instance> instances_;
  std::map<std::string, Task> tasks_;
  std::map<std::string, std::set<std::string>> residency_;
  std::vector<Transition> transitions_;
  std::map<std::string, std::unique_ptr<exec::ExecutionBackend>> backends_;
  std::uint64_t next_task_ = 1;
  std::uint64_t next_instance_ = 1;
  std::int64_t tick_ = 0;
  std::int64_t total_transfers_ = 0;
};

void to_json(nlohmann::json& j, const Instance& i);
void from_json(const nlohmann::json& j, Instance& i);
void to_json(nlohmann::json& j, const Task& t);
void from_json(const nlohmann::json& j, Task& t);
void to_json(nlohmann::json& j, const Transition& t);
void from_json(const nlohmann::json& j, Transition& t);

}  // namespace orchard::sched
