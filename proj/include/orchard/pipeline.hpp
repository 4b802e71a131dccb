#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/apps.hpp"
#include "orchard/provenance.hpp"
#include "orchard/scheduler.hpp"
#include "orchard/warehouse.hpp"

namespace orchard::pipeline {

// Extra object tags a rule requires on top of what the app's input slot
// already demands.
struct SlotSelector {
  std::vector<std::string> tags;
};

struct PipelineRule {
  std::string id;
  std::string project;
  std::string name;
  std::string app;
  std::string instance;  // dedicated instance owning the rule's tasks
  std::string user;
  std::map<std::string, SlotSelector> selectors;
  std::vector<std::string> output_tags;
  std::optional<std::string> subject_filter;  // glob over subject names
  nlohmann::json config = nlohmann::json::object();
  bool active = true;
  std::set<std::string> superseded;  // failed tasks cleared for resubmission
  std::int64_t created_at = 0;
};

struct RuleSpec {
  std::string project;
  std::string name;
  std::string app;
  std::string user;
  std::map<std::string, SlotSelector> selectors;
  std::vector<std::string> output_tags;
  std::optional<std::string> subject_filter;
  nlohmann::json config = nlohmann::json::object();
};

struct RuleSkip {
  std::string subject;
  std::string reason;  // inputs_missing | output_exists | task_in_flight | task_failed
  std::string detail;
};

struct RuleNote {
  std::string subject;
  std::string detail;
};

struct RuleSubmission {
  std::string subject;
  std::string task;
};

struct RuleEvaluation {
  std::string rule;
  std::vector<RuleSubmission> submissions;
  std::vector<RuleSkip> skips;
  std::vector<RuleNote> notes;
};

struct RunSummary {
  int rounds = 0;
  int submitted = 0;
  int finished = 0;
  int failed = 0;
  std::map<std::string, int> skip_counts;
};

// Subject-batched automation: a rule binds an app to object selectors and
// keeps submitting one task per subject until every subject either has the
// app's output or a decision not to run it.
//
// Per subject, the first matching case wins:
//   1. a required slot has no matching object     -> skip inputs_missing
//   2. the app already produced output for the
//      subject carrying the rule's output tags    -> skip output_exists
//   3. a task for this rule and subject is
//      requested or running                       -> skip task_in_flight
//   4. a previous task failed and was not rearmed -> skip task_failed
//   5. otherwise submit; when several objects match a slot the newest wins
//      and the choice is recorded as a note
class PipelineEngine {
 public:
  PipelineEngine(std::filesystem::path root, warehouse::Warehouse& wh,
                 const apps::AppRegistry& registry, const prov::ProvenanceStore& provenance,
                 sched::Scheduler& sched, Sequence& seq);

  PipelineRule& define_rule(const RuleSpec& spec);
  const PipelineRule& get(const std::string& id) const;
  bool has(const std::string& id) const;
  std::vector<PipelineRule> list(const std::optional<std::string>& project = {}) const;
  void set_active(const std::string& id, bool active);

  RuleEvaluation evaluate_rule(const std::string& id);
  // Alternates rule evaluation with scheduler ticks until a full pass
  // submits nothing and every task is terminal.
  RunSummary run_rules(const std::optional<std::string>& project = {}, int max_rounds = 50);
  // Clears failed tasks of a rule (optionally one subject) so the next
  // evaluation may resubmit. Returns how many tasks were cleared.
  int rearm(const std::string& id, const std::optional<std::string>& subject = {});

 private:
  void load();
  void save() const;

  std::filesystem::path root_;
  warehouse::Warehouse& wh_;
  const apps::AppRegistry& registry_;
  const prov::ProvenanceStore& provenance_;
  sched::Scheduler& sched_;
  Sequence& seq_;
  std::map<std::string, PipelineRule> rules_;
  std::uint64_t next_rule_ = 1;
};

void to_json(nlohmann::json& j, const PipelineRule& r);
void from_json(const nlohmann::json& j, PipelineRule& r);
void to_json(nlohmann::json& j, const RuleEvaluation& e);
void to_json(nlohmann::json& j, const RunSummary& s);

}  // namespace orchard::pipeline
