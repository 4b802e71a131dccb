#include "orchard/pipeline.hpp"

#include <algorithm>

#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/util.hpp"

namespace orchard::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

static void to_json(json& j, const SlotSelector& s) { j = json{{"tags", s.tags}}; }

static void from_json(const json& j, SlotSelector& s) {
  if (j.contains("tags")) j.at("tags").get_to(s.tags);
}

void to_json(json& j, const PipelineRule& r) {
  j = json{{"id", r.id},
           {"project", r.project},
           {"name", r.name},
           {"app", r.app},
           {"instance", r.instance},
           {"user", r.user},
           {"selectors", r.selectors},
           {"output_tags", r.output_tags},
           {"config", r.config},
           {"active", r.active},
           {"superseded", r.superseded},
           {"created_at", r.created_at}};
  if (r.subject_filter) j["subject_filter"] = *r.subject_filter;
}

void from_json(const json& j, PipelineRule& r) {
  j.at("id").get_to(r.id);
  j.at("project").get_to(r.project);
  j.at("name").get_to(r.name);
  j.at("app").get_to(r.app);
  j.at("instance").get_to(r.instance);
  r.user = j.value("user", "");
  if (j.contains("selectors")) j.at("selectors").get_to(r.selectors);
  if (j.contains("output_tags")) j.at("output_tags").get_to(r.output_tags);
  r.config = j.value("config", json::object());
  r.active = j.value("active", true);
  if (j.contains("superseded")) j.at("superseded").get_to(r.superseded);
  r.created_at = j.value("created_at", std::int64_t{0});
  if (j.contains("subject_filter"))
    r.subject_filter = j.at("subject_filter").get<std::string>();
}

void to_json(json& j, const RuleEvaluation& e) {
  json subs = json::array();
  for (const auto& s : e.submissions)
    subs.push_back({{"subject", s.subject}, {"task", s.task}});
  json skips = json::array();
  for (const auto& s : e.skips)
    skips.push_back({{"subject", s.subject}, {"reason", s.reason}, {"detail", s.detail}});
  json notes = json::array();
  for (const auto& n : e.notes)
    notes.push_back({{"subject", n.subject}, {"detail", n.detail}});
  j = json{{"rule", e.rule}, {"submissions", subs}, {"skips", skips}, {"notes", notes}};
}

void to_json(json& j, const RunSummary& s) {
  j = json{{"rounds", s.rounds},
           {"submitted", s.submitted},
           {"finished", s.finished},
           {"failed", s.failed},
           {"skip_counts", s.skip_counts}};
}

PipelineEngine::PipelineEngine(fs::path root, warehouse::Warehouse& wh,
                               const apps::AppRegistry& registry,
                               const prov::ProvenanceStore& provenance, sched::Scheduler& sched,
                               Sequence& seq)
    : root_(std::move(root)),
      wh_(wh),
      registry_(registry),
      provenance_(provenance),
      sched_(sched),
      seq_(seq) {
  load();
}

void PipelineEngine::load() {
  auto text = util::read_file_if_exists(root_ / "rules.json");
  if (!text) return;
  json doc = json::parse(*text);
  next_rule_ = doc.value("next_rule", std::uint64_t{1});
  for (const auto& item : doc.at("rules")) {
    PipelineRule r = item.get<PipelineRule>();
    seq_.bump(r.created_at);
    rules_[r.id] = std::move(r);
  }
}

void PipelineEngine::save() const {
  json items = json::array();
  for (const auto& [id, r] : rules_) items.push_back(r);
  util::atomic_write_file(root_ / "rules.json",
                          json{{"next_rule", next_rule_}, {"rules", items}}.dump(2) + "\n");
}

PipelineRule& PipelineEngine::define_rule(const RuleSpec& spec) {
  const auto& project = wh_.get_project(spec.project);
  const apps::App& app = registry_.get_app(spec.app);
  if (spec.name.empty()) fail(ErrorCode::validation, "rule name must not be empty");
  for (const auto& [slot_id, sel] : spec.selectors)
    if (!std::any_of(app.input_slots.begin(), app.input_slots.end(),
                     [&](const apps::Slot& s) { return s.slot_id == slot_id; }))
      fail(ErrorCode::validation, "app has no input slot: " + slot_id);
  for (const auto& slot : app.input_slots)
    if (!slot.optional && !spec.selectors.count(slot.slot_id))
      fail(ErrorCode::validation, "no selector for required input slot " + slot.slot_id);

  PipelineRule rule;
  rule.id = util::make_id("rule", next_rule_++);
  rule.project = spec.project;
  rule.name = spec.name;
  rule.app = app.id;
  rule.user = spec.user.empty() ? project.owner : spec.user;
  rule.selectors = spec.selectors;
  rule.output_tags = spec.output_tags;
  rule.subject_filter = spec.subject_filter;
  rule.config = spec.config;
  rule.instance = sched_.create_instance(spec.project, "rule: " + spec.name).id;
  rule.created_at = seq_.next();
  auto [it, inserted] = rules_.emplace(rule.id, std::move(rule));
  save();
  return it->second;
}

const PipelineRule& PipelineEngine::get(const std::string& id) const {
  auto it = rules_.find(id);
  if (it == rules_.end()) fail(ErrorCode::not_found, "no such rule: " + id);
  return it->second;
}

bool PipelineEngine::has(const std::string& id) const { return rules_.count(id) > 0; }

std::vector<PipelineRule> PipelineEngine::list(const std::optional<std::string>& project) const {
  std::vector<PipelineRule> out;
  for (const auto& [id, r] : rules_)
    if (!project || r.project == *project) out.push_back(r);
  return out;
}

void PipelineEngine::set_active(const std::string& id, bool active) {
  auto it = rules_.find(id);
  if (it == rules_.end()) fail(ErrorCode::not_found, "no such rule: " + id);
  it->second.active = active;
  save();
}

RuleEvaluation PipelineEngine::evaluate_rule(const std::string& id) {
  PipelineRule& rule = [&]() -> PipelineRule& {
    auto it = rules_.find(id);
    if (it == rules_.end()) fail(ErrorCode::not_found, "no such rule: " + id);
    return it->second;
  }();
  const apps::App& app = registry_.get_app(rule.app);

  RuleEvaluation ev;
  ev.rule = rule.id;

  // Subjects that have at least one candidate object for some selector.
  std::set<std::string> subjects;
  for (const auto& slot : app.input_slots) {
    auto sel = rule.selectors.find(slot.slot_id);
    if (sel == rule.selectors.end()) continue;
    warehouse::QueryFilter filter;
    filter.datatype = slot.datatype;
    filter.include_tags = sel->second.tags;
    for (const auto& obj : wh_.query_objects(rule.project, filter)) {
      if (obj.subject.empty()) continue;
      if (!util::is_subset(slot.required_datatype_tags, obj.datatype_tags)) continue;
      if (rule.subject_filter && !util::glob_match(*rule.subject_filter, obj.subject)) continue;
      subjects.insert(obj.subject);
    }
  }

  for (const auto& subject : subjects) {
    // 1. gather one object per slot, newest first on ambiguity
    std::map<std::string, std::string> bindings;
    std::string session;
    std::string missing_slot;
    std::vector<RuleNote> notes;
    for (const auto& slot : app.input_slots) {
      auto sel = rule.selectors.find(slot.slot_id);
      if (sel == rule.selectors.end()) continue;  // unselected optional slot
      warehouse::QueryFilter filter;
      filter.datatype = slot.datatype;
      filter.include_tags = sel->second.tags;
      filter.subject = subject;
      std::vector<warehouse::DataObject> candidates;
      for (const auto& obj : wh_.query_objects(rule.project, filter))
        if (util::is_subset(slot.required_datatype_tags, obj.datatype_tags))
          candidates.push_back(obj);
      if (candidates.empty()) {
        if (!slot.optional) {
          missing_slot = slot.slot_id;
          break;
        }
        continue;
      }
      if (candidates.size() > 1)
        notes.push_back({subject, "slot " + slot.slot_id + ": " +
                                      std::to_string(candidates.size()) +
                                      " candidates, picked newest " + candidates.front().id});
      bindings[slot.slot_id] = candidates.front().id;
      if (session.empty()) session = candidates.front().session;
    }
    if (!missing_slot.empty()) {
      ev.skips.push_back({subject, "inputs_missing", "slot " + missing_slot});
      continue;
    }

    // 2. output already produced for this subject
    std::string existing;
    for (const auto& rec : provenance_.records_for_app(rule.app)) {
      if (!wh_.has_object(rec.object)) continue;
      const auto& obj = wh_.get_object(rec.object);
      if (obj.project != rule.project || obj.subject != subject) continue;
      if (!util::is_subset(rule.output_tags, obj.tags)) continue;
      existing = obj.id;
      break;
    }
    if (!existing.empty()) {
      ev.skips.push_back({subject, "output_exists", existing});
      continue;
    }

    // 3. a task for this rule and subject is still in flight
    sched::TaskFilter in_flight;
    in_flight.rule = rule.id;
    in_flight.subject = subject;
    in_flight.states = {sched::TaskState::kRequested, sched::TaskState::kRunning};
    auto running = sched_.list_tasks(in_flight);
    if (!running.empty()) {
      ev.skips.push_back({subject, "task_in_flight", running.front().id});
      continue;
    }

    // 4. a failed attempt blocks resubmission until rearmed
    sched::TaskFilter failed;
    failed.rule = rule.id;
    failed.subject = subject;
    failed.states = {sched::TaskState::kFailed};
    std::string blocking;
    for (const auto& t : sched_.list_tasks(failed))
      if (!rule.superseded.count(t.id)) blocking = t.id;
    if (!blocking.empty()) {
      ev.skips.push_back({subject, "task_failed", blocking});
      continue;
    }

    // 5. submit
    sched::SubmitRequest req;
    req.instance = rule.instance;
    req.app = rule.app;
    req.user = rule.user;
    req.subject = subject;
    req.session = session;
    req.config = rule.config;
    req.bindings = bindings;
    req.output_tags = rule.output_tags;
    req.rule = rule.id;
    const auto& task = sched_.submit_task(req);
    ev.submissions.push_back({subject, task.id});
    for (auto& n : notes) ev.notes.push_back(std::move(n));
  }
  return ev;
}

RunSummary PipelineEngine::run_rules(const std::optional<std::string>& project, int max_rounds) {
  RunSummary summary;
  for (int round = 1; round <= max_rounds; ++round) {
    summary.rounds = round;
    int submitted = 0;
    for (const auto& [id, rule] : rules_) {
      if (!rule.active) continue;
      if (project && rule.project != *project) continue;
      RuleEvaluation ev = evaluate_rule(id);
      submitted += static_cast<int>(ev.submissions.size());
      for (const auto& skip : ev.skips) ++summary.skip_counts[skip.reason];
    }
    summary.submitted += submitted;
    if (submitted == 0 && sched_.idle()) break;
    sched_.run_until_idle();
  }
  for (const auto& [id, rule] : rules_) {
    if (project && rule.project != *project) continue;
    sched::TaskFilter filter;
    filter.rule = id;
    for (const auto& t : sched_.list_tasks(filter)) {
      if (t.state == sched::TaskState::kFinished) ++summary.finished;
      if (t.state == sched::TaskState::kFailed) ++summary.failed;
    }
  }
  return summary;
}

int PipelineEngine::rearm(const std::string& id, const std::optional<std::string>& subject) {
  auto it = rules_.find(id);
  if (it == rules_.end()) fail(ErrorCode::not_found, "no such rule: " + id);
  PipelineRule& rule = it->second;
  sched::TaskFilter filter;
  filter.rule = rule.id;
  filter.subject = subject;
  filter.states = {sched::TaskState::kFailed};
  int cleared = 0;
  for (const auto& t : sched_.list_tasks(filter))
    if (rule.superseded.insert(t.id).second) ++cleared;
  if (cleared > 0) save();
  return cleared;
}

}  // namespace orchard::pipeline
