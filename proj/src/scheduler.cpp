#include "orchard/scheduler.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <sstream>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/sim.hpp"
#include "orchard/tar.hpp"
#include "orchard/util.hpp"

namespace orchard::sched {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TaskState s) {
  switch (s) {
    case TaskState::kRequested: return "requested";
    case TaskState::kRunning: return "running";
    case TaskState::kFinished: return "finished";
    case TaskState::kFailed: return "failed";
    case TaskState::kStopped: return "stopped";
    case TaskState::kRemoved: return "removed";
  }
  return "unknown";
}

TaskState task_state_from_string(const std::string& s) {
  if (s == "requested") return TaskState::kRequested;
  if (s == "running") return TaskState::kRunning;
  if (s == "finished") return TaskState::kFinished;
  if (s == "failed") return TaskState::kFailed;
  if (s == "stopped") return TaskState::kStopped;
  if (s == "removed") return TaskState::kRemoved;
  fail(ErrorCode::validation, "unknown task state: " + s);
}

bool is_terminal(TaskState s) {
  return s == TaskState::kFinished || s == TaskState::kFailed || s == TaskState::kStopped ||
         s == TaskState::kRemoved;
}

void to_json(json& j, const Instance& i) {
  j = json{{"id", i.id},
           {"project", i.project},
           {"name", i.name},
           {"description", i.description},
           {"created_at", i.created_at}};
}

void from_json(const json& j, Instance& i) {
  j.at("id").get_to(i.id);
  j.at("project").get_to(i.project);
  j.at("name").get_to(i.name);
  i.description = j.value("description", "");
  i.created_at = j.value("created_at", std::int64_t{0});
}

void to_json(json& j, const Task& t) {
  j = json{{"id", t.id},
           {"instance", t.instance},
           {"project", t.project},
           {"app", t.app},
           {"user", t.user},
           {"subject", t.subject},
           {"session", t.session},
           {"config", t.config},
           {"bindings", t.bindings},
           {"deps", t.deps},
           {"output_tags", t.output_tags},
           {"rule", t.rule},
           {"state", to_string(t.state)},
           {"resource", t.resource},
           {"service_digest", t.service_digest},
           {"fail_reason", t.fail_reason},
           {"work_dir", t.work_dir},
           {"resolved_inputs", t.resolved_inputs},
           {"outputs", t.outputs},
           {"transfers", t.transfers},
           {"unknown_count", t.unknown_count},
           {"created_at", t.created_at},
           {"dispatched_tick", t.dispatched_tick},
           {"finished_tick", t.finished_tick}};
  if (t.preferred_resource) j["preferred_resource"] = *t.preferred_resource;
}

void from_json(const json& j, Task& t) {
  j.at("id").get_to(t.id);
  j.at("instance").get_to(t.instance);
  j.at("project").get_to(t.project);
  j.at("app").get_to(t.app);
  t.user = j.value("user", "");
  t.subject = j.value("subject", "");
  t.session = j.value("session", "");
  t.config = j.value("config", json::object());
  if (j.contains("bindings")) j.at("bindings").get_to(t.bindings);
  if (j.contains("deps")) j.at("deps").get_to(t.deps);
  if (j.contains("output_tags")) j.at("output_tags").get_to(t.output_tags);
  t.rule = j.value("rule", "");
  t.state = task_state_from_string(j.value("state", "requested"));
  t.resource = j.value("resource", "");
  t.service_digest = j.value("service_digest", "");
  t.fail_reason = j.value("fail_reason", "");
  t.work_dir = j.value("work_dir", "");
  if (j.contains("resolved_inputs")) j.at("resolved_inputs").get_to(t.resolved_inputs);
  if (j.contains("outputs")) j.at("outputs").get_to(t.outputs);
  t.transfers = j.value("transfers", 0);
  t.unknown_count = j.value("unknown_count", 0);
  t.created_at = j.value("created_at", std::int64_t{0});
  t.dispatched_tick = j.value("dispatched_tick", std::int64_t{-1});
  t.finished_tick = j.value("finished_tick", std::int64_t{-1});
  if (j.contains("preferred_resource"))
    t.preferred_resource = j.at("preferred_resource").get<std::string>();
}

void to_json(json& j, const Transition& t) {
  j = json{{"seq", t.seq},   {"tick", t.tick}, {"task", t.task},
           {"from", t.from}, {"to", t.to},     {"reason", t.reason}};
}

void from_json(const json& j, Transition& t) {
  j.at("seq").get_to(t.seq);
  j.at("tick").get_to(t.tick);
  j.at("task").get_to(t.task);
  j.at("from").get_to(t.from);
  j.at("to").get_to(t.to);
  j.at("reason").get_to(t.reason);
}

Scheduler::Scheduler(fs::path root, warehouse::Warehouse& wh, const apps::AppRegistry& registry,
                     resources::ResourceBroker& broker, prov::ProvenanceStore& provenance,
                     Sequence& seq, SchedulerOptions opts)
    : root_(std::move(root)),
      wh_(wh),
      registry_(registry),
      broker_(broker),
      provenance_(provenance),
      seq_(seq),
      opts_(opts) {
  backends_["sim"] = std::make_unique<sim::SimBackend>();
  backends_["process"] = std::make_unique<exec::ProcessBackend>();
  fs::create_directories(root_ / "state");
  load();
}

template <typename T>
static void load_jsonl(const fs::path& path, const std::function<void(T&&)>& sink) {
  auto text = util::read_file_if_exists(path);
  if (!text) return;
  std::istringstream lines(*text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) continue;  // torn trailing write
    sink(doc.get<T>());
  }
}

void Scheduler::load() {
  if (auto text = util::read_file_if_exists(root_ / "state" / "scheduler.json")) {
    json doc = json::parse(*text);
    tick_ = doc.value("tick", std::int64_t{0});
    next_task_ = doc.value("next_task", std::uint64_t{1});
    next_instance_ = doc.value("next_instance", std::uint64_t{1});
    total_transfers_ = doc.value("total_transfers", std::int64_t{0});
    opts_.rng_seed = doc.value("rng_seed", opts_.rng_seed);
  }
  load_jsonl<Instance>(root_ / "state" / "instances.jsonl", [&](Instance&& i) {
    seq_.bump(i.created_at);
    instances_[i.id] = std::move(i);
  });
  load_jsonl<Task>(root_ / "state" / "tasks.jsonl", [&](Task&& t) {
    seq_.bump(t.created_at);
    tasks_[t.id] = std::move(t);
  });
  load_jsonl<json>(root_ / "state" / "residency.jsonl", [&](json&& doc) {
    std::set<std::string> set;
    for (const auto& r : doc.at("resources")) set.insert(r.get<std::string>());
    residency_[doc.at("object").get<std::string>()] = std::move(set);
  });
  load_jsonl<Transition>(root_ / "state" / "transitions.jsonl", [&](Transition&& t) {
    seq_.bump(t.seq);
    transitions_.push_back(std::move(t));
  });
}

void Scheduler::persist_task(const Task& t) {
  util::append_line(root_ / "state" / "tasks.jsonl", json(t).dump());
}

void Scheduler::persist_instance(const Instance& i) {
  util::append_line(root_ / "state" / "instances.jsonl", json(i).dump());
}

void Scheduler::persist_meta() const {
  json doc{{"tick", tick_},
           {"next_task", next_task_},
           {"next_instance", next_instance_},
           {"total_transfers", total_transfers_},
           {"rng_seed", opts_.rng_seed}};
  util::atomic_write_file(root_ / "state" / "scheduler.json", doc.dump(2) + "\n");
}

void Scheduler::persist_residency(const std::string& object) {
  json doc{{"object", object}, {"resources", residency_[object]}};
  util::append_line(root_ / "state" / "residency.jsonl", doc.dump());
}

void Scheduler::transition(Task& t, TaskState to, const std::string& reason) {
  Transition tr;
  tr.seq = seq_.next();
  tr.tick = tick_;
  tr.task = t.id;
  tr.from = t.state == to && to == TaskState::kRequested ? "" : to_string(t.state);
  tr.to = to_string(to);
  tr.reason = reason;
  t.state = to;
  transitions_.push_back(tr);
  util::append_line(root_ / "state" / "transitions.jsonl", json(tr).dump());
  persist_task(t);
}

Instance& Scheduler::create_instance(const std::string& project, const std::string& name,
                                     const std::string& description) {
  if (!wh_.has_project(project)) fail(ErrorCode::not_found, "no such project: " + project);
  if (name.empty()) fail(ErrorCode::validation, "instance name must not be empty");
  Instance inst;
  inst.id = util::make_id("i", next_instance_++);
  inst.project = project;
  inst.name = name;
  inst.description = description;
  inst.created_at = seq_.next();
  auto [it, inserted] = instances_.emplace(inst.id, std::move(inst));
  persist_instance(it->second);
  persist_meta();
  return it->second;
}

const Instance& Scheduler::get_instance(const std::string& id) const {
  auto it = instances_.find(id);
  if (it == instances_.end()) fail(ErrorCode::not_found, "no such instance: " + id);
  return it->second;
}

bool Scheduler::has_instance(const std::string& id) const { return instances_.count(id) > 0; }

std::vector<Instance> Scheduler::list_instances(const std::optional<std::string>& project) const {
  std::vector<Instance> out;
  for (const auto& [id, inst] : instances_)
    if (!project || inst.project == *project) out.push_back(inst);
  return out;
}

namespace {

struct DeferredRef {
  std::string task;
  std::string slot;
};

std::optional<DeferredRef> parse_deferred(const std::string& binding) {
  if (binding.rfind("task:", 0) != 0) return std::nullopt;
  auto parts = util::split(binding, ':');
  if (parts.size() != 3 || parts[1].empty() || parts[2].empty())
    fail(ErrorCode::validation, "malformed deferred binding: " + binding);
  return DeferredRef{parts[1], parts[2]};
}

const apps::Slot* find_slot(const std::vector<apps::Slot>& slots, const std::string& id) {
  for (const auto& s : slots)
    if (s.slot_id == id) return &s;
  return nullptr;
}

void check_config(const apps::App& app, json& config) {
  if (!config.is_object()) fail(ErrorCode::validation, "config must be a JSON object");
  for (const auto& [key, value] : config.items()) {
    if (!key.empty() && key.front() == '_')
      fail(ErrorCode::validation, "config keys starting with _ are reserved: " + key);
    const apps::ConfigField* field = nullptr;
    for (const auto& f : app.config_schema)
      if (f.key == key) field = &f;
    if (!field) fail(ErrorCode::validation, "unknown config key: " + key);
    bool ok = (field->type == "string" && value.is_string()) ||
              (field->type == "integer" && value.is_number_integer()) ||
              (field->type == "number" && value.is_number()) ||
              (field->type == "boolean" && value.is_boolean());
    if (!ok)
      fail(ErrorCode::validation, "config key " + key + " must be of type " + field->type);
  }
  for (const auto& f : app.config_schema) {
    if (config.contains(f.key)) continue;
    if (f.default_value) {
      config[f.key] = json::parse(*f.default_value);
      continue;
    }
    fail(ErrorCode::validation, "missing config key: " + f.key);
  }
}

}  // namespace

Task& Scheduler::submit_task(const SubmitRequest& req) {
  const Instance& inst = get_instance(req.instance);
  const apps::App& app = registry_.get_app(req.app);
  if (req.user.empty()) fail(ErrorCode::validation, "submitting user must not be empty");

  Task t;
  t.instance = inst.id;
  t.project = inst.project;
  t.app = app.id;
  t.user = req.user;
  t.subject = req.subject;
  t.session = req.session;
  t.config = req.config;
  t.bindings = req.bindings;
  t.output_tags = req.output_tags;
  t.preferred_resource = req.preferred_resource;
  t.rule = req.rule;
  check_config(app, t.config);

  std::set<std::string> deps(req.deps.begin(), req.deps.end());
  for (const auto& dep : deps) {
    auto it = tasks_.find(dep);
    if (it == tasks_.end()) fail(ErrorCode::not_found, "no such dependency task: " + dep);
    if (it->second.project != inst.project)
      fail(ErrorCode::validation, "dependency " + dep + " belongs to another project");
  }

  for (const auto& [slot_id, binding] : t.bindings) {
    const apps::Slot* slot = find_slot(app.input_slots, slot_id);
    if (!slot) fail(ErrorCode::validation, "app has no input slot: " + slot_id);
    if (auto ref = parse_deferred(binding)) {
      auto dep_it = tasks_.find(ref->task);
      if (dep_it == tasks_.end())
        fail(ErrorCode::not_found, "deferred binding references unknown task: " + ref->task);
      const Task& dep = dep_it->second;
      if (dep.project != inst.project)
        fail(ErrorCode::validation, "deferred binding crosses projects: " + binding);
      if (dep.state == TaskState::kFailed || dep.state == TaskState::kStopped ||
          dep.state == TaskState::kRemoved)
        fail(ErrorCode::docking, "deferred binding references a " + to_string(dep.state) +
                                     " task: " + binding);
      const apps::App& dep_app = registry_.get_app(dep.app);
      const apps::Slot* out = find_slot(dep_app.output_slots, ref->slot);
      if (!out)
        fail(ErrorCode::docking, "task " + ref->task + " has no output slot " + ref->slot);
      if (out->datatype != slot->datatype)
        fail(ErrorCode::docking, "slot " + slot_id + " wants " + slot->datatype + " but " +
                                     binding + " yields " + out->datatype);
      if (!util::is_subset(slot->required_datatype_tags, out->datatype_tags))
        fail(ErrorCode::docking, "slot " + slot_id + " tag requirements not met by " + binding);
      deps.insert(ref->task);
    } else {
      const auto& obj = wh_.get_object(binding);
      if (obj.project != inst.project)
        fail(ErrorCode::validation, "object " + binding + " belongs to another project");
      if (obj.datatype != slot->datatype)
        fail(ErrorCode::docking, "slot " + slot_id + " wants " + slot->datatype + " but " +
                                     binding + " is " + obj.datatype);
      if (!util::is_subset(slot->required_datatype_tags, obj.datatype_tags))
        fail(ErrorCode::docking, "slot " + slot_id + " tag requirements not met by " + binding);
    }
  }
  for (const auto& slot : app.input_slots)
    if (!slot.optional && !t.bindings.count(slot.slot_id))
      fail(ErrorCode::docking, "no binding for required input slot " + slot.slot_id);

  // Dependencies must already exist, so the task graph cannot gain a cycle.
  t.deps.assign(deps.begin(), deps.end());
  t.id = util::make_id("t", next_task_++);
  t.created_at = seq_.next();
  auto [it, inserted] = tasks_.emplace(t.id, std::move(t));
  transition(it->second, TaskState::kRequested, "submitted");
  persist_meta();
  return it->second;
}

const Task& Scheduler::get_task(const std::string& id) const {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) fail(ErrorCode::not_found, "no such task: " + id);
  return it->second;
}

bool Scheduler::has_task(const std::string& id) const { return tasks_.count(id) > 0; }

std::vector<Task> Scheduler::list_tasks(const TaskFilter& filter) const {
  std::vector<Task> out;
  for (const auto& [id, t] : tasks_) {
    if (filter.instance && t.instance != *filter.instance) continue;
    if (filter.project && t.project != *filter.project) continue;
    if (filter.rule && t.rule != *filter.rule) continue;
    if (filter.subject && t.subject != *filter.subject) continue;
    if (!filter.states.empty() && !filter.states.count(t.state)) continue;
    out.push_back(t);
  }
  return out;
}

bool Scheduler::deps_finished(const Task& t) const {
  for (const auto& dep : t.deps)
    if (tasks_.at(dep).state != TaskState::kFinished) return false;
  return true;
}

void Scheduler::propagate_failures() {
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& [id, t] : tasks_) {
      if (t.state != TaskState::kRequested) continue;
      for (const auto& dep : t.deps) {
        TaskState ds = tasks_.at(dep).state;
        if (ds == TaskState::kFailed || ds == TaskState::kStopped ||
            ds == TaskState::kRemoved) {
          fail_task(t, "parent_failed");
          changed = true;
          break;
        }
      }
    }
  }
}

std::map<std::string, std::string> Scheduler::resolve_bindings(const Task& t) const {
  std::map<std::string, std::string> resolved;
  for (const auto& [slot, binding] : t.bindings) {
    if (auto ref = parse_deferred(binding)) {
      const Task& dep = tasks_.at(ref->task);
      auto out = dep.outputs.find(ref->slot);
      if (out == dep.outputs.end())
        fail(ErrorCode::integrity,
             "dependency " + ref->task + " finished without output slot " + ref->slot);
      resolved[slot] = out->second;
    } else {
      resolved[slot] = binding;
    }
  }
  return resolved;
}

resources::ScoringContext Scheduler::scoring_context(const Task& t) const {
  resources::ScoringContext ctx;
  ctx.submitting_user = t.user;
  ctx.avoid_public = wh_.get_project(t.project).avoid_public_resources;
  ctx.preferred_resource = t.preferred_resource;
  for (const auto& dep_id : t.deps) {
    const Task& dep = tasks_.at(dep_id);
    resources::DepResidency dr;
    dr.task_id = dep_id;
    if (!dep.outputs.empty()) {
      bool first = true;
      for (const auto& [slot, obj] : dep.outputs) {
        auto it = residency_.find(obj);
        std::set<std::string> here =
            it == residency_.end() ? std::set<std::string>{} : it->second;
        if (first) {
          dr.resident_on = std::move(here);
          first = false;
        } else {
          std::set<std::string> merged;
          std::set_intersection(dr.resident_on.begin(), dr.resident_on.end(), here.begin(),
                                here.end(), std::inserter(merged, merged.begin()));
          dr.resident_on = std::move(merged);
        }
      }
    }
    ctx.deps.push_back(std::move(dr));
  }
  return ctx;
}

exec::ExecutionBackend& Scheduler::backend_for(const resources::Resource& r) {
  auto it = backends_.find(r.backend_kind);
  if (it == backends_.end())
    fail(ErrorCode::validation, "no backend for kind: " + r.backend_kind);
  return *it->second;
}

bool Scheduler::decide_failure(const Task& t, double rate) const {
  if (rate <= 0.0) return false;
  std::mt19937_64 gen(opts_.rng_seed ^ util::stable_hash(t.id));
  double u = static_cast<double>(gen() >> 11) * (1.0 / 9007199254740992.0);
  return u < rate;
}

static std::string build_config_text(const Task& t, const apps::App& app) {
  json cfg = t.config;
  cfg["_app"] = app.id;
  cfg["_task"] = t.id;
  json ins = json::array();
  for (const auto& slot : app.input_slots) {
    auto it = t.resolved_inputs.find(slot.slot_id);
    if (it == t.resolved_inputs.end()) continue;
    ins.push_back({{"id", it->second},
                   {"datatype", slot.datatype},
                   {"path", "inputs/" + slot.slot_id}});
  }
  json outs = json::array();
  for (const auto& slot : app.output_slots)
    outs.push_back({{"id", slot.slot_id},
                    {"datatype", slot.datatype},
                    {"path", "outputs/" + slot.slot_id}});
  cfg["_inputs"] = ins;
  cfg["_outputs"] = outs;
  return cfg.dump(2) + "\n";
}

void Scheduler::dispatch(Task& t) {
  const apps::App& app = registry_.get_app(t.app);
  t.resolved_inputs = resolve_bindings(t);

  resources::ScoringContext ctx = scoring_context(t);
  resources::Selection sel;
  try {
    sel = opts_.placement == PlacementPolicy::kScored
              ? broker_.select_resource(app.id, ctx)
              : broker_.select_round_robin(app.id, ctx);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::no_resource) return;  // wait for one to come up
    throw;
  }
  const resources::Resource& res = broker_.get(sel.resource_id);

  t.resource = res.id;
  t.work_dir = "work/" + res.id + "/" + t.id;
  fs::path work = root_ / t.work_dir;
  fs::remove_all(work);
  t.service_digest = digest::tree_digest(app.service_ref);
  registry_.resolve_service(app, work);

  for (const auto& [slot, obj] : t.resolved_inputs) {
    std::string bytes = wh_.object_archive_bytes(obj);
    tar::extract_archive(bytes, work / "inputs" / slot);
    auto& sites = residency_[obj];
    if (!sites.count(res.id)) {
      sites.insert(res.id);
      ++t.transfers;
      ++total_transfers_;
      persist_residency(obj);
    }
  }

  util::atomic_write_file(work / "config.json", build_config_text(t, app));
  util::atomic_write_file(work / "_resource_selection.txt", sel.report);

  exec::StartContext start;
  start.work_dir = work;
  start.current_tick = tick_;
  start.latency_ticks = res.sim.latency_ticks;
  start.inject_failure =
      res.backend_kind == "sim" && decide_failure(t, res.sim.failure_rate);
  backend_for(res).start(start);

  t.dispatched_tick = tick_;
  broker_.adjust_queue_length(res.id, 1);
  transition(t, TaskState::kRunning, "dispatched to " + res.id);
}

void Scheduler::dispatch_eligible() {
  for (auto& [id, t] : tasks_) {
    if (t.state != TaskState::kRequested || !deps_finished(t)) continue;
    try {
      dispatch(t);
    } catch (const Error& e) {
      fail_task(t, std::string("dispatch_error: ") + e.what());
    }
  }
}

void Scheduler::fail_task(Task& t, const std::string& reason) {
  if (t.state == TaskState::kRunning) broker_.adjust_queue_length(t.resource, -1);
  t.fail_reason = reason;
  t.finished_tick = tick_;
  transition(t, TaskState::kFailed, reason);
}

void Scheduler::finalize(Task& t) {
  const apps::App& app = registry_.get_app(t.app);
  fs::path work = root_ / t.work_dir;

  std::vector<std::string> violations;
  for (const auto& slot : app.output_slots) {
    fs::path dir = work / "outputs" / slot.slot_id;
    if (!fs::is_directory(dir)) {
      violations.push_back("slot " + slot.slot_id + ": missing output directory");
      continue;
    }
    auto result = wh_.validate_object(dir, wh_.get_datatype(slot.datatype));
    for (const auto& v : result.violations)
      violations.push_back("slot " + slot.slot_id + ": " + v);
  }
  if (!violations.empty()) {
    fail_task(t, "output_validation: " + util::join(violations, "; "));
    return;
  }

  for (const auto& slot : app.output_slots) {
    warehouse::ArchiveRequest req;
    req.project = t.project;
    req.datatype = slot.datatype;
    req.datatype_tags = slot.datatype_tags;
    req.tags = t.output_tags;
    req.subject = t.subject;
    req.session = t.session;
    req.provenance_task = t.id;
    req.files = work / "outputs" / slot.slot_id;
    const auto& obj = wh_.archive_object(req);
    t.outputs[slot.slot_id] = obj.id;
    residency_[obj.id] = {t.resource};
    persist_residency(obj.id);

    prov::ProvenanceRecord rec;
    rec.object = obj.id;
    rec.output_slot = slot.slot_id;
    rec.task = t.id;
    rec.instance = t.instance;
    rec.project = t.project;
    rec.app = app.id;
    rec.app_version = app.version;
    rec.service_digest = t.service_digest;
    rec.config_text = build_config_text(t, app);
    rec.inputs = t.resolved_inputs;
    rec.resource = t.resource;
    provenance_.record(std::move(rec));
  }

  t.finished_tick = tick_;
  broker_.adjust_queue_length(t.resource, -1);
  transition(t, TaskState::kFinished, "completed");
}

void Scheduler::poll_running() {
  for (auto& [id, t] : tasks_) {
    if (t.state != TaskState::kRunning || t.dispatched_tick == tick_) continue;
    const resources::Resource& res = broker_.get(t.resource);
    exec::JobStatus status;
    try {
      status = backend_for(res).status(root_ / t.work_dir, tick_);
    } catch (const Error& e) {
      fail_task(t, std::string("status_error: ") + e.what());
      continue;
    }
    switch (status) {
      case exec::JobStatus::kRunning:
        t.unknown_count = 0;
        break;
      case exec::JobStatus::kFinished:
        try {
          finalize(t);
        } catch (const Error& e) {
          fail_task(t, std::string("finalize_error: ") + e.what());
        }
        break;
      case exec::JobStatus::kFailed:
        fail_task(t, "job_failed");
        break;
      case exec::JobStatus::kUnknown:
        if (++t.unknown_count >= opts_.status_unknown_limit)
          fail_task(t, "status_unknown_limit reached");
        else
          persist_task(t);
        break;
    }
  }
}

void Scheduler::tick() {
  ++tick_;
  propagate_failures();
  dispatch_eligible();
  poll_running();
  propagate_failures();
  persist_meta();
}

bool Scheduler::idle() const {
  for (const auto& [id, t] : tasks_)
    if (!is_terminal(t.state)) return false;
  return true;
}

int Scheduler::run_until_idle(int max_ticks) {
  int used = 0;
  while (!idle() && used < max_ticks) {
    tick();
    ++used;
  }
  return used;
}

void Scheduler::stop_task(const std::string& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) fail(ErrorCode::not_found, "no such task: " + id);
  Task& t = it->second;
  if (is_terminal(t.state))
    fail(ErrorCode::invalid_transition, "task " + id + " is already " + to_string(t.state));
  if (t.state == TaskState::kRunning) {
    const resources::Resource& res = broker_.get(t.resource);
    try {
      backend_for(res).stop(root_ / t.work_dir);
    } catch (const Error&) {
      // stopping is best effort; the job is abandoned either way
    }
    broker_.adjust_queue_length(t.resource, -1);
  }
  t.finished_tick = tick_;
  transition(t, TaskState::kStopped, "stopped_by_user");
  propagate_failures();
}

void Scheduler::remove_task(const std::string& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) fail(ErrorCode::not_found, "no such task: " + id);
  Task& t = it->second;
  if (t.state == TaskState::kRemoved)
    fail(ErrorCode::invalid_transition, "task " + id + " is already removed");
  if (t.state == TaskState::kRunning) {
    const resources::Resource& res = broker_.get(t.resource);
    try {
      backend_for(res).stop(root_ / t.work_dir);
    } catch (const Error&) {
    }
    broker_.adjust_queue_length(t.resource, -1);
  }
  if (!t.work_dir.empty()) fs::remove_all(root_ / t.work_dir);
  transition(t, TaskState::kRemoved, "removed_by_user");
  propagate_failures();
}

std::vector<Transition> Scheduler::task_events(const std::string& task) const {
  std::vector<Transition> out;
  for (const auto& tr : transitions_)
    if (tr.task == task) out.push_back(tr);
  return out;
}

std::set<std::string> Scheduler::residency(const std::string& object) const {
  auto it = residency_.find(object);
  return it == residency_.end() ? std::set<std::string>{} : it->second;
}

fs::path Scheduler::work_path(const Task& task) const { return root_ / task.work_dir; }

}  // namespace orchard::sched
