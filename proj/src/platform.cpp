#include "orchard/platform.hpp"

#include <algorithm>

#include "orchard/errors.hpp"
#include "orchard/sim.hpp"
#include "orchard/util.hpp"

namespace orchard::platform {

namespace fs = std::filesystem;
using nlohmann::json;

PlatformConfig load_config(const fs::path& store_root) {
  PlatformConfig cfg;
  cfg.store_root = store_root;
  auto text = util::read_file_if_exists(store_root / "config.json");
  if (!text) return cfg;
  json doc = json::parse(*text);
  cfg.bucket = doc.value("bucket", cfg.bucket);
  cfg.rule2_per_dependency = doc.value("rule2_per_dependency", cfg.rule2_per_dependency);
  cfg.queue_penalty_divisor = doc.value("queue_penalty_divisor", cfg.queue_penalty_divisor);
  cfg.status_unknown_limit = doc.value("status_unknown_limit", cfg.status_unknown_limit);
  cfg.rng_seed = doc.value("rng_seed", cfg.rng_seed);
  cfg.placement = doc.value("placement", cfg.placement);
  return cfg;
}

static sched::PlacementPolicy parse_placement(const std::string& s) {
  if (s == "scored") return sched::PlacementPolicy::kScored;
  if (s == "round_robin") return sched::PlacementPolicy::kRoundRobin;
  fail(ErrorCode::validation, "unknown placement policy: " + s);
}

static fs::path ensure_root(const fs::path& p) {
  if (p.empty()) fail(ErrorCode::validation, "store root must not be empty");
  fs::create_directories(p);
  return p;
}

static sched::SchedulerOptions scheduler_options(const PlatformConfig& cfg) {
  sched::SchedulerOptions opts;
  opts.rng_seed = cfg.rng_seed;
  opts.status_unknown_limit = cfg.status_unknown_limit;
  opts.placement = parse_placement(cfg.placement);
  return opts;
}

Platform::Platform(PlatformConfig cfg)
    : seq(),
      wh(ensure_root(cfg.store_root), cfg.bucket, seq),
      apps(cfg.store_root, wh, seq),
      broker(cfg.store_root, apps, seq),
      provenance(cfg.store_root, seq),
      sched(cfg.store_root, wh, apps, broker, provenance, seq, scheduler_options(cfg)),
      pipeline(cfg.store_root, wh, apps, provenance, sched, seq),
      cfg_(std::move(cfg)) {
  broker.set_rule2_per_dependency(cfg_.rule2_per_dependency);
  broker.set_queue_penalty_divisor(cfg_.queue_penalty_divisor);
}

Scenario scenario_from_json(const json& doc) {
  Scenario s;
  s.name = doc.value("name", s.name);
  s.seed = doc.value("seed", s.seed);
  s.placement = doc.value("placement", s.placement);
  s.max_ticks = doc.value("max_ticks", s.max_ticks);
  s.subjects = doc.value("subjects", s.subjects);
  s.chain_length = doc.value("chain_length", s.chain_length);
  s.feature_final = doc.value("feature_final", s.feature_final);
  s.rule2_per_dependency = doc.value("rule2_per_dependency", s.rule2_per_dependency);
  s.queue_penalty_divisor = doc.value("queue_penalty_divisor", s.queue_penalty_divisor);
  if (doc.contains("resources")) {
    for (const auto& item : doc.at("resources")) {
      ScenarioResource r;
      r.name = item.at("name").get<std::string>();
      r.kind = item.value("kind", r.kind);
      r.owner = item.value("owner", r.owner);
      r.latency_ticks = item.value("latency_ticks", r.latency_ticks);
      r.failure_rate = item.value("failure_rate", r.failure_rate);
      r.default_score = item.value("default_score", r.default_score);
      s.resources.push_back(std::move(r));
    }
  }
  return s;
}

static std::string stage_datatype(int stage, bool feature) {
  return feature ? "sim/features" : "sim/stage" + std::to_string(stage);
}

static void ensure_scenario_datatypes(Platform& p, const Scenario& s) {
  for (int stage = 0; stage <= s.chain_length; ++stage) {
    bool feature = s.feature_final && stage == s.chain_length;
    std::string name = stage_datatype(stage, feature);
    if (p.wh.has_datatype(name)) continue;
    warehouse::Datatype dt;
    dt.name = name;
    if (feature) {
      dt.is_statistical_feature = true;
      dt.file_spec = {{"features.tsv", true}};
    } else {
      dt.file_spec = {{"data.txt", true}};
    }
    p.wh.register_datatype(dt);
  }
}

static std::vector<apps::App> ensure_scenario_apps(Platform& p, const Scenario& s) {
  std::vector<apps::App> chain;
  for (int step = 1; step <= s.chain_length; ++step) {
    bool feature = s.feature_final && step == s.chain_length;
    sim::SyntheticAppSpec spec;
    spec.name = s.name + " step" + std::to_string(step);
    apps::Slot in;
    in.slot_id = "in";
    in.datatype = stage_datatype(step - 1, false);
    spec.inputs.push_back(in);
    apps::Slot out;
    out.slot_id = "out";
    out.datatype = stage_datatype(step, feature);
    spec.outputs.push_back(out);
    sim::SyntheticOutput payload;
    payload.slot = "out";
    if (feature) {
      payload.feature = true;
      payload.structures = {"alpha", "beta", "gamma", "delta"};
      payload.measures = {"size", "intensity"};
    } else {
      payload.files = {"data.txt"};
    }
    spec.payloads["out"] = payload;
    fs::path service = p.root() / "services" / (s.name + "-step" + std::to_string(step));
    sim::make_synthetic_app(service, spec);
    chain.push_back(p.apps.register_from_dir(service));
  }
  return chain;
}

ScenarioMetrics run_scenario(Platform& p, const Scenario& s) {
  if (s.subjects < 1) fail(ErrorCode::validation, "scenario needs at least one subject");
  if (s.chain_length < 1) fail(ErrorCode::validation, "scenario needs at least one app");
  if (s.resources.empty()) fail(ErrorCode::validation, "scenario lists no resources");

  p.sched.set_placement(parse_placement(s.placement));
  p.sched.set_rng_seed(s.seed);
  p.broker.set_rule2_per_dependency(s.rule2_per_dependency);
  p.broker.set_queue_penalty_divisor(s.queue_penalty_divisor);

  const auto& project = p.wh.create_project(s.name, "sim");
  ensure_scenario_datatypes(p, s);
  auto chain = ensure_scenario_apps(p, s);
  for (const auto& r : s.resources) {
    resources::Resource spec;
    spec.name = r.name;
    spec.kind = resources::resource_kind_from_string(r.kind);
    spec.owner = r.owner;
    spec.backend_kind = "sim";
    spec.sim.latency_ticks = r.latency_ticks;
    spec.sim.failure_rate = r.failure_rate;
    const auto& reg = p.broker.register_resource(spec);
    for (const auto& app : chain) p.broker.enable_service(reg.id, app.id, r.default_score);
  }

  const auto& instance = p.sched.create_instance(project.id, s.name + " run");

  fs::path scratch = p.root() / "tmp" / ("scenario-" + project.id);
  std::vector<std::string> roots;
  for (int i = 1; i <= s.subjects; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "sub-%04d", i);
    fs::create_directories(scratch);
    util::atomic_write_file(scratch / "data.txt", std::string("subject ") + name + "\n");
    warehouse::ArchiveRequest req;
    req.project = project.id;
    req.datatype = stage_datatype(0, false);
    req.files = scratch;
    req.subject = name;
    roots.push_back(p.wh.archive_object(req).id);
    fs::remove_all(scratch);
  }

  for (int i = 0; i < s.subjects; ++i) {
    std::string prev;
    for (int step = 0; step < s.chain_length; ++step) {
      sched::SubmitRequest req;
      req.instance = instance.id;
      req.app = chain[static_cast<std::size_t>(step)].id;
      req.user = "sim";
      req.subject = roots.empty() ? "" : p.wh.get_object(roots[static_cast<std::size_t>(i)]).subject;
      req.bindings["in"] = step == 0 ? roots[static_cast<std::size_t>(i)] : "task:" + prev + ":out";
      prev = p.sched.submit_task(req).id;
    }
  }

  ScenarioMetrics m;
  m.ticks = p.sched.run_until_idle(s.max_ticks);

  sched::TaskFilter filter;
  filter.instance = instance.id;
  for (const auto& t : p.sched.list_tasks(filter)) {
    ++m.submitted;
    if (t.state == sched::TaskState::kFinished) ++m.finished;
    if (t.state == sched::TaskState::kFailed) {
      ++m.failed;
      ++m.failure_reasons[t.fail_reason];
    }
    if (!t.resource.empty()) ++m.tasks_per_resource[t.resource];
    m.transfers_total += t.transfers;
    if (!t.deps.empty()) m.transfers_after_first_stage += t.transfers;
  }
  int terminal = m.finished + m.failed;
  m.success_rate = terminal == 0 ? 1.0 : static_cast<double>(m.finished) / terminal;
  return m;
}

json metrics_json(const ScenarioMetrics& m) {
  return json{{"submitted", m.submitted},
              {"finished", m.finished},
              {"failed", m.failed},
              {"success_rate", m.success_rate},
              {"transfers_total", m.transfers_total},
              {"transfers_after_first_stage", m.transfers_after_first_stage},
              {"ticks", m.ticks},
              {"tasks_per_resource", m.tasks_per_resource},
              {"failure_reasons", m.failure_reasons}};
}

}  // namespace orchard::platform
