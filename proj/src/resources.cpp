#include "orchard/resources.hpp"

#include <algorithm>
#include <sstream>

#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/util.hpp"

namespace orchard::resources {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ResourceKind k) {
  switch (k) {
    case ResourceKind::kPublic: return "public";
    case ResourceKind::kShared: return "shared";
    case ResourceKind::kPrivate: return "private";
  }
  fail(ErrorCode::validation, "bad resource kind");
}

ResourceKind resource_kind_from_string(const std::string& s) {
  if (s == "public") return ResourceKind::kPublic;
  if (s == "shared") return ResourceKind::kShared;
  if (s == "private") return ResourceKind::kPrivate;
  fail(ErrorCode::validation, "unknown resource kind: " + s);
}

std::string to_string(ResourceStatus s) {
  return s == ResourceStatus::kOk ? "ok" : "down";
}

ResourceStatus resource_status_from_string(const std::string& s) {
  if (s == "ok") return ResourceStatus::kOk;
  if (s == "down") return ResourceStatus::kDown;
  fail(ErrorCode::validation, "unknown resource status: " + s);
}

void to_json(json& j, const SimProfile& p) {
  j = json{{"latency_ticks", p.latency_ticks}, {"failure_rate", p.failure_rate}};
}

void from_json(const json& j, SimProfile& p) {
  p.latency_ticks = j.value("latency_ticks", 2);
  p.failure_rate = j.value("failure_rate", 0.0);
}

void to_json(json& j, const Resource& r) {
  j = json{{"id", r.id},
           {"name", r.name},
           {"kind", to_string(r.kind)},
           {"owner", r.owner},
           {"enabled_services", r.enabled_services},
           {"status", to_string(r.status)},
           {"geolocation", r.geolocation},
           {"queue_length", r.queue_length},
           {"backend_kind", r.backend_kind},
           {"sim", r.sim},
           {"created_at", r.created_at}};
}

void from_json(const json& j, Resource& r) {
  if (j.contains("id")) j.at("id").get_to(r.id);
  j.at("name").get_to(r.name);
  r.kind = resource_kind_from_string(j.value("kind", "shared"));
  r.owner = j.value("owner", "");
  if (j.contains("enabled_services")) j.at("enabled_services").get_to(r.enabled_services);
  r.status = resource_status_from_string(j.value("status", "ok"));
  r.geolocation = j.value("geolocation", "");
  r.queue_length = j.value("queue_length", 0);
  r.backend_kind = j.value("backend_kind", "sim");
  if (j.contains("sim")) j.at("sim").get_to(r.sim);
  r.created_at = j.value("created_at", std::int64_t{0});
}

void to_json(json& j, const ScoreBreakdown& b) {
  if (b.disqualified) {
    j = json{{"disqualified", true}, {"reason", b.reason}};
    return;
  }
  j = json{{"disqualified", false},
           {"base", b.base},
           {"dep_bonus", b.dep_bonus},
           {"exclusive_bonus", b.exclusive_bonus},
           {"preferred_bonus", b.preferred_bonus},
           {"queue_penalty", b.queue_penalty},
           {"total", b.total}};
}

ResourceBroker::ResourceBroker(fs::path root, const apps::AppRegistry& registry, Sequence& seq)
    : root_(std::move(root)), registry_(registry), seq_(seq) {
  load();
}

void ResourceBroker::load() {
  auto text = util::read_file_if_exists(root_ / "resources.json");
  if (!text) return;
  json doc = json::parse(*text);
  next_resource_ = doc.value("next_resource", std::uint64_t{1});
  round_robin_cursor_ = doc.value("round_robin_cursor", std::uint64_t{0});
  for (const auto& item : doc.at("resources")) {
    Resource r = item.get<Resource>();
    resources_[r.id] = std::move(r);
  }
  for (const auto& [id, r] : resources_) seq_.bump(r.created_at);
}

void ResourceBroker::save() const {
  json items = json::array();
  for (const auto& [id, r] : resources_) items.push_back(r);
  json doc{{"next_resource", next_resource_},
           {"round_robin_cursor", round_robin_cursor_},
           {"resources", items}};
  util::atomic_write_file(root_ / "resources.json", doc.dump(2) + "\n");
}

Resource& ResourceBroker::must_get(const std::string& id) {
  auto it = resources_.find(id);
  if (it == resources_.end()) fail(ErrorCode::not_found, "no such resource: " + id);
  return it->second;
}

const Resource& ResourceBroker::get(const std::string& id) const {
  auto it = resources_.find(id);
  if (it == resources_.end()) fail(ErrorCode::not_found, "no such resource: " + id);
  return it->second;
}

bool ResourceBroker::has(const std::string& id) const { return resources_.count(id) > 0; }

std::vector<Resource> ResourceBroker::list() const {
  std::vector<Resource> out;
  out.reserve(resources_.size());
  for (const auto& [id, r] : resources_) out.push_back(r);
  return out;
}

Resource& ResourceBroker::register_resource(Resource spec) {
  if (spec.name.empty()) fail(ErrorCode::validation, "resource name must not be empty");
  if (spec.kind == ResourceKind::kPrivate && spec.owner.empty())
    fail(ErrorCode::validation, "private resource requires an owner");
  if (spec.backend_kind != "sim" && spec.backend_kind != "process")
    fail(ErrorCode::validation, "unknown backend kind: " + spec.backend_kind);
  if (spec.sim.failure_rate < 0.0 || spec.sim.failure_rate > 1.0)
    fail(ErrorCode::validation, "failure rate must lie in [0,1]");
  if (spec.sim.latency_ticks < 0)
    fail(ErrorCode::validation, "latency must be non-negative");
  for (const auto& [app_id, score] : spec.enabled_services)
    if (!registry_.has_app(app_id)) fail(ErrorCode::not_found, "no such app: " + app_id);
  spec.id = util::make_id("r", next_resource_++);
  spec.created_at = seq_.next();
  auto [it, inserted] = resources_.emplace(spec.id, std::move(spec));
  save();
  return it->second;
}

void ResourceBroker::enable_service(const std::string& resource_id, const std::string& app_id,
                                    int default_score) {
  if (!registry_.has_app(app_id)) fail(ErrorCode::not_found, "no such app: " + app_id);
  must_get(resource_id).enabled_services[app_id] = default_score;
  save();
}

void ResourceBroker::set_status(const std::string& resource_id, ResourceStatus status) {
  must_get(resource_id).status = status;
  save();
}

void ResourceBroker::set_queue_length(const std::string& resource_id, int queue_length) {
  must_get(resource_id).queue_length = std::max(0, queue_length);
  save();
}

void ResourceBroker::adjust_queue_length(const std::string& resource_id, int delta) {
  auto& r = must_get(resource_id);
  r.queue_length = std::max(0, r.queue_length + delta);
  save();
}

ScoreBreakdown ResourceBroker::score_resource(const Resource& r, const std::string& app_id,
                                              const ScoringContext& ctx) const {
  ScoreBreakdown b;
  auto enabled = r.enabled_services.find(app_id);
  if (enabled == r.enabled_services.end()) {
    b.disqualified = true;
    b.reason = "not_enabled";
    return b;
  }
  if (ctx.avoid_public && r.kind == ResourceKind::kPublic) {
    b.disqualified = true;
    b.reason = "avoid_public";
    return b;
  }
  if (r.status == ResourceStatus::kDown) {
    b.disqualified = true;
    b.reason = "down";
    return b;
  }
  b.base = enabled->second;
  int resident_deps = 0;
  for (const auto& dep : ctx.deps)
    if (dep.resident_on.count(r.id)) ++resident_deps;
  if (per_dependency_)
    b.dep_bonus = 5 * resident_deps;
  else
    b.dep_bonus = resident_deps > 0 ? 5 : 0;
  if (r.kind == ResourceKind::kPrivate && !ctx.submitting_user.empty() &&
      r.owner == ctx.submitting_user)
    b.exclusive_bonus = 10;
  if (ctx.preferred_resource && *ctx.preferred_resource == r.id) b.preferred_bonus = 15;
  if (queue_divisor_ > 0) b.queue_penalty = r.queue_length / queue_divisor_;
  b.total = b.base + b.dep_bonus + b.exclusive_bonus + b.preferred_bonus - b.queue_penalty;
  return b;
}

static std::string format_report(const std::string& app_id,
                                 const std::vector<std::pair<std::string, ScoreBreakdown>>& rows,
                                 const std::string& selected, bool show_queue) {
  std::ostringstream out;
  out << "resource selection for app " << app_id << "\n";
  for (const auto& [id, b] : rows) {
    if (b.disqualified) {
      out << "  " << id << " [DISQUALIFIED:" << b.reason << "]\n";
      continue;
    }
    out << "  " << id << " base=" << b.base << " dep=" << b.dep_bonus
        << " exclusive=" << b.exclusive_bonus << " preferred=" << b.preferred_bonus;
    if (show_queue) out << " queue=" << -b.queue_penalty;
    out << " total=" << b.total << "\n";
  }
  out << "selected=" << selected << "\n";
  return out.str();
}

Selection ResourceBroker::select_resource(const std::string& app_id,
                                          const ScoringContext& ctx) const {
  if (!registry_.has_app(app_id)) fail(ErrorCode::not_found, "no such app: " + app_id);
  if (resources_.empty()) fail(ErrorCode::no_resource, "no resources registered");
  Selection sel;
  const Resource* best = nullptr;
  ScoreBreakdown best_score;
  for (const auto& [id, r] : resources_) {
    ScoreBreakdown b = score_resource(r, app_id, ctx);
    sel.breakdowns.emplace_back(id, b);
    if (b.disqualified) continue;
    if (!best || b.total > best_score.total) {
      best = &r;
      best_score = b;
    }
  }
  if (!best) {
    std::string detail;
    for (const auto& [id, b] : sel.breakdowns) {
      if (!detail.empty()) detail += ", ";
      detail += id + ":" + b.reason;
    }
    fail(ErrorCode::no_resource, "no eligible resource for app " + app_id + " (" + detail + ")");
  }
  sel.resource_id = best->id;
  sel.report = format_report(app_id, sel.breakdowns, sel.resource_id, queue_divisor_ > 0);
  return sel;
}

Selection ResourceBroker::select_round_robin(const std::string& app_id,
                                             const ScoringContext& ctx) {
  if (!registry_.has_app(app_id)) fail(ErrorCode::not_found, "no such app: " + app_id);
  Selection sel;
  std::vector<std::string> eligible;
  for (const auto& [id, r] : resources_) {
    ScoreBreakdown b = score_resource(r, app_id, ctx);
    sel.breakdowns.emplace_back(id, b);
    if (!b.disqualified) eligible.push_back(id);
  }
  if (eligible.empty())
    fail(ErrorCode::no_resource, "no eligible resource for app " + app_id);
  sel.resource_id = eligible[round_robin_cursor_++ % eligible.size()];
  sel.report = format_report(app_id, sel.breakdowns, sel.resource_id, queue_divisor_ > 0);
  save();
  return sel;
}

}  // namespace orchard::resources
