#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "orchard/analytics.hpp"
#include "orchard/errors.hpp"
#include "orchard/http_api.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/platform.hpp"
#include "orchard/util.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace orchard;

struct Cli {
  std::string store = "orchard-store";
  bool json_out = false;
  std::optional<platform::Platform> instance;

  platform::Platform& platform() {
    if (!instance) instance.emplace(platform::load_config(store));
    return *instance;
  }

  // Prints the JSON form and returns true when --json is in effect.
  bool emit(const json& j) {
    if (!json_out) return false;
    std::cout << j.dump(2) << "\n";
    return true;
  }
};

std::pair<std::string, std::string> split_kv(const std::string& s, const char* what) {
  auto pos = s.find('=');
  if (pos == std::string::npos)
    fail(ErrorCode::validation, std::string(what) + " must look like key=value: " + s);
  return {s.substr(0, pos), s.substr(pos + 1)};
}

json parse_json_arg(const std::string& s, const char* what) {
  json j = json::parse(s, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::validation, std::string(what) + " is not valid JSON");
  return j;
}

std::string tags_brief(const std::vector<std::string>& tags) {
  return tags.empty() ? "-" : util::join(tags, ",");
}

void print_object_line(const warehouse::DataObject& o) {
  std::cout << o.id << "  " << o.datatype << "  subject=" << (o.subject.empty() ? "-" : o.subject)
            << "  tags=" << tags_brief(o.tags) << "  " << o.archive_path << "\n";
}

void print_task_line(const sched::Task& t) {
  std::cout << t.id << "  " << sched::to_string(t.state) << "  app=" << t.app
            << "  subject=" << (t.subject.empty() ? "-" : t.subject)
            << "  resource=" << (t.resource.empty() ? "-" : t.resource);
  if (!t.fail_reason.empty()) std::cout << "  reason=" << t.fail_reason;
  std::cout << "\n";
}

void print_resource_line(const resources::Resource& r) {
  std::cout << r.id << "  " << r.name << "  " << resources::to_string(r.kind)
            << "  status=" << resources::to_string(r.status) << "  queue=" << r.queue_length
            << "  services=" << r.enabled_services.size() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  Cli cli;
  CLI::App app{"data-aware workflow orchestration"};
  app.require_subcommand(1);
  app.add_option("--store", cli.store, "store directory")
      ->envname("ORCHARD_STORE")
      ->capture_default_str();
  app.add_flag("--json", cli.json_out, "print full JSON instead of summaries");

  // --- project ------------------------------------------------------------
  auto* project = app.add_subcommand("project", "manage projects");
  {
    auto* create = project->add_subcommand("create", "create a project");
    auto name = std::make_shared<std::string>();
    auto owner = std::make_shared<std::string>();
    auto avoid = std::make_shared<bool>(false);
    auto dua = std::make_shared<std::string>();
    create->add_option("--name", *name, "project name")->required();
    create->add_option("--owner", *owner, "owning user")->required();
    create->add_flag("--avoid-public", *avoid, "never place tasks on public resources");
    create->add_option("--dua", *dua, "data use agreement text");
    create->callback([&cli, name, owner, avoid, dua] {
      std::optional<std::string> dua_text;
      if (!dua->empty()) dua_text = *dua;
      auto p = cli.platform().wh.create_project(*owner, *name, *avoid, dua_text);
      if (!cli.emit(p)) std::cout << p.id << "\n";
    });

    auto* list = project->add_subcommand("list", "list projects");
    list->callback([&cli] {
      auto projects = cli.platform().wh.list_projects();
      if (cli.emit(projects)) return;
      for (const auto& p : projects)
        std::cout << p.id << "  " << p.name << "  owner=" << p.owner << "\n";
    });
  }

  // --- datatype ----------------------------------------------------------
  auto* datatype = app.add_subcommand("datatype", "manage datatype definitions");
  {
    auto* reg = datatype->add_subcommand("register", "register a datatype");
    auto file = std::make_shared<std::string>();
    reg->add_option("file", *file, "datatype definition JSON")->required()
        ->check(CLI::ExistingFile);
    reg->callback([&cli, file] {
      auto def = json::parse(util::read_file(*file)).get<warehouse::Datatype>();
      auto d = cli.platform().wh.register_datatype(std::move(def));
      if (!cli.emit(d)) std::cout << d.name << "\n";
    });

    auto* list = datatype->add_subcommand("list", "list datatypes");
    list->callback([&cli] {
      auto types = cli.platform().wh.list_datatypes();
      if (cli.emit(types)) return;
      for (const auto& d : types)
        std::cout << d.name << "  files=" << d.file_spec.size()
                  << (d.is_statistical_feature ? "  feature" : "") << "\n";
    });

    auto* show = datatype->add_subcommand("show", "show one datatype");
    auto name = std::make_shared<std::string>();
    show->add_option("name", *name, "datatype name")->required();
    show->callback([&cli, name] {
      const auto& d = cli.platform().wh.get_datatype(*name);
      if (!cli.emit(d)) std::cout << json(d).dump(2) << "\n";
    });
  }

  // --- data ---------------------------------------------------------------
  auto* data = app.add_subcommand("data", "manage archived data objects");
  {
    auto* upload = data->add_subcommand("upload", "validate and archive a file tree");
    auto proj = std::make_shared<std::string>();
    auto dtype = std::make_shared<std::string>();
    auto dir = std::make_shared<std::string>();
    auto dtags = std::make_shared<std::vector<std::string>>();
    auto tags = std::make_shared<std::vector<std::string>>();
    auto subject = std::make_shared<std::string>();
    auto session = std::make_shared<std::string>();
    upload->add_option("--project", *proj, "project id")->required();
    upload->add_option("--datatype", *dtype, "datatype name")->required();
    upload->add_option("--dir", *dir, "staged file tree")->required()
        ->check(CLI::ExistingDirectory);
    upload->add_option("--datatype-tag", *dtags, "datatype tag")->expected(1);
    upload->add_option("--tag", *tags, "object tag")->expected(1);
    upload->add_option("--subject", *subject, "subject label");
    upload->add_option("--session", *session, "session label");
    upload->callback([&cli, proj, dtype, dir, dtags, tags, subject, session] {
      warehouse::ArchiveRequest req;
      req.project = *proj;
      req.datatype = *dtype;
      req.files = *dir;
      req.datatype_tags = *dtags;
      req.tags = *tags;
      req.subject = *subject;
      req.session = *session;
      auto obj = cli.platform().wh.archive_object(req);
      if (!cli.emit(obj)) print_object_line(obj);
    });

    auto* query = data->add_subcommand("query", "query objects in a project");
    auto qproj = std::make_shared<std::string>();
    auto qdtype = std::make_shared<std::string>();
    auto qtags = std::make_shared<std::vector<std::string>>();
    auto qex = std::make_shared<std::vector<std::string>>();
    auto qsub = std::make_shared<std::string>();
    query->add_option("--project", *qproj, "project id")->required();
    query->add_option("--datatype", *qdtype, "datatype name");
    query->add_option("--tag", *qtags, "require tag")->expected(1);
    query->add_option("--exclude-tag", *qex, "exclude tag")->expected(1);
    query->add_option("--subject", *qsub, "subject label");
    query->callback([&cli, qproj, qdtype, qtags, qex, qsub] {
      warehouse::QueryFilter f;
      if (!qdtype->empty()) f.datatype = *qdtype;
      f.include_tags = *qtags;
      f.exclude_tags = *qex;
      if (!qsub->empty()) f.subject = *qsub;
      auto objects = cli.platform().wh.query_objects(*qproj, f);
      if (cli.emit(objects)) return;
      for (const auto& o : objects) print_object_line(o);
    });

    auto* show = data->add_subcommand("show", "show one object");
    auto sid = std::make_shared<std::string>();
    show->add_option("id", *sid, "object id")->required();
    show->callback([&cli, sid] {
      const auto& o = cli.platform().wh.get_object(*sid);
      if (!cli.emit(o)) std::cout << json(o).dump(2) << "\n";
    });

    auto* fetch = data->add_subcommand("fetch", "verify and extract an object");
    auto fid = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    fetch->add_option("id", *fid, "object id")->required();
    fetch->add_option("--out", *out, "destination directory")->required();
    fetch->callback([&cli, fid, out] {
      cli.platform().wh.fetch_object(*fid, *out);
      if (!cli.emit(json{{"id", *fid}, {"out", *out}}))
        std::cout << *fid << " -> " << *out << "\n";
    });
  }

  // --- app ------------------------------------------------------------------
  auto* appcmd = app.add_subcommand("app", "manage registered apps");
  {
    auto* reg = appcmd->add_subcommand("register", "register an app from its service dir");
    auto dir = std::make_shared<std::string>();
    reg->add_option("dir", *dir, "service source directory with app.json")->required()
        ->check(CLI::ExistingDirectory);
    reg->callback([&cli, dir] {
      auto a = cli.platform().apps.register_from_dir(*dir);
      if (!cli.emit(a)) std::cout << a.id << "  " << a.name << "@" << a.version << "\n";
    });

    auto* list = appcmd->add_subcommand("list", "list apps");
    list->callback([&cli] {
      auto all = cli.platform().apps.list_apps();
      if (cli.emit(all)) return;
      for (const auto& a : all)
        std::cout << a.id << "  " << a.name << "@" << a.version << "  doi=" << a.doi << "\n";
    });

    auto* show = appcmd->add_subcommand("show", "show one app");
    auto id = std::make_shared<std::string>();
    show->add_option("id", *id, "app id")->required();
    show->callback([&cli, id] {
      const auto& a = cli.platform().apps.get_app(*id);
      if (!cli.emit(a)) std::cout << json(a).dump(2) << "\n";
    });

    auto* dock = appcmd->add_subcommand("dock", "check slot docking against staged objects");
    auto dapp = std::make_shared<std::string>();
    auto objects = std::make_shared<std::vector<std::string>>();
    dock->add_option("--app", *dapp, "app id (omit to list compatible apps)");
    dock->add_option("--object", *objects, "staged object id")->expected(1)->required();
    dock->callback([&cli, dapp, objects] {
      auto& pf = cli.platform();
      std::vector<warehouse::DataObject> staged;
      for (const auto& id : *objects) staged.push_back(pf.wh.get_object(id));
      if (dapp->empty()) {
        auto compatible = pf.apps.compatible_apps(staged);
        if (cli.emit(compatible)) return;
        for (const auto& a : compatible) std::cout << a.id << "  " << a.name << "\n";
        return;
      }
      auto result = pf.apps.check_docking(pf.apps.get_app(*dapp), staged);
      if (cli.emit(result)) return;
      std::cout << apps::verdict_name(result.verdict) << "\n";
      for (const auto& [slot, obj] : result.bindings)
        std::cout << "  " << slot << " <- " << obj << "\n";
      for (const auto& r : result.reasons) std::cout << "  " << r << "\n";
    });
  }

  // --- resource -------------------------------------------------------------
  auto* resource = app.add_subcommand("resource", "manage compute resources");
  {
    auto* reg = resource->add_subcommand("register", "register a resource");
    auto name = std::make_shared<std::string>();
    auto kind = std::make_shared<std::string>("shared");
    auto owner = std::make_shared<std::string>();
    auto geo = std::make_shared<std::string>();
    auto backend = std::make_shared<std::string>("sim");
    auto latency = std::make_shared<int>(2);
    auto frate = std::make_shared<double>(0.0);
    reg->add_option("--name", *name, "resource name")->required();
    reg->add_option("--kind", *kind, "public | shared | private")->capture_default_str();
    reg->add_option("--owner", *owner, "owning user (required for private)");
    reg->add_option("--geo", *geo, "geolocation label");
    reg->add_option("--backend", *backend, "sim | process")->capture_default_str();
    reg->add_option("--latency", *latency, "simulated ticks per job")->capture_default_str();
    reg->add_option("--failure-rate", *frate, "simulated failure probability")
        ->capture_default_str();
    reg->callback([&cli, name, kind, owner, geo, backend, latency, frate] {
      resources::Resource spec;
      spec.name = *name;
      spec.kind = resources::resource_kind_from_string(*kind);
      spec.owner = *owner;
      spec.geolocation = *geo;
      spec.backend_kind = *backend;
      spec.sim.latency_ticks = *latency;
      spec.sim.failure_rate = *frate;
      auto r = cli.platform().broker.register_resource(std::move(spec));
      if (!cli.emit(r)) print_resource_line(r);
    });

    auto* enable = resource->add_subcommand("enable", "enable an app on a resource");
    auto rid = std::make_shared<std::string>();
    auto eapp = std::make_shared<std::string>();
    auto score = std::make_shared<int>(0);
    enable->add_option("id", *rid, "resource id")->required();
    enable->add_option("--app", *eapp, "app id")->required();
    enable->add_option("--score", *score, "default score granted to the app")->required();
    enable->callback([&cli, rid, eapp, score] {
      cli.platform().broker.enable_service(*rid, *eapp, *score);
      const auto& r = cli.platform().broker.get(*rid);
      if (!cli.emit(r)) print_resource_line(r);
    });

    auto* monitor = resource->add_subcommand("monitor", "update liveness or queue length");
    auto mid = std::make_shared<std::string>();
    auto status = std::make_shared<std::string>();
    auto queue = std::make_shared<int>(-1);
    monitor->add_option("id", *mid, "resource id")->required();
    monitor->add_option("--status", *status, "ok | down");
    monitor->add_option("--queue", *queue, "absolute queue length");
    monitor->callback([&cli, mid, status, queue] {
      auto& broker = cli.platform().broker;
      if (!status->empty())
        broker.set_status(*mid, resources::resource_status_from_string(*status));
      if (*queue >= 0) broker.set_queue_length(*mid, *queue);
      const auto& r = broker.get(*mid);
      if (!cli.emit(r)) print_resource_line(r);
    });

    auto* list = resource->add_subcommand("list", "list resources");
    list->callback([&cli] {
      auto all = cli.platform().broker.list();
      if (cli.emit(all)) return;
      for (const auto& r : all) print_resource_line(r);
    });

    auto* show = resource->add_subcommand("show", "show one resource");
    auto sid = std::make_shared<std::string>();
    show->add_option("id", *sid, "resource id")->required();
    show->callback([&cli, sid] {
      const auto& r = cli.platform().broker.get(*sid);
      if (!cli.emit(r)) std::cout << json(r).dump(2) << "\n";
    });
  }

  // --- instance --------------------------------------------------------------
  auto* instance = app.add_subcommand("instance", "manage workflow instances");
  {
    auto* create = instance->add_subcommand("create", "create an instance");
    auto proj = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto desc = std::make_shared<std::string>();
    create->add_option("--project", *proj, "project id")->required();
    create->add_option("--name", *name, "instance name")->required();
    create->add_option("--desc", *desc, "description");
    create->callback([&cli, proj, name, desc] {
      auto& i = cli.platform().sched.create_instance(*proj, *name, *desc);
      if (!cli.emit(i)) std::cout << i.id << "\n";
    });

    auto* list = instance->add_subcommand("list", "list instances");
    auto lproj = std::make_shared<std::string>();
    list->add_option("--project", *lproj, "filter by project");
    list->callback([&cli, lproj] {
      std::optional<std::string> p;
      if (!lproj->empty()) p = *lproj;
      auto all = cli.platform().sched.list_instances(p);
      if (cli.emit(all)) return;
      for (const auto& i : all)
        std::cout << i.id << "  " << i.name << "  project=" << i.project << "\n";
    });
  }

  // --- task -------------------------------------------------------------------
  auto* task = app.add_subcommand("task", "submit and drive tasks");
  {
    auto* submit = task->add_subcommand("submit", "submit a task");
    auto inst = std::make_shared<std::string>();
    auto tapp = std::make_shared<std::string>();
    auto user = std::make_shared<std::string>();
    auto subject = std::make_shared<std::string>();
    auto session = std::make_shared<std::string>();
    auto config = std::make_shared<std::string>();
    auto inputs = std::make_shared<std::vector<std::string>>();
    auto deps = std::make_shared<std::vector<std::string>>();
    auto otags = std::make_shared<std::vector<std::string>>();
    auto prefer = std::make_shared<std::string>();
    submit->add_option("--instance", *inst, "instance id")->required();
    submit->add_option("--app", *tapp, "app id")->required();
    submit->add_option("--user", *user, "submitting user");
    submit->add_option("--subject", *subject, "subject label");
    submit->add_option("--session", *session, "session label");
    submit->add_option("--config", *config, "config JSON object");
    submit->add_option("--input", *inputs,
                       "slot=object or slot=task:<task>:<output slot>")->expected(1);
    submit->add_option("--dep", *deps, "task id this task depends on")->expected(1);
    submit->add_option("--output-tag", *otags, "tag stamped onto outputs")->expected(1);
    submit->add_option("--prefer", *prefer, "preferred resource id");
    submit->callback([&cli, inst, tapp, user, subject, session, config, inputs, deps, otags,
                      prefer] {
      sched::SubmitRequest req;
      req.instance = *inst;
      req.app = *tapp;
      req.user = *user;
      req.subject = *subject;
      req.session = *session;
      if (!config->empty()) req.config = parse_json_arg(*config, "--config");
      for (const auto& kv : *inputs) {
        auto [slot, value] = split_kv(kv, "--input");
        req.bindings[slot] = value;
      }
      req.deps = *deps;
      req.output_tags = *otags;
      if (!prefer->empty()) req.preferred_resource = *prefer;
      auto& t = cli.platform().sched.submit_task(req);
      if (!cli.emit(t)) print_task_line(t);
    });

    auto* status = task->add_subcommand("status", "show one task");
    auto sid = std::make_shared<std::string>();
    status->add_option("id", *sid, "task id")->required();
    status->callback([&cli, sid] {
      const auto& t = cli.platform().sched.get_task(*sid);
      if (!cli.emit(t)) std::cout << json(t).dump(2) << "\n";
    });

    auto* list = task->add_subcommand("list", "list tasks");
    auto linst = std::make_shared<std::string>();
    auto lproj = std::make_shared<std::string>();
    auto lrule = std::make_shared<std::string>();
    auto lsub = std::make_shared<std::string>();
    auto lstates = std::make_shared<std::vector<std::string>>();
    list->add_option("--instance", *linst, "filter by instance");
    list->add_option("--project", *lproj, "filter by project");
    list->add_option("--rule", *lrule, "filter by rule");
    list->add_option("--subject", *lsub, "filter by subject");
    list->add_option("--state", *lstates, "filter by state")->expected(1);
    list->callback([&cli, linst, lproj, lrule, lsub, lstates] {
      sched::TaskFilter f;
      if (!linst->empty()) f.instance = *linst;
      if (!lproj->empty()) f.project = *lproj;
      if (!lrule->empty()) f.rule = *lrule;
      if (!lsub->empty()) f.subject = *lsub;
      for (const auto& s : *lstates) f.states.insert(sched::task_state_from_string(s));
      auto tasks = cli.platform().sched.list_tasks(f);
      if (cli.emit(tasks)) return;
      for (const auto& t : tasks) print_task_line(t);
    });

    auto* stop = task->add_subcommand("stop", "stop a non-terminal task");
    auto stid = std::make_shared<std::string>();
    stop->add_option("id", *stid, "task id")->required();
    stop->callback([&cli, stid] {
      cli.platform().sched.stop_task(*stid);
      const auto& t = cli.platform().sched.get_task(*stid);
      if (!cli.emit(t)) print_task_line(t);
    });

    auto* remove = task->add_subcommand("remove", "remove a task and its work dir");
    auto rmid = std::make_shared<std::string>();
    remove->add_option("id", *rmid, "task id")->required();
    remove->callback([&cli, rmid] {
      cli.platform().sched.remove_task(*rmid);
      const auto& t = cli.platform().sched.get_task(*rmid);
      if (!cli.emit(t)) print_task_line(t);
    });

    auto* events = task->add_subcommand("events", "show a task's state transitions");
    auto evid = std::make_shared<std::string>();
    events->add_option("id", *evid, "task id")->required();
    events->callback([&cli, evid] {
      auto evs = cli.platform().sched.task_events(*evid);
      if (cli.emit(evs)) return;
      for (const auto& e : evs)
        std::cout << "tick=" << e.tick << "  " << (e.from.empty() ? "-" : e.from) << " -> "
                  << e.to << "  " << e.reason << "\n";
    });
  }

  // --- scheduler control --------------------------------------------------
  {
    auto* tick = app.add_subcommand("tick", "advance the scheduler");
    auto count = std::make_shared<int>(1);
    tick->add_option("--count", *count, "ticks to run")->capture_default_str();
    tick->callback([&cli, count] {
      auto& sched = cli.platform().sched;
      for (int i = 0; i < *count; ++i) sched.tick();
      if (!cli.emit(json{{"tick", sched.current_tick()}, {"idle", sched.idle()}}))
        std::cout << "tick=" << sched.current_tick() << (sched.idle() ? "  idle" : "") << "\n";
    });

    auto* run = app.add_subcommand("run", "tick until no task is requested or running");
    auto max_ticks = std::make_shared<int>(10000);
    run->add_option("--max-ticks", *max_ticks, "upper bound")->capture_default_str();
    run->callback([&cli, max_ticks] {
      int used = cli.platform().sched.run_until_idle(*max_ticks);
      auto& sched = cli.platform().sched;
      if (!cli.emit(json{{"ticks", used}, {"tick", sched.current_tick()},
                         {"idle", sched.idle()}}))
        std::cout << "ran " << used << " ticks" << (sched.idle() ? "" : " (not idle)") << "\n";
    });
  }

  // --- rule -------------------------------------------------------------------
  auto* rule = app.add_subcommand("rule", "batch automation rules");
  {
    auto* define = rule->add_subcommand("define", "define a rule");
    auto proj = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto rapp = std::make_shared<std::string>();
    auto user = std::make_shared<std::string>();
    auto selects = std::make_shared<std::vector<std::string>>();
    auto otags = std::make_shared<std::vector<std::string>>();
    auto filter = std::make_shared<std::string>();
    auto config = std::make_shared<std::string>();
    define->add_option("--project", *proj, "project id")->required();
    define->add_option("--name", *name, "rule name")->required();
    define->add_option("--app", *rapp, "app id")->required();
    define->add_option("--user", *user, "submitting user (defaults to project owner)");
    define->add_option("--select", *selects, "slot=tag1,tag2 extra input tags")->expected(1);
    define->add_option("--output-tag", *otags, "tag stamped onto outputs")->expected(1);
    define->add_option("--subject-filter", *filter, "glob over subject names");
    define->add_option("--config", *config, "config JSON object");
    define->callback([&cli, proj, name, rapp, user, selects, otags, filter, config] {
      pipeline::RuleSpec spec;
      spec.project = *proj;
      spec.name = *name;
      spec.app = *rapp;
      spec.user = *user;
      for (const auto& kv : *selects) {
        auto [slot, tags] = split_kv(kv, "--select");
        pipeline::SlotSelector sel;
        for (auto& t : util::split(tags, ','))
          if (!t.empty()) sel.tags.push_back(t);
        spec.selectors[slot] = std::move(sel);
      }
      spec.output_tags = *otags;
      if (!filter->empty()) spec.subject_filter = *filter;
      if (!config->empty()) spec.config = parse_json_arg(*config, "--config");
      auto& r = cli.platform().pipeline.define_rule(spec);
      if (!cli.emit(r)) std::cout << r.id << "\n";
    });

    auto* list = rule->add_subcommand("list", "list rules");
    auto lproj = std::make_shared<std::string>();
    list->add_option("--project", *lproj, "filter by project");
    list->callback([&cli, lproj] {
      std::optional<std::string> p;
      if (!lproj->empty()) p = *lproj;
      auto rules = cli.platform().pipeline.list(p);
      if (cli.emit(rules)) return;
      for (const auto& r : rules)
        std::cout << r.id << "  " << r.name << "  app=" << r.app
                  << (r.active ? "" : "  inactive") << "\n";
    });

    auto* evaluate = rule->add_subcommand("evaluate", "evaluate one rule once");
    auto eid = std::make_shared<std::string>();
    evaluate->add_option("id", *eid, "rule id")->required();
    evaluate->callback([&cli, eid] {
      auto ev = cli.platform().pipeline.evaluate_rule(*eid);
      if (cli.emit(ev)) return;
      for (const auto& s : ev.submissions)
        std::cout << "submitted " << s.task << "  subject=" << s.subject << "\n";
      for (const auto& s : ev.skips)
        std::cout << "skip " << s.subject << "  " << s.reason
                  << (s.detail.empty() ? "" : "  " + s.detail) << "\n";
      for (const auto& n : ev.notes)
        std::cout << "note " << n.subject << "  " << n.detail << "\n";
    });

    auto* run = rule->add_subcommand("run", "evaluate rules and tick until settled");
    auto rproj = std::make_shared<std::string>();
    auto rounds = std::make_shared<int>(50);
    run->add_option("--project", *rproj, "restrict to one project");
    run->add_option("--max-rounds", *rounds, "evaluation rounds")->capture_default_str();
    run->callback([&cli, rproj, rounds] {
      std::optional<std::string> p;
      if (!rproj->empty()) p = *rproj;
      auto summary = cli.platform().pipeline.run_rules(p, *rounds);
      if (cli.emit(summary)) return;
      std::cout << "rounds=" << summary.rounds << "  submitted=" << summary.submitted
                << "  finished=" << summary.finished << "  failed=" << summary.failed << "\n";
      for (const auto& [reason, n] : summary.skip_counts)
        std::cout << "  skip " << reason << "=" << n << "\n";
    });

    auto* rearm = rule->add_subcommand("rearm", "clear failed tasks for resubmission");
    auto rid = std::make_shared<std::string>();
    auto subject = std::make_shared<std::string>();
    rearm->add_option("id", *rid, "rule id")->required();
    rearm->add_option("--subject", *subject, "only this subject");
    rearm->callback([&cli, rid, subject] {
      std::optional<std::string> s;
      if (!subject->empty()) s = *subject;
      int n = cli.platform().pipeline.rearm(*rid, s);
      if (!cli.emit(json{{"cleared", n}})) std::cout << "cleared " << n << "\n";
    });

    auto* active = rule->add_subcommand("active", "toggle a rule");
    auto aid = std::make_shared<std::string>();
    auto off = std::make_shared<bool>(false);
    active->add_option("id", *aid, "rule id")->required();
    active->add_flag("--off", *off, "deactivate instead of activate");
    active->callback([&cli, aid, off] {
      cli.platform().pipeline.set_active(*aid, !*off);
      const auto& r = cli.platform().pipeline.get(*aid);
      if (!cli.emit(r)) std::cout << r.id << (r.active ? "  active" : "  inactive") << "\n";
    });
  }

  // --- provenance -----------------------------------------------------------
  auto* provenance = app.add_subcommand("provenance", "inspect object ancestry");
  {
    auto* show = provenance->add_subcommand("show", "show an object's provenance record");
    auto oid = std::make_shared<std::string>();
    show->add_option("object", *oid, "object id")->required();
    show->callback([&cli, oid] {
      const auto& rec = cli.platform().provenance.get(*oid);
      if (!cli.emit(rec)) std::cout << json(rec).dump(2) << "\n";
    });

    auto* graph = provenance->add_subcommand("graph", "print the ancestry graph");
    auto gid = std::make_shared<std::string>();
    auto dot = std::make_shared<bool>(false);
    graph->add_option("object", *gid, "object id")->required();
    graph->add_flag("--dot", *dot, "emit graphviz instead of JSON");
    graph->callback([&cli, gid, dot] {
      auto g = cli.platform().provenance.graph(*gid);
      if (*dot)
        std::cout << prov::ProvenanceStore::graph_dot(g);
      else
        std::cout << g.dump(2) << "\n";
    });
  }

  // --- reproduce ---------------------------------------------------------------
  {
    auto* reproduce = app.add_subcommand("reproduce", "emit a replay script for an object");
    auto oid = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    reproduce->add_option("object", *oid, "object id")->required();
    reproduce->add_option("--out", *out, "output directory")->required();
    reproduce->callback([&cli, oid, out] {
      auto& pf = cli.platform();
      auto plan = pf.provenance.emit_reproduce_script(*oid, *out, pf.wh, pf.apps);
      if (cli.emit(json{{"script", plan.script_path.string()},
                        {"imported", plan.imported},
                        {"tasks", plan.tasks}}))
        return;
      std::cout << plan.script_path.string() << "\n";
      for (const auto& i : plan.imported) std::cout << "import " << i << "\n";
      for (const auto& t : plan.tasks) std::cout << "replay " << t << "\n";
    });
  }

  // --- publication ---------------------------------------------------------
  auto* pub = app.add_subcommand("pub", "snapshot publications");
  {
    auto* create = pub->add_subcommand("create", "publish a set of objects");
    auto proj = std::make_shared<std::string>();
    auto name = std::make_shared<std::string>();
    auto objects = std::make_shared<std::vector<std::string>>();
    create->add_option("--project", *proj, "project id")->required();
    create->add_option("--name", *name, "publication name")->required();
    create->add_option("--object", *objects, "object id")->expected(1)->required();
    create->callback([&cli, proj, name, objects] {
      auto& p = cli.platform().provenance.create_publication(*proj, *name, *objects,
                                                             cli.platform().wh);
      if (!cli.emit(p)) std::cout << p.id << "  doi=" << p.doi << "\n";
    });

    auto* list = pub->add_subcommand("list", "list publications");
    list->callback([&cli] {
      auto pubs = cli.platform().provenance.list_publications();
      if (cli.emit(pubs)) return;
      for (const auto& p : pubs)
        std::cout << p.id << "  " << p.name << "  doi=" << p.doi
                  << "  objects=" << p.objects.size() << "\n";
    });
  }

  // --- analytics -------------------------------------------------------------
  {
    auto* collate = app.add_subcommand("collate", "flatten feature tables into tidy rows");
    auto proj = std::make_shared<std::string>();
    auto dtype = std::make_shared<std::string>();
    auto tags = std::make_shared<std::vector<std::string>>();
    auto subject = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto lax = std::make_shared<bool>(false);
    collate->add_option("--project", *proj, "project id")->required();
    collate->add_option("--datatype", *dtype, "feature datatype")->required();
    collate->add_option("--tag", *tags, "require tag")->expected(1);
    collate->add_option("--subject", *subject, "subject label");
    collate->add_option("--out", *out, "write <out>.tsv and <out>.json");
    collate->add_flag("--lax", *lax, "skip malformed tables instead of failing");
    collate->callback([&cli, proj, dtype, tags, subject, out, lax] {
      warehouse::QueryFilter f;
      f.include_tags = *tags;
      if (!subject->empty()) f.subject = *subject;
      auto& pf = cli.platform();
      auto result = analytics::collate_features(pf.wh, pf.provenance, *proj, *dtype, f, !*lax);
      for (const auto& d : result.diagnostics) std::cerr << "warning: " << d << "\n";
      if (!out->empty()) {
        analytics::write_collation(result, *out);
        std::cout << *out << ".tsv\n" << *out << ".json\n";
        return;
      }
      if (cli.emit(json{{"tsv", analytics::tidy_tsv(result.table)},
                        {"sidecar", analytics::collate_sidecar(result)}}))
        return;
      std::cout << analytics::tidy_tsv(result.table);
    });

    auto* reference = app.add_subcommand("reference", "reference ranges over tidy tables");
    auto* build = reference->add_subcommand("build", "aggregate mean/sd per structure");
    auto bproj = std::make_shared<std::string>();
    auto bdtype = std::make_shared<std::string>();
    auto btags = std::make_shared<std::vector<std::string>>();
    auto outlier = std::make_shared<double>(3.0);
    auto source = std::make_shared<std::string>();
    auto bout = std::make_shared<std::string>();
    build->add_option("--project", *bproj, "project id")->required();
    build->add_option("--datatype", *bdtype, "feature datatype")->required();
    build->add_option("--tag", *btags, "require tag")->expected(1);
    build->add_option("--outlier-k", *outlier, "drop values beyond k deviations")
        ->capture_default_str();
    build->add_option("--source", *source, "source label (defaults to project)");
    build->add_option("--out", *bout, "write the reference JSON here");
    build->callback([&cli, bproj, bdtype, btags, outlier, source, bout] {
      warehouse::QueryFilter f;
      f.include_tags = *btags;
      auto& pf = cli.platform();
      auto result = analytics::collate_features(pf.wh, pf.provenance, *bproj, *bdtype, f);
      auto built = analytics::build_reference(
          result.table, *outlier, source->empty() ? *bproj : *source);
      for (const auto& d : built.diagnostics) std::cerr << "warning: " << d << "\n";
      auto text = analytics::reference_text(built.reference);
      if (!bout->empty()) {
        util::atomic_write_file(*bout, text);
        std::cout << *bout << "\n";
        return;
      }
      std::cout << text;
    });

    auto* classify = reference->add_subcommand("classify", "place a value in its band");
    auto rfile = std::make_shared<std::string>();
    auto structure = std::make_shared<std::string>();
    auto measure = std::make_shared<std::string>();
    auto value = std::make_shared<double>(0.0);
    classify->add_option("--reference", *rfile, "reference JSON file")->required()
        ->check(CLI::ExistingFile);
    classify->add_option("--structure", *structure, "structure name")->required();
    classify->add_option("--measure", *measure, "measure name")->required();
    classify->add_option("--value", *value, "observed value")->required();
    classify->callback([&cli, rfile, structure, measure, value] {
      auto ref = analytics::reference_from_json(json::parse(util::read_file(*rfile)));
      auto band = analytics::classify_band(ref, *structure, *measure, *value);
      if (!cli.emit(json{{"band", analytics::to_string(band)}}))
        std::cout << analytics::to_string(band) << "\n";
    });
  }

  // --- sim ---------------------------------------------------------------------
  auto* sim = app.add_subcommand("sim", "simulated multi-resource benchmarks");
  {
    auto* run = sim->add_subcommand("run", "run a scenario file against this store");
    auto file = std::make_shared<std::string>();
    run->add_option("scenario", *file, "scenario JSON")->required()->check(CLI::ExistingFile);
    run->callback([&cli, file] {
      auto scenario = platform::scenario_from_json(json::parse(util::read_file(*file)));
      auto metrics = platform::run_scenario(cli.platform(), scenario);
      std::cout << platform::metrics_json(metrics).dump(2) << "\n";
    });
  }

  // --- serve --------------------------------------------------------------------
  {
    auto* serve = app.add_subcommand("serve", "serve the JSON API over HTTP");
    auto host = std::make_shared<std::string>("127.0.0.1");
    auto port = std::make_shared<int>(8080);
    auto tick_seconds = std::make_shared<double>(1.0);
    serve->add_option("--host", *host, "bind address")->capture_default_str();
    serve->add_option("--port", *port, "bind port")->capture_default_str();
    serve->add_option("--tick-seconds", *tick_seconds,
                      "scheduler cadence, 0 for manual ticking")->capture_default_str();
    serve->callback([&cli, host, port, tick_seconds] {
      api::ServerOptions opts;
      opts.host = *host;
      opts.port = *port;
      opts.tick_seconds = *tick_seconds;
      api::ApiServer server(cli.platform(), opts);
      std::cerr << "serving on " << *host << ":" << *port << "\n";
      if (!server.serve()) fail(ErrorCode::io, "could not bind " + *host + ":" +
                                                   std::to_string(*port));
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.code_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
