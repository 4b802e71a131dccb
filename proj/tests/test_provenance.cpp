#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/util.hpp"
#include "support/world.hpp"

using namespace orchard;
using sched::SubmitRequest;
using sched::TaskState;
using testsup::World;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

// Uploaded source -> chew -> digestify, run to completion. Returns the ids
// of the source object and both task outputs, in pipeline order.
struct Lineage {
  World w;
  std::string project;
  std::string source;
  std::string mid;
  std::string leaf;
  std::string t1;
  std::string t2;

  Lineage() {
    auto& pf = *w;
    project = pf.wh.create_project("ada", "study").id;
    auto instance = pf.sched.create_instance(project, "run").id;
    testsup::ensure_datatype(pf, testsup::raw_datatype());
    auto chew = testsup::make_transform_app(pf, "chew", "sample/raw", "sample/raw");
    auto digestify = testsup::make_transform_app(pf, "digestify", "sample/raw", "sample/raw");
    testsup::add_resource(pf, "box", {{chew.id, 10}, {digestify.id, 10}});
    source = testsup::upload_raw(pf, project, "sub-01", "origin bytes\n").id;

    SubmitRequest r1;
    r1.instance = instance;
    r1.app = chew.id;
    r1.user = "ada";
    r1.bindings["in"] = source;
    t1 = pf.sched.submit_task(r1).id;

    SubmitRequest r2 = r1;
    r2.app = digestify.id;
    r2.bindings["in"] = "task:" + t1 + ":out";
    t2 = pf.sched.submit_task(r2).id;

    pf.sched.run_until_idle();
    mid = pf.sched.get_task(t1).outputs.at("out");
    leaf = pf.sched.get_task(t2).outputs.at("out");
  }
};

}  // namespace

TEST_CASE("each archived output gets a full provenance record") {
  Lineage l;
  auto& pf = *l.w;
  REQUIRE(pf.provenance.has(l.leaf));
  const auto& rec = pf.provenance.get(l.leaf);
  CHECK(rec.object == l.leaf);
  CHECK(rec.output_slot == "out");
  CHECK(rec.task == l.t2);
  CHECK(rec.project == l.project);
  CHECK(rec.app == "a00000002");
  CHECK(rec.inputs == std::map<std::string, std::string>{{"in", l.mid}});
  CHECK(rec.resource == "r00000001");
  CHECK(!rec.service_digest.empty());
  CHECK(!rec.config_text.empty());
  CHECK(rec.config_text.back() == '\n');
  auto cfg = nlohmann::json::parse(rec.config_text);
  CHECK(cfg["_task"] == l.t2);
  CHECK(cfg["_inputs"][0]["path"] == "inputs/in");

  CHECK(!pf.provenance.has(l.source));
  CHECK(code_of([&] { pf.provenance.get(l.source); }) == ErrorCode::not_found);
  REQUIRE(pf.provenance.records_for_task(l.t1).size() == 1);
  CHECK(pf.provenance.records_for_task(l.t1)[0].object == l.mid);
  CHECK(pf.provenance.records_for_app("a00000002").size() == 1);
  CHECK(pf.provenance.all().size() == 2);

  l.w.reopen();
  CHECK(l.w->provenance.all().size() == 2);
  CHECK(l.w->provenance.get(l.leaf).inputs.at("in") == l.mid);
  CHECK(l.w->provenance.get(l.leaf).config_text == rec.config_text);
}

TEST_CASE("the ancestry graph reaches back to the uploaded source") {
  Lineage l;
  auto g = l.w->provenance.graph(l.leaf);

  std::map<std::string, std::string> kinds;
  for (const auto& n : g["nodes"]) kinds[n["id"]] = n["kind"];
  CHECK(kinds.size() == 5);
  CHECK(kinds[l.source] == "object");
  CHECK(kinds[l.mid] == "object");
  CHECK(kinds[l.leaf] == "object");
  CHECK(kinds[l.t1] == "task");
  CHECK(kinds[l.t2] == "task");

  std::set<std::tuple<std::string, std::string, std::string>> edges;
  for (const auto& e : g["edges"])
    edges.insert(std::make_tuple(e["from"].get<std::string>(), e["to"].get<std::string>(),
                                 e["label"].get<std::string>()));
  CHECK(edges.count({l.leaf, l.t2, "produced_by"}));
  CHECK(edges.count({l.mid, l.t2, "input_to"}));
  CHECK(edges.count({l.mid, l.t1, "produced_by"}));
  CHECK(edges.count({l.source, l.t1, "input_to"}));
  CHECK(edges.size() == 4);

  auto dot = prov::ProvenanceStore::graph_dot(g);
  CHECK(dot.rfind("digraph provenance {", 0) == 0);
  CHECK(dot.find(l.leaf) != std::string::npos);
  CHECK(dot.find("produced_by") != std::string::npos);
  CHECK(dot.back() == '\n');

  // Uploaded objects have no ancestry to graph.
  CHECK(code_of([&] { l.w->provenance.graph(l.source); }) == ErrorCode::not_found);
}

TEST_CASE("publications bundle objects under a minted doi") {
  Lineage l;
  auto& pf = *l.w;

  CHECK(code_of([&] {
          pf.provenance.create_publication("p99999999", "x", {l.leaf}, pf.wh);
        }) == ErrorCode::not_found);
  CHECK(code_of([&] { pf.provenance.create_publication(l.project, "", {l.leaf}, pf.wh); }) ==
        ErrorCode::validation);
  CHECK(code_of([&] { pf.provenance.create_publication(l.project, "x", {}, pf.wh); }) ==
        ErrorCode::validation);

  auto other = pf.wh.create_project("bob", "elsewhere").id;
  CHECK(code_of([&] {
          pf.provenance.create_publication(other, "x", {l.leaf}, pf.wh);
        }) == ErrorCode::validation);

  auto& pub = pf.provenance.create_publication(l.project, "study data", {l.source, l.leaf},
                                               pf.wh);
  CHECK(pub.id == "pub-1");
  CHECK(pub.doi == "10.25663/sim.pub.1");
  CHECK(pub.objects == std::vector<std::string>{l.source, l.leaf});

  auto manifest = nlohmann::json::parse(
      util::read_file(pf.root() / "publications" / pub.id / "manifest.json"));
  CHECK(manifest["doi"] == pub.doi);
  REQUIRE(manifest["objects"].size() == 2);
  CHECK(manifest["objects"][0]["id"] == l.source);
  CHECK(manifest["objects"][0]["content_hash"] ==
        pf.wh.get_object(l.source).content_hash);

  auto& second = pf.provenance.create_publication(l.project, "more", {l.mid}, pf.wh);
  CHECK(second.doi == "10.25663/sim.pub.2");

  l.w.reopen();
  CHECK(l.w->provenance.get_publication("pub-1").name == "study data");
  CHECK(l.w->provenance.list_publications().size() == 2);
  CHECK(l.w->provenance.create_publication(l.project, "third", {l.leaf}, l.w->wh).doi ==
        "10.25663/sim.pub.3");
}

TEST_CASE("the reproduce script replays the ancestry in dependency order") {
  Lineage l;
  auto& pf = *l.w;
  auto out = l.w.tmp / "replay";
  auto plan = pf.provenance.emit_reproduce_script(l.leaf, out, pf.wh, pf.apps);

  CHECK(plan.script_path == out / "reproduce.sh");
  CHECK(plan.imported == std::vector<std::string>{l.source});
  CHECK(plan.tasks == std::vector<std::string>{l.t1, l.t2});
  REQUIRE(fs::exists(plan.script_path));
  CHECK((fs::status(plan.script_path).permissions() & fs::perms::owner_exec) !=
        fs::perms::none);
  CHECK(fs::exists(out / "services" / "a00000001" / "start"));
  CHECK(fs::exists(out / "services" / "a00000002" / "start"));

  auto script = util::read_file(plan.script_path);
  CHECK(script.rfind("#!/bin/sh\n", 0) == 0);
  CHECK(script.find("set -eu") != std::string::npos);
  CHECK(script.find("sha256sum -c") != std::string::npos);
  CHECK(script.find("imported/" + l.source) != std::string::npos);
  CHECK(script.find("== task " + l.t1) != std::string::npos);
  CHECK(script.find("== task " + l.t2) != std::string::npos);
  // replayed tasks stage their recorded config bytes verbatim
  auto cfg = pf.provenance.get(l.leaf).config_text;
  CHECK(script.find(cfg.substr(0, cfg.size() - 1)) != std::string::npos);
  // the consumer wires its input from the producer's output directory
  CHECK(script.find("tasks/" + l.t1 + "/outputs/out") != std::string::npos);

  SUBCASE("running it rebuilds the object byte for byte") {
    pf.wh.fetch_object(l.source, out / "imported" / l.source);
    std::string cmd = "cd " + out.string() + " && sh reproduce.sh >log.txt 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);

    auto replayed = out / "tasks" / l.t2 / "outputs" / "out";
    auto fetched = out / "fetched";
    pf.wh.fetch_object(l.leaf, fetched);
    CHECK(digest::tree_digest(replayed) == digest::tree_digest(fetched));
  }

  SUBCASE("a modified service is refused") {
    util::atomic_write_file(pf.root() / "services" / "chew" / "extra.txt", "drift\n");
    auto out2 = l.w.tmp / "replay2";
    CHECK(code_of([&] {
            pf.provenance.emit_reproduce_script(l.leaf, out2, pf.wh, pf.apps);
          }) == ErrorCode::integrity);
  }

  SUBCASE("objects without provenance cannot anchor a replay") {
    CHECK(code_of([&] {
            pf.provenance.emit_reproduce_script(l.source, l.w.tmp / "replay3", pf.wh,
                                                pf.apps);
          }) == ErrorCode::not_found);
  }
}

TEST_CASE("a diamond ancestry is emitted once per task") {
  World w;
  auto& pf = *w;
  auto project = pf.wh.create_project("ada", "study").id;
  auto instance = pf.sched.create_instance(project, "run").id;
  testsup::ensure_datatype(pf, testsup::raw_datatype());
  auto gen = testsup::make_transform_app(pf, "gen", "", "sample/raw");

  apps::App merge;
  merge.name = "merge";
  merge.service_ref = (pf.root() / "services" / "gen").string();
  apps::Slot a, b, outs;
  a.slot_id = "a";
  a.datatype = "sample/raw";
  b.slot_id = "b";
  b.datatype = "sample/raw";
  outs.slot_id = "out";
  outs.datatype = "sample/raw";
  merge.input_slots = {a, b};
  merge.output_slots = {outs};
  // reuse gen's synthetic hooks; the transform just needs valid output
  auto merged = pf.apps.register_app(merge);
  testsup::add_resource(pf, "box", {{gen.id, 10}, {merged.id, 10}});

  SubmitRequest g;
  g.instance = instance;
  g.app = gen.id;
  g.user = "ada";
  auto t0 = pf.sched.submit_task(g).id;

  SubmitRequest m;
  m.instance = instance;
  m.app = merged.id;
  m.user = "ada";
  m.bindings["a"] = "task:" + t0 + ":out";
  m.bindings["b"] = "task:" + t0 + ":out";
  auto t1 = pf.sched.submit_task(m).id;
  pf.sched.run_until_idle();
  REQUIRE(pf.sched.get_task(t1).state == TaskState::kFinished);

  auto leaf = pf.sched.get_task(t1).outputs.at("out");
  auto plan = pf.provenance.emit_reproduce_script(leaf, w.tmp / "replay", pf.wh, pf.apps);
  CHECK(plan.tasks == std::vector<std::string>{t0, t1});
  CHECK(plan.imported.empty());
  auto script = util::read_file(plan.script_path);
  // one stanza per task even though t0 feeds both input slots
  auto first = script.find("== task " + t0);
  CHECK(first != std::string::npos);
  CHECK(script.find("== task " + t0, first + 1) == std::string::npos);
}
