#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "orchard/sim.hpp"
#include "orchard/util.hpp"
#include "support/temp_dir.hpp"

using namespace orchard;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string out;
  std::string err;
};

// Drives the installed binary as a user would, one process per command, so
// everything observed here crossed a process boundary through the store.
struct CliRig {
  testsup::TempDir tmp;
  fs::path store;
  int run_count = 0;

  CliRig() : store(tmp.path() / "store") {}

  RunResult run_raw(const std::string& cmd_prefix) {
    fs::path out = tmp.path() / ("out-" + std::to_string(++run_count) + ".txt");
    fs::path err = tmp.path() / ("err-" + std::to_string(run_count) + ".txt");
    std::string cmd = cmd_prefix + " > '" + out.string() + "' 2> '" + err.string() + "'";
    int raw = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = util::read_file_if_exists(out).value_or("");
    r.err = util::read_file_if_exists(err).value_or("");
    return r;
  }

  RunResult run(const std::string& args) {
    return run_raw(std::string(ORCHARD_CLI_PATH) + " --store '" + store.string() + "' " + args);
  }

  std::string ok(const std::string& args) {
    auto r = run(args);
    CAPTURE(args);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
    return r.out;
  }

  fs::path stage(const std::string& name, const std::map<std::string, std::string>& files) {
    fs::path dir = tmp.path() / name;
    for (const auto& [rel, content] : files) {
      fs::create_directories((dir / rel).parent_path());
      util::atomic_write_file(dir / rel, content);
    }
    return dir;
  }

  fs::path write_json(const std::string& name, const json& doc) {
    fs::path file = tmp.path() / name;
    util::atomic_write_file(file, doc.dump(2) + "\n");
    return file;
  }

  fs::path raw_datatype_file() {
    return write_json("raw.json",
                      {{"name", "sample/raw"},
                       {"file_spec", json::array({{{"pattern", "data.txt"}, {"required", true}}})}});
  }

  fs::path make_service(const std::string& name) {
    sim::SyntheticAppSpec spec;
    spec.name = name;
    apps::Slot in;
    in.slot_id = "in";
    in.datatype = "sample/raw";
    spec.inputs.push_back(in);
    apps::Slot out;
    out.slot_id = "out";
    out.datatype = "sample/raw";
    spec.outputs.push_back(out);
    sim::SyntheticOutput payload;
    payload.slot = "out";
    payload.files = {"data.txt"};
    spec.payloads["out"] = payload;
    fs::path dir = tmp.path() / "services" / name;
    sim::make_synthetic_app(dir, spec);
    return dir;
  }
};

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

std::string first_token(const std::string& line) {
  return line.substr(0, line.find(' '));
}

}  // namespace

TEST_CASE("projects, datatypes and objects are managed from the command line") {
  CliRig cli;
  CHECK(cli.ok("project create --name study --owner ada") == "p00000001\n");
  CHECK(contains(cli.ok("project list"), "p00000001  study  owner=ada"));

  CHECK(cli.ok("datatype register " + cli.raw_datatype_file().string()) == "sample/raw\n");
  CHECK(contains(cli.ok("datatype list"), "sample/raw  files=1"));
  CHECK(json::parse(cli.ok("datatype show sample/raw"))["name"] == "sample/raw");

  auto staged = cli.stage("up1", {{"data.txt", "hello\n"}});
  auto line = cli.ok("data upload --project p00000001 --datatype sample/raw --dir " +
                     staged.string() + " --subject sub-01 --tag fresh");
  CHECK(contains(line, "d00000001  sample/raw  subject=sub-01  tags=fresh"));
  CHECK(contains(line, "warehouse/p00000001/d00000001.tar"));

  CHECK(contains(cli.ok("data query --project p00000001 --tag fresh"), "d00000001"));
  CHECK(cli.ok("data query --project p00000001 --tag stale").empty());
  CHECK(json::parse(cli.ok("data show d00000001"))["subject"] == "sub-01");

  fs::path fetched = cli.tmp.path() / "fetched";
  cli.ok("data fetch d00000001 --out " + fetched.string());
  CHECK(util::read_file(fetched / "data.txt") == "hello\n");

  SUBCASE("the store honors the environment variable form") {
    auto r = cli.run_raw("ORCHARD_STORE='" + cli.store.string() + "' " + ORCHARD_CLI_PATH +
                         " project list");
    CHECK(r.code == 0);
    CHECK(contains(r.out, "p00000001"));
  }
}

TEST_CASE("failures exit nonzero with a structured stderr line") {
  CliRig cli;
  cli.ok("project create --name study --owner ada");

  auto missing = cli.run("data show d99999999");
  CHECK(missing.code == 1);
  CHECK(missing.out.empty());
  CHECK(missing.err == "error: not_found: unknown object: d99999999\n");

  auto parse = cli.run("project create --name lonely");
  CHECK(parse.code != 0);
  CHECK(parse.code != 1);
  CHECK(contains(parse.err, "--owner"));

  auto unknown = cli.run("frobnicate");
  CHECK(unknown.code != 0);

  auto no_sub = cli.run("");
  CHECK(no_sub.code != 0);

  auto bad_json = cli.run(
      "task submit --instance i1 --app a1 --config '{nope'");
  CHECK(bad_json.code == 1);
  CHECK(bad_json.err == "error: validation: --config is not valid JSON\n");
}

TEST_CASE("a workflow runs end to end across separate processes") {
  CliRig cli;
  cli.ok("project create --name study --owner ada");
  cli.ok("datatype register " + cli.raw_datatype_file().string());
  auto staged = cli.stage("up1", {{"data.txt", "hello\n"}});
  cli.ok("data upload --project p00000001 --datatype sample/raw --dir " + staged.string() +
         " --subject sub-01");

  auto app_line = cli.ok("app register " + cli.make_service("echo").string());
  CHECK(app_line == "a00000001  echo@1.0\n");
  CHECK(contains(cli.ok("app list"), "a00000001  echo@1.0  doi="));
  CHECK(json::parse(cli.ok("app show a00000001"))["name"] == "echo");

  CHECK(contains(cli.ok("app dock --object d00000001"), "a00000001  echo"));
  auto dock = cli.ok("app dock --app a00000001 --object d00000001");
  CHECK(contains(dock, "accepted"));
  CHECK(contains(dock, "in <- d00000001"));

  auto res_line = cli.ok("resource register --name box --latency 0");
  CHECK(res_line == "r00000001  box  shared  status=ok  queue=0  services=0\n");
  CHECK(contains(cli.ok("resource enable r00000001 --app a00000001 --score 25"), "services=1"));
  CHECK(contains(cli.ok("resource monitor r00000001 --status down"), "status=down"));
  CHECK(contains(cli.ok("resource monitor r00000001 --status ok"), "status=ok"));
  CHECK(json::parse(cli.ok("resource show r00000001"))["enabled_services"]["a00000001"] == 25);

  CHECK(cli.ok("instance create --project p00000001 --name run") == "i00000001\n");
  CHECK(contains(cli.ok("instance list --project p00000001"), "i00000001  run"));

  auto submitted = cli.ok(
      "task submit --instance i00000001 --app a00000001 --user ada --subject sub-01 "
      "--input in=d00000001 --output-tag done");
  CHECK(contains(submitted, "t00000001  requested  app=a00000001  subject=sub-01"));

  CHECK(contains(cli.ok("tick"), "tick=1"));
  CHECK(contains(cli.ok("run"), "ran "));
  CHECK(json::parse(cli.ok("task status t00000001"))["state"] == "finished");
  CHECK(contains(cli.ok("task list --instance i00000001 --state finished"), "t00000001"));
  CHECK(cli.ok("task list --instance i00000001 --state failed").empty());

  auto events = cli.ok("task events t00000001");
  CHECK(contains(events, "tick=0  - -> requested  submitted"));
  CHECK(contains(events, "-> running  dispatched to r00000001"));
  CHECK(contains(events, "running -> finished  completed"));

  auto produced = cli.ok("data query --project p00000001 --tag done");
  std::string out_id = first_token(produced);
  REQUIRE(out_id.rfind("d", 0) == 0);

  CHECK(json::parse(cli.ok("provenance show " + out_id))["task"] == "t00000001");
  CHECK(cli.ok("provenance graph " + out_id + " --dot").rfind("digraph provenance {", 0) == 0);
  CHECK(json::parse(cli.ok("provenance graph " + out_id))["nodes"].size() == 3);

  fs::path replay = cli.tmp.path() / "replay";
  auto plan = cli.ok("reproduce " + out_id + " --out " + replay.string());
  CHECK(contains(plan, "reproduce.sh"));
  CHECK(contains(plan, "import d00000001"));
  CHECK(contains(plan, "replay t00000001"));
  CHECK(fs::exists(replay / "reproduce.sh"));

  CHECK(cli.ok("pub create --project p00000001 --name release --object " + out_id) ==
        "pub-1  doi=10.25663/sim.pub.1\n");
  CHECK(contains(cli.ok("pub list"), "pub-1  release  doi=10.25663/sim.pub.1  objects=1"));

  SUBCASE("stop and remove print the tombstone line") {
    cli.ok("task submit --instance i00000001 --app a00000001 --user ada --input in=d00000001");
    CHECK(contains(cli.ok("task stop t00000002"), "t00000002  stopped"));
    CHECK(contains(cli.ok("task remove t00000002"), "t00000002  removed"));
    auto again = cli.run("task stop t00000002");
    CHECK(again.code == 1);
    CHECK(contains(again.err, "error: invalid_transition:"));
  }
}

TEST_CASE("rules are defined and driven from the command line") {
  CliRig cli;
  cli.ok("project create --name study --owner ada");
  cli.ok("datatype register " + cli.raw_datatype_file().string());
  cli.ok("app register " + cli.make_service("count").string());
  cli.ok("resource register --name box --latency 0");
  cli.ok("resource enable r00000001 --app a00000001 --score 20");
  for (const std::string& sub : {"sub-01", "sub-02"}) {
    auto staged = cli.stage("up-" + sub, {{"data.txt", sub + "\n"}});
    cli.ok("data upload --project p00000001 --datatype sample/raw --dir " + staged.string() +
           " --subject " + sub + " --tag src");
  }

  CHECK(cli.ok("rule define --project p00000001 --name 'count all' --app a00000001 "
               "--select in=src --output-tag counted") == "rule00000001\n");
  CHECK(contains(cli.ok("rule list --project p00000001"), "rule00000001  count all"));

  auto summary = cli.ok("rule run --project p00000001");
  CHECK(contains(summary, "submitted=2  finished=2  failed=0"));

  auto eval = cli.ok("rule evaluate rule00000001");
  CHECK(contains(eval, "skip sub-01  output_exists"));
  CHECK(contains(eval, "skip sub-02  output_exists"));

  CHECK(cli.ok("rule rearm rule00000001") == "cleared 0\n");
  CHECK(cli.ok("rule active rule00000001 --off") == "rule00000001  inactive\n");
  CHECK(cli.ok("rule active rule00000001") == "rule00000001  active\n");
}

TEST_CASE("feature tables collate into tidy files and reference bands") {
  CliRig cli;
  cli.ok("project create --name study --owner ada");
  cli.ok("datatype register " +
         cli.write_json("stats.json",
                        {{"name", "sample/stats"},
                         {"file_spec",
                          json::array({{{"pattern", "features.tsv"}, {"required", true}}})},
                         {"is_statistical_feature", true}})
             .string());

  const char* values[] = {"10", "11", "12"};
  for (int i = 0; i < 3; ++i) {
    std::string table =
        std::string("structure\tmeasure\tvalue\nalpha\tsize\t") + values[i] + "\n";
    auto staged = cli.stage("feat-" + std::to_string(i), {{"features.tsv", table}});
    cli.ok("data upload --project p00000001 --datatype sample/stats --dir " + staged.string() +
           " --subject sub-0" + std::to_string(i + 1));
  }

  auto tidy = cli.ok("collate --project p00000001 --datatype sample/stats");
  CHECK(tidy.rfind("subject\tsession\tdatatype\tstructure\tmeasure\tvalue\tsource_object", 0) ==
        0);
  CHECK(contains(tidy, "sub-02\t\tsample/stats\talpha\tsize\t11\td00000002"));

  fs::path stem = cli.tmp.path() / "tidy";
  auto written = cli.ok("collate --project p00000001 --datatype sample/stats --out " +
                        stem.string());
  CHECK(contains(written, stem.string() + ".tsv"));
  CHECK(fs::exists(stem.string() + ".tsv"));
  CHECK(json::parse(util::read_file(stem.string() + ".json"))["row_count"] == 3);

  fs::path ref = cli.tmp.path() / "ref.json";
  CHECK(cli.ok("reference build --project p00000001 --datatype sample/stats --out " +
               ref.string()) == ref.string() + "\n");
  auto doc = json::parse(util::read_file(ref));
  REQUIRE(doc["entries"].size() == 1);
  CHECK(doc["entries"][0]["mean"] == doctest::Approx(11.0));

  CHECK(cli.ok("reference classify --reference " + ref.string() +
               " --structure alpha --measure size --value 11") == "within1\n");
  CHECK(cli.ok("reference classify --reference " + ref.string() +
               " --structure alpha --measure size --value 99") == "outside2\n");
  auto unknown = cli.run("reference classify --reference " + ref.string() +
                         " --structure nope --measure size --value 1");
  CHECK(unknown.code == 1);
  CHECK(contains(unknown.err, "error: not_found:"));

  SUBCASE("strict collation fails on a malformed table unless told otherwise") {
    auto staged = cli.stage("feat-bad", {{"features.tsv", "structure\tmeasure\tvalue\nonly-two\tcells\n"}});
    cli.ok("data upload --project p00000001 --datatype sample/stats --dir " + staged.string() +
           " --subject sub-09");
    auto strict = cli.run("collate --project p00000001 --datatype sample/stats");
    CHECK(strict.code == 1);
    CHECK(contains(strict.err, "error: validation:"));
    auto lax = cli.run("collate --project p00000001 --datatype sample/stats --lax");
    CHECK(lax.code == 0);
    CHECK(contains(lax.err, "warning: "));
    CHECK(contains(lax.out, "sub-02"));
  }
}

TEST_CASE("scenario files run against the store from one command") {
  CliRig cli;
  auto scenario = cli.write_json("scenario.json",
                                 {{"name", "cli-sim"},
                                  {"subjects", 2},
                                  {"chain_length", 2},
                                  {"resources", json::array({{{"name", "simbox"},
                                                              {"latency_ticks", 0}}})}});
  auto metrics = json::parse(cli.ok("sim run " + scenario.string()));
  CHECK(metrics["submitted"] == 4);
  CHECK(metrics["finished"] == 4);
  CHECK(metrics["success_rate"] == doctest::Approx(1.0));
}

TEST_CASE("the json flag switches every command to machine output") {
  CliRig cli;
  auto created = json::parse(cli.ok("--json project create --name study --owner ada"));
  CHECK(created["id"] == "p00000001");
  CHECK(created["owner"] == "ada");

  auto listed = json::parse(cli.ok("--json project list"));
  REQUIRE(listed.is_array());
  CHECK(listed.size() == 1);

  cli.ok("datatype register " + cli.raw_datatype_file().string());
  cli.ok("app register " + cli.make_service("echo").string());
  cli.ok("resource register --name box");
  auto enabled = json::parse(cli.ok("--json resource enable r00000001 --app a00000001 --score 9"));
  CHECK(enabled["enabled_services"]["a00000001"] == 9);

  auto ticked = json::parse(cli.ok("--json tick --count 2"));
  CHECK(ticked["tick"] == 2);
  CHECK(ticked["idle"] == true);
}

TEST_CASE("serving on an unusable address fails cleanly") {
  CliRig cli;
  auto r = cli.run("serve --host 256.256.256.256 --port 8080");
  CHECK(r.code == 1);
  CHECK(contains(r.err, "error: io: could not bind 256.256.256.256:8080"));
}
