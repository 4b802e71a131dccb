#include "orchard/sim.hpp"

#include <algorithm>
#include <sstream>

#include "orchard/digest.hpp"
#include "orchard/errors.hpp"
#include "orchard/json_codec.hpp"
#include "orchard/util.hpp"

namespace orchard::sim {

namespace fs = std::filesystem;
using nlohmann::json;

static void to_json(json& j, const SyntheticOutput& o) {
  if (o.feature) {
    j = json{{"slot", o.slot},
             {"feature", true},
             {"structures", o.structures},
             {"measures", o.measures}};
  } else {
    j = json{{"slot", o.slot}, {"files", o.files}};
  }
}

static void from_json(const json& j, SyntheticOutput& o) {
  j.at("slot").get_to(o.slot);
  o.feature = j.value("feature", false);
  if (o.feature) {
    j.at("structures").get_to(o.structures);
    j.at("measures").get_to(o.measures);
  } else {
    j.at("files").get_to(o.files);
  }
}

std::string compute_key(const fs::path& work_dir, const std::string& version) {
  std::string stream;
  if (fs::exists(work_dir / "inputs"))
    for (const auto& rel : util::list_files(work_dir / "inputs"))
      stream += digest::sha256_file(work_dir / "inputs" / rel) + "  inputs/" + rel + "\n";
  stream += digest::sha256_file(work_dir / "config.json") + "  config.json\n";
  stream += version + "\n";
  return digest::sha256_hex(stream);
}

std::string output_file_content(const std::string& key, const std::string& slot,
                                const std::string& relpath) {
  return digest::sha256_hex(key + "\n" + slot + "\n" + relpath + "\n") + "\n";
}

std::string feature_value(const std::string& key, const std::string& structure,
                          const std::string& measure) {
  std::string h = digest::sha256_hex(key + "\n" + structure + "\n" + measure);
  std::string digits;
  for (char c : h) {
    if (c >= '0' && c <= '9') {
      digits += c;
      if (digits.size() == 6) break;
    }
  }
  auto first = digits.find_first_not_of('0');
  if (first == std::string::npos) return "0";
  return digits.substr(first);
}

std::string feature_table(const std::string& key, const SyntheticOutput& out) {
  std::string tsv = "structure\tmeasure\tvalue\n";
  for (const auto& s : out.structures)
    for (const auto& m : out.measures)
      tsv += s + "\t" + m + "\t" + feature_value(key, s, m) + "\n";
  return tsv;
}

void run_transform(const fs::path& work_dir, const SyntheticSpec& spec) {
  std::string key = compute_key(work_dir, spec.version);
  for (const auto& out : spec.outputs) {
    fs::path slot_dir = work_dir / "outputs" / out.slot;
    fs::create_directories(slot_dir);
    if (out.feature) {
      util::atomic_write_file(slot_dir / "features.tsv", feature_table(key, out));
      continue;
    }
    for (const auto& rel : out.files) {
      fs::path target = slot_dir / rel;
      fs::create_directories(target.parent_path());
      util::atomic_write_file(target, output_file_content(key, out.slot, rel));
    }
  }
  util::atomic_write_file(work_dir / "jobid", "job-" + key + "\n");
}

SyntheticSpec load_synthetic_spec(const fs::path& service_dir) {
  auto text = util::read_file_if_exists(service_dir / "synthetic.json");
  if (!text)
    fail(ErrorCode::contract,
         "synthetic.json missing: service at " + service_dir.string() +
             " cannot run on a simulated resource");
  json doc = json::parse(*text);
  SyntheticSpec spec;
  spec.version = doc.value("version", "1.0");
  for (const auto& item : doc.at("outputs")) spec.outputs.push_back(item.get<SyntheticOutput>());
  return spec;
}

static bool safe_token(const std::string& s, bool allow_slash) {
  if (s.empty() || s.front() == '/' || s.find("..") != std::string::npos) return false;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '_' || c == '.' || c == '-' || (allow_slash && c == '/');
    if (!ok) return false;
  }
  return true;
}

static std::string sq(const std::string& s) { return "'" + s + "'"; }

static std::string start_script(const SyntheticSpec& spec) {
  std::ostringstream sh;
  sh << "#!/bin/sh\n"
     << "set -eu\n"
     << "VERSION=" << sq(spec.version) << "\n"
     << "{\n"
     << "  if [ -d inputs ]; then\n"
     << "    find inputs -type f | LC_ALL=C sort | while read -r f; do sha256sum \"$f\"; done\n"
     << "  fi\n"
     << "  sha256sum config.json\n"
     << "  printf '%s\\n' \"$VERSION\"\n"
     << "} > _keystream\n"
     << "KEY=$(sha256sum _keystream | cut -d' ' -f1)\n"
     << "rm -f _keystream\n";
  for (const auto& out : spec.outputs) {
    sh << "mkdir -p " << sq("outputs/" + out.slot) << "\n";
    if (out.feature) {
      sh << "{\n"
         << "  printf 'structure\\tmeasure\\tvalue\\n'\n"
         << "  for S in";
      for (const auto& s : out.structures) sh << " " << sq(s);
      sh << "; do\n"
         << "    for M in";
      for (const auto& m : out.measures) sh << " " << sq(m);
      sh << "; do\n"
         << "      FH=$(printf '%s\\n%s\\n%s' \"$KEY\" \"$S\" \"$M\" | sha256sum | cut -d' ' -f1)\n"
         << "      D=$(printf '%s' \"$FH\" | tr -cd '0-9' | cut -c1-6 | sed 's/^0*//')\n"
         << "      [ -n \"$D\" ] || D=0\n"
         << "      printf '%s\\t%s\\t%s\\n' \"$S\" \"$M\" \"$D\"\n"
         << "    done\n"
         << "  done\n"
         << "} > " << sq("outputs/" + out.slot + "/features.tsv") << "\n";
      continue;
    }
    for (const auto& rel : out.files) {
      fs::path parent = fs::path("outputs/" + out.slot + "/" + rel).parent_path();
      if (parent != fs::path("outputs/" + out.slot))
        sh << "mkdir -p " << sq(parent.generic_string()) << "\n";
      sh << "H=$(printf '%s\\n%s\\n%s\\n' \"$KEY\" " << sq(out.slot) << " " << sq(rel)
         << " | sha256sum | cut -d' ' -f1)\n"
         << "printf '%s\\n' \"$H\" > " << sq("outputs/" + out.slot + "/" + rel) << "\n";
    }
  }
  sh << "printf 'job-%s\\n' \"$KEY\" > jobid\n"
     << ": > _done\n"
     << "exit 0\n";
  return sh.str();
}

static const char* kStatusScript =
    "#!/bin/sh\n"
    "if [ -f _fail ]; then exit 2; fi\n"
    "if [ -f _done ]; then exit 1; fi\n"
    "if [ -f jobid ]; then exit 0; fi\n"
    "exit 3\n";

static const char* kStopScript =
    "#!/bin/sh\n"
    ": > _stopped\n"
    "exit 0\n";

static void write_executable(const fs::path& path, const std::string& body) {
  util::atomic_write_file(path, body);
  fs::permissions(path,
                  fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                      fs::perms::others_read | fs::perms::others_exec,
                  fs::perm_options::replace);
}

void make_synthetic_app(const fs::path& service_dir, const SyntheticAppSpec& spec) {
  if (spec.name.empty()) fail(ErrorCode::validation, "app name must not be empty");
  if (spec.outputs.empty()) fail(ErrorCode::validation, "synthetic app needs at least one output");
  SyntheticSpec synth;
  synth.version = spec.version;
  for (const auto& slot : spec.outputs) {
    auto it = spec.payloads.find(slot.slot_id);
    if (it == spec.payloads.end())
      fail(ErrorCode::validation, "no payload for output slot " + slot.slot_id);
    SyntheticOutput out = it->second;
    out.slot = slot.slot_id;
    if (!safe_token(out.slot, false))
      fail(ErrorCode::validation, "slot id not shell safe: " + out.slot);
    if (out.feature) {
      if (out.structures.empty() || out.measures.empty())
        fail(ErrorCode::validation, "feature payload needs structures and measures");
      std::sort(out.structures.begin(), out.structures.end());
      std::sort(out.measures.begin(), out.measures.end());
      for (const auto& s : out.structures)
        if (!safe_token(s, false)) fail(ErrorCode::validation, "structure not shell safe: " + s);
      for (const auto& m : out.measures)
        if (!safe_token(m, false)) fail(ErrorCode::validation, "measure not shell safe: " + m);
    } else {
      if (out.files.empty())
        fail(ErrorCode::validation, "payload for slot " + out.slot + " lists no files");
      std::sort(out.files.begin(), out.files.end());
      for (const auto& f : out.files)
        if (!safe_token(f, true)) fail(ErrorCode::validation, "file path not shell safe: " + f);
    }
    synth.outputs.push_back(std::move(out));
  }

  fs::create_directories(service_dir);
  json app{{"name", spec.name},
           {"version", spec.version},
           {"inputs", spec.inputs},
           {"outputs", spec.outputs},
           {"config", spec.config}};
  util::atomic_write_file(service_dir / "app.json", app.dump(2) + "\n");
  json synth_doc{{"version", synth.version}, {"outputs", synth.outputs}};
  util::atomic_write_file(service_dir / "synthetic.json", synth_doc.dump(2) + "\n");
  write_executable(service_dir / "start", start_script(synth));
  write_executable(service_dir / "status", kStatusScript);
  write_executable(service_dir / "stop", kStopScript);
}

void SimBackend::start(const exec::StartContext& ctx) {
  SyntheticSpec spec = load_synthetic_spec(ctx.work_dir);
  util::atomic_write_file(ctx.work_dir / "_dispatch_tick",
                          std::to_string(ctx.current_tick) + "\n");
  util::atomic_write_file(ctx.work_dir / "_sim_latency",
                          std::to_string(ctx.latency_ticks) + "\n");
  if (ctx.inject_failure) {
    util::atomic_write_file(ctx.work_dir / "_sim_fail", "");
    util::atomic_write_file(ctx.work_dir / "jobid",
                            "job-" + compute_key(ctx.work_dir, spec.version) + "\n");
    return;
  }
  run_transform(ctx.work_dir, spec);
}

exec::JobStatus SimBackend::status(const fs::path& work_dir, std::int64_t current_tick) {
  auto dispatch = util::read_file_if_exists(work_dir / "_dispatch_tick");
  auto latency = util::read_file_if_exists(work_dir / "_sim_latency");
  if (!dispatch || !latency) return exec::JobStatus::kUnknown;
  std::int64_t elapsed = current_tick - std::stoll(*dispatch);
  if (elapsed <= std::stoll(*latency)) return exec::JobStatus::kRunning;
  if (fs::exists(work_dir / "_sim_fail")) return exec::JobStatus::kFailed;
  return exec::JobStatus::kFinished;
}

void SimBackend::stop(const fs::path& work_dir) {
  util::atomic_write_file(work_dir / "_stopped", "");
}

}  // namespace orchard::sim
