#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "orchard/apps.hpp"
#include "orchard/backend.hpp"

namespace orchard::sim {

// Payload produced for one output slot of a synthetic app. A slot either
// synthesizes a fixed set of files or a feature table.
struct SyntheticOutput {
  std::string slot;
  std::vector<std::string> files;
  bool feature = false;
  std::vector<std::string> structures;
  std::vector<std::string> measures;
};

struct SyntheticSpec {
  std::string version = "1.0";
  std::vector<SyntheticOutput> outputs;
};

// Synthetic apps derive every output byte from a key over the staged
// inputs, the exact config.json bytes and the app version. The in-process
// backend and the generated shell hooks implement the same arithmetic, so
// both routes produce identical files for identical stagings.
std::string compute_key(const std::filesystem::path& work_dir, const std::string& version);
std::string output_file_content(const std::string& key, const std::string& slot,
                                const std::string& relpath);
// First six decimal digits found in a hash over (key, structure, measure),
// leading zeros stripped, "0" when none survive.
std::string feature_value(const std::string& key, const std::string& structure,
                          const std::string& measure);
std::string feature_table(const std::string& key, const SyntheticOutput& out);
void run_transform(const std::filesystem::path& work_dir, const SyntheticSpec& spec);

SyntheticSpec load_synthetic_spec(const std::filesystem::path& service_dir);

// Everything needed to write a self-contained service directory: the ABCD
// hook scripts, app.json for registration and synthetic.json driving both
// execution routes.
struct SyntheticAppSpec {
  std::string name;
  std::string version = "1.0";
  std::vector<apps::Slot> inputs;
  std::vector<apps::Slot> outputs;
  std::vector<apps::ConfigField> config;
  std::map<std::string, SyntheticOutput> payloads;  // by output slot id
};

void make_synthetic_app(const std::filesystem::path& service_dir, const SyntheticAppSpec& spec);

// Executes synthetic services in-process. start runs the transform
// immediately; status replays a latency countdown against the scheduler
// tick and reports the failure decision made at dispatch.
class SimBackend : public exec::ExecutionBackend {
 public:
  void start(const exec::StartContext& ctx) override;
  exec::JobStatus status(const std::filesystem::path& work_dir,
                         std::int64_t current_tick) override;
  void stop(const std::filesystem::path& work_dir) override;
};

}  // namespace orchard::sim
