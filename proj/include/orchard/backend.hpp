#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace orchard::exec {

// Job lifecycle as reported by an app's status hook. Hooks speak in process
// exit codes: 0 running, 1 finished, 2 failed, 3 unknown.
enum class JobStatus { kRunning, kFinished, kFailed, kUnknown };

std::string to_string(JobStatus s);

struct StartContext {
  std::filesystem::path work_dir;
  std::int64_t current_tick = 0;
  // Simulation knobs; process-backed resources ignore them.
  int latency_ticks = 0;
  bool inject_failure = false;
};

// Runs a staged task. The work directory already holds the service copy
// (start/status/stop hooks), staged inputs/ and config.json.
class ExecutionBackend {
 public:
  virtual ~ExecutionBackend() = default;
  virtual void start(const StartContext& ctx) = 0;
  virtual JobStatus status(const std::filesystem::path& work_dir, std::int64_t current_tick) = 0;
  virtual void stop(const std::filesystem::path& work_dir) = 0;
};

// Forks the hook executables as real processes, capturing each hook's
// stdout and stderr to <hook>.log inside the work directory.
class ProcessBackend : public ExecutionBackend {
 public:
  void start(const StartContext& ctx) override;
  JobStatus status(const std::filesystem::path& work_dir, std::int64_t current_tick) override;
  void stop(const std::filesystem::path& work_dir) override;
};

// Runs a hook from inside work_dir with output appended to <hook>.log.
// Returns the hook's exit code; throws on exec failure or signal death.
int run_hook(const std::filesystem::path& work_dir, const std::string& hook);

}  // namespace orchard::exec
