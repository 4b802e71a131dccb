#include "orchard/backend.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "orchard/errors.hpp"

namespace orchard::exec {

namespace fs = std::filesystem;

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::kRunning: return "running";
    case JobStatus::kFinished: return "finished";
    case JobStatus::kFailed: return "failed";
    case JobStatus::kUnknown: return "unknown";
  }
  return "unknown";
}

int run_hook(const fs::path& work_dir, const std::string& hook) {
  fs::path log = work_dir / (hook + ".log");
  pid_t pid = ::fork();
  if (pid < 0) fail(ErrorCode::io, std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    if (::chdir(work_dir.c_str()) != 0) _exit(127);
    int fd = ::open((hook + ".log").c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDOUT_FILENO);
      ::dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    std::string rel = "./" + hook;
    ::execl(rel.c_str(), rel.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  int wstatus = 0;
  if (::waitpid(pid, &wstatus, 0) < 0)
    fail(ErrorCode::io, std::string("waitpid failed: ") + std::strerror(errno));
  if (WIFSIGNALED(wstatus))
    fail(ErrorCode::contract,
         hook + " killed by signal " + std::to_string(WTERMSIG(wstatus)));
  if (!WIFEXITED(wstatus)) fail(ErrorCode::contract, hook + " did not exit normally");
  return WEXITSTATUS(wstatus);
}

void ProcessBackend::start(const StartContext& ctx) {
  int rc = run_hook(ctx.work_dir, "start");
  if (rc != 0)
    fail(ErrorCode::contract, "start exited with code " + std::to_string(rc));
}

JobStatus ProcessBackend::status(const fs::path& work_dir, std::int64_t) {
  switch (run_hook(work_dir, "status")) {
    case 0: return JobStatus::kRunning;
    case 1: return JobStatus::kFinished;
    case 2: return JobStatus::kFailed;
    default: return JobStatus::kUnknown;
  }
}

void ProcessBackend::stop(const fs::path& work_dir) { run_hook(work_dir, "stop"); }

}  // namespace orchard::exec
