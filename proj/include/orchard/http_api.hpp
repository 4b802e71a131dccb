#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "orchard/platform.hpp"

namespace httplib {
class Server;
}

namespace orchard::api {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  // Scheduler cadence while serving; 0 disables the background ticker and
  // leaves progress to POST /api/v1/tick.
  double tick_seconds = 1.0;
};

// JSON-over-HTTP facade under /api/v1. Every response is wrapped as
// {"ok": true, "data": ...} or {"ok": false, "error": {code, message}}.
// POSTs may carry X-Idempotency-Key; replays return the recorded response.
class ApiServer {
 public:
  ApiServer(platform::Platform& platform, ServerOptions opts = {});
  ~ApiServer();

  // Blocks until stop() is called from another thread.
  bool serve();
  // Binds an ephemeral port and serves on a background thread; returns the
  // port. Used by tests.
  int start_background();
  void stop();

  httplib::Server& raw();

 private:
  void setup_routes();
  void start_ticker();

  platform::Platform& platform_;
  ServerOptions opts_;
  std::unique_ptr<httplib::Server> server_;
  std::mutex mutex_;  // serializes every platform operation
  std::map<std::string, std::pair<int, std::string>> idempotency_;
  std::thread ticker_;
  std::thread serve_thread_;
  std::atomic<bool> running_{false};
};

}  // namespace orchard::api
