#pragma once

#include <memory>
#include <string>

#include "shiftbench/workbench.hpp"

namespace shiftbench::workbench {

/// HTTP/JSON front end for a Workbench, routes under /v1:
///   POST /v1/models, /v1/estimate, /v1/worst-case, /v1/sweep
///   GET  /v1/runs, /v1/runs/{id}, /v1/health
/// Requests run on httplib's worker pool; the RunStore serializes writes.
class Server {
public:
  explicit Server(Workbench& workbench);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds host:port (port 0 picks a free port). Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); returns false if the listener failed.
  bool run();
  void stop();
  void wait_until_ready() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace shiftbench::workbench
