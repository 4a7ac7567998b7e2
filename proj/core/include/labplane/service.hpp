#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "labplane/control_plane.hpp"

namespace labplane::http {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string log_path;       // empty keeps the log in memory only
  std::string token;          // empty disables authentication
  std::string scenario_path;  // seeds a fresh log; ignored when the log already has events
};

/// Overlays LABPLANE_LISTEN (host:port), LABPLANE_LOG and LABPLANE_TOKEN.
ServiceOptions apply_environment(ServiceOptions options);

struct Request {
  std::string method;
  std::string path;
  std::string body;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// HTTP front end over one ControlPlane. Reads share a lock; every mutation
/// takes it exclusively, so each response reflects one consistent sequence.
class Service {
 public:
  explicit Service(ControlPlane cp, std::string token = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Replays `log_path` when it holds events, otherwise builds from the
  /// scenario (if any) and writes the log through from then on. A torn final
  /// line is dropped and the file rewritten without it.
  static std::unique_ptr<Service> open(const ServiceOptions& options);

  /// Routes a request in-process; the socket server calls this too.
  Response handle(const Request& request);

  /// Binds; port 0 picks a free one. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Blocks.
  void run();
  /// Blocks until run() is accepting connections.
  void wait_until_ready() const;
  void stop();

  std::uint64_t sequence() const;
  std::string digest() const;
  /// Copy of the log, taken under the read lock.
  std::vector<Event> events() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace labplane::http
