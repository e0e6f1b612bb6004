#pragma once

#include <memory>
#include <string>

#include "berto/pipeline.hpp"

namespace berto {

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

/// Routes one request against a loaded scenario. Used by the HTTP server
/// and directly by tests.
///
///   GET  /health
///   GET  /preferences
///   POST /predict   {"cell_id", "window_end_time" (ms, last history bin), "preference"}
///   POST /simulate  {"preference", "time_range"?: {"start"?, "end"?} (ms, inclusive), "include_traces"?}
///
/// Errors come back as {"error": "..."} with status 400 (bad request),
/// 404 (unknown route or window) or 500.
HttpReply handle_request(const Scenario& scenario, const std::string& method, const std::string& path,
                         const std::string& body);

struct ListenAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

/// "host:port", ":port" or "port".
ListenAddress parse_listen_address(const std::string& s);

/// BERTO_LISTEN if set, otherwise 127.0.0.1:8080.
ListenAddress listen_address_from_env();

/// HTTP front end over handle_request.
class Service {
 public:
  explicit Service(const Scenario& scenario);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port, -1 on failure.
  int bind(const ListenAddress& addr);
  /// Serves until stop() is called.
  bool run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace berto
