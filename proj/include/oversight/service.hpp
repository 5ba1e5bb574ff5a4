#pragma once

// REST surface over the engine.  Every handler is also callable in-process,
// which is how the CLI and the unit tests drive it without a socket.
//
//   POST /v1/sessions               {query, client_token?}   -> 201 {session_id, tree, version}
//   GET  /v1/sessions                                         -> {sessions: [...]}
//   GET  /v1/sessions/{id}                                    -> status summary
//   GET  /v1/sessions/{id}/next                               -> question | node_complete | all_complete
//   POST /v1/sessions/{id}/answer   {node_path, answer}       -> {parsed_feedback}
//   GET  /v1/sessions/{id}/tree                               -> current tree + revision metadata
//   POST /v1/sessions/{id}/prd      {intermediate}            -> {prd_text}
//   GET  /healthz
// Errors are {code, message, detail}.

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "oversight/config.hpp"
#include "oversight/prompts.hpp"

namespace oversight {

struct HttpResult {
  int status = 200;
  nlohmann::ordered_json body;
};

/// HTTP status for an error code.
int http_status_for(ErrorCode code) noexcept;
HttpResult error_result(const Error& error);

class Service {
 public:
  /// Uses build_gateway(config) when no gateway is supplied.  Scans the
  /// storage root so capacity accounts for unfinished sessions on disk.
  Service(AppConfig config, const PromptLibrary& prompts, std::shared_ptr<Gateway> gateway = nullptr);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpResult create_session(const std::string& body);
  HttpResult list_sessions();
  HttpResult session_summary(const std::string& id);
  HttpResult next(const std::string& id);
  HttpResult answer(const std::string& id, const std::string& body);
  HttpResult tree(const std::string& id);
  HttpResult prd(const std::string& id, const std::string& body);

  /// Binds and serves on a background thread; returns the bound port
  /// (config port 0 picks a free one).  Throws kConfig if binding fails.
  int start();
  /// Binds and serves on the calling thread until stop().
  void serve_forever();
  void stop();

  const AppConfig& config() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace oversight
