#include "oversight/service.hpp"

#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>

#include "oversight/engine.hpp"
#include "oversight/json_text.hpp"
#include "oversight/session_store.hpp"

namespace oversight {
namespace {

using ojson = nlohmann::ordered_json;

HttpResult bad_request(const std::string& message, const std::string& detail = {}) {
  return error_result(Error(ErrorCode::kInvalidArgument, message, detail));
}

nlohmann::json parse_body(const std::string& body) {
  auto j = nlohmann::json::parse(body.empty() ? std::string("{}") : body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kInvalidArgument, "body must be a JSON object");
  return j;
}

ojson tree_json(const RequirementTree& tree) { return ojson::parse(serialize_tree(tree)); }

NodePath path_from_json(const nlohmann::json& j) {
  if (j.is_array()) return j.get<NodePath>();
  if (j.is_string()) {
    NodePath p;
    const std::string s = j.get<std::string>();
    std::size_t start = 0;
    for (;;) {
      const auto pos = s.find(" > ", start);
      p.push_back(text::trim(s.substr(start, pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 3;
    }
    return p;
  }
  throw Error(ErrorCode::kInvalidArgument, "node_path must be an array of names or a \"A > B\" string");
}

bool terminal(SessionStatus s) { return s == SessionStatus::kDone || s == SessionStatus::kFailed; }

}  // namespace

int http_status_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kMalformedTree:
      return 400;
    case ErrorCode::kSessionNotFound:
      return 404;
    case ErrorCode::kAwaitingAnswer:
    case ErrorCode::kSessionNotAwaiting:
    case ErrorCode::kSessionIncomplete:
      return 409;
    case ErrorCode::kNodeMismatch:
      return 422;
    case ErrorCode::kCapacity:
      return 503;
    case ErrorCode::kTransportError:
    case ErrorCode::kBackendRefusal:
    case ErrorCode::kScriptExhausted:
    case ErrorCode::kReplayMismatch:
    case ErrorCode::kTreeInitFailed:
    case ErrorCode::kJudgeParseError:
      return 502;
    default:
      return 500;
  }
}

HttpResult error_result(const Error& e) {
  return {http_status_for(e.code()),
          {{"code", error_code_name(e.code())}, {"message", e.what()}, {"detail", e.detail()}}};
}

struct Service::Impl {
  struct Entry {
    std::mutex mu;  // exclusive transition guard
    std::optional<Session> session;
    std::unique_ptr<TranscriptWriter> transcript;
  };

  AppConfig config;
  const PromptLibrary& prompts;
  std::shared_ptr<Gateway> gateway;
  SessionStore store;
  Engine engine;

  std::mutex map_mu;
  std::map<std::string, std::shared_ptr<Entry>> entries;
  std::set<std::string> active;  // sessions counted against the limit
  std::map<std::string, std::string> client_tokens;
  std::uint64_t id_counter = 0;

  httplib::Server server;
  std::thread thread;

  Impl(AppConfig c, const PromptLibrary& p, std::shared_ptr<Gateway> g)
      : config(std::move(c)),
        prompts(p),
        gateway(g ? std::move(g) : std::shared_ptr<Gateway>(build_gateway(config))),
        store(config.storage_root),
        engine(*gateway, prompts, EngineOptions{config.limits.turn_cap, config.prd_cadence}) {
    for (const auto& id : store.list()) {
      try {
        if (!terminal(store.load(id).status)) active.insert(id);
      } catch (const Error&) {
        // An unreadable snapshot is reported when the session is touched.
      }
    }
    id_counter = store.list().size();
    const auto tokens = config.storage_root / "client_tokens.json";
    if (std::filesystem::exists(tokens)) {
      client_tokens = nlohmann::json::parse(read_file(tokens)).get<std::map<std::string, std::string>>();
    }
  }

  std::string fresh_id() {
    for (;;) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(++id_counter));
      if (!store.exists(buf) && !entries.count(buf)) return buf;
    }
  }

  std::shared_ptr<Entry> entry(const std::string& id) {
    std::lock_guard lock(map_mu);
    if (auto it = entries.find(id); it != entries.end()) return it->second;
    if (!valid_session_id(id) || !store.exists(id)) {
      throw Error(ErrorCode::kSessionNotFound, "no such session: " + id);
    }
    return entries.emplace(id, std::make_shared<Entry>()).first->second;
  }

  // Caller holds e.mu.
  Session& loaded(Entry& e, const std::string& id) {
    if (!e.session) e.session = store.load(id);
    return *e.session;
  }
  TranscriptSink* sink(Entry& e, const std::string& id) {
    if (!e.transcript) e.transcript = store.open_transcript(id, config.fixed_clock);
    return e.transcript.get();
  }

  // Persists a transition and publishes it.  Nothing is published if saving fails.
  void commit(Entry& e, Session next) {
    store.save(next);
    if (terminal(next.status)) {
      std::lock_guard lock(map_mu);
      active.erase(next.id);
    }
    e.session = std::move(next);
  }
};

Service::Service(AppConfig config, const PromptLibrary& prompts, std::shared_ptr<Gateway> gateway)
    : impl_(std::make_unique<Impl>(std::move(config), prompts, std::move(gateway))) {}

Service::~Service() { stop(); }

const AppConfig& Service::config() const noexcept { return impl_->config; }

HttpResult Service::create_session(const std::string& body) {
  auto& m = *impl_;
  try {
    if (body.size() > m.config.limits.max_body_bytes) return bad_request("request body too large");
    const auto j = parse_body(body);
    if (!j.contains("query") || !j.at("query").is_string()) return bad_request("query is required");
    const std::string query = j.at("query").get<std::string>();
    if (text::trim(query).empty()) return bad_request("query must be nonempty");
    if (query.size() > m.config.limits.max_query_bytes) {
      return bad_request("query exceeds " + std::to_string(m.config.limits.max_query_bytes) + " bytes");
    }
    const std::string token = j.contains("client_token") && j.at("client_token").is_string()
                                  ? j.at("client_token").get<std::string>()
                                  : std::string();

    std::shared_ptr<Impl::Entry> e;
    std::string id;
    {
      std::lock_guard lock(m.map_mu);
      if (!token.empty()) {
        if (auto it = m.client_tokens.find(token); it != m.client_tokens.end()) id = it->second;
      }
      if (id.empty()) {
        if (static_cast<int>(m.active.size()) >= m.config.limits.max_sessions) {
          throw Error(ErrorCode::kCapacity, "session limit reached",
                      std::to_string(m.config.limits.max_sessions) + " active sessions");
        }
        id = m.fresh_id();
        e = m.entries.emplace(id, std::make_shared<Impl::Entry>()).first->second;
        m.active.insert(id);  // reserved until initialization fails
      }
    }
    if (!e) {  // replayed client token
      auto existing = m.entry(id);
      std::lock_guard guard(existing->mu);
      const Session& s = m.loaded(*existing, id);
      return {200, {{"session_id", id}, {"tree", tree_json(s.tree())}, {"version", s.tree().version}}};
    }

    std::lock_guard guard(e->mu);
    try {
      Session s = m.engine.initialize_session(query, id, m.sink(*e, id));
      m.commit(*e, std::move(s));
    } catch (...) {
      std::lock_guard lock(m.map_mu);
      m.active.erase(id);
      m.entries.erase(id);
      throw;
    }
    if (!token.empty()) {
      std::lock_guard lock(m.map_mu);
      m.client_tokens[token] = id;
      write_file_atomic(m.config.storage_root / "client_tokens.json", nlohmann::json(m.client_tokens).dump(2) + "\n");
    }
    const Session& s = *e->session;
    return {201, {{"session_id", id}, {"tree", tree_json(s.tree())}, {"version", s.tree().version}}};
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::list_sessions() {
  try {
    return {200, {{"sessions", impl_->store.list()}}};
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::session_summary(const std::string& id) {
  auto& m = *impl_;
  try {
    auto e = m.entry(id);
    std::lock_guard guard(e->mu);
    const Session& s = m.loaded(*e, id);
    const SessionMetrics met = session_metrics(s);
    ojson context = ojson::array();
    for (const auto& p : s.context) context.push_back({{"node_path", p.node_path}, {"summary", p.summary}});
    ojson body = {{"session_id", s.id},
                  {"query", s.origin_query},
                  {"status", session_status_name(s.status)},
                  {"version", s.tree().version},
                  {"completed_nodes", met.completed_nodes},
                  {"total_turns", met.total_turns},
                  {"remaining_nodes", s.tree().unprocessed_target_count()},
                  {"context", std::move(context)},
                  {"has_prd", s.prd.has_value()},
                  {"intermediate_prds", s.intermediate_prds.size()}};
    if (s.status == SessionStatus::kAwaitingUser) {
      const auto& ns = s.node_sessions.back();
      body["pending"] = {{"node_path", ns.node_path}, {"question", *ns.pending_question}};
    }
    return {200, std::move(body)};
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::next(const std::string& id) {
  auto& m = *impl_;
  try {
    auto e = m.entry(id);
    std::lock_guard guard(e->mu);
    Session s = m.loaded(*e, id);
    if (s.status == SessionStatus::kAwaitingUser) {
      throw Error(ErrorCode::kAwaitingAnswer, "session is awaiting an answer", *s.node_sessions.back().pending_question);
    }
    if (s.status == SessionStatus::kDone) return {200, {{"all_complete", true}}};

    TranscriptSink* sink = m.sink(*e, id);
    const NextStep step = m.engine.next_question(s, sink);
    HttpResult out;
    switch (step.kind) {
      case NextStep::Kind::kQuestion:
        out = {200, {{"node_path", step.node_path}, {"question", step.text}}};
        break;
      case NextStep::Kind::kNodeComplete:
        m.engine.complete_node(s, step.node_path, sink);
        out = {200, {{"node_complete", true}, {"node_path", step.node_path}, {"summary", step.text}}};
        break;
      case NextStep::Kind::kAllComplete:
        out = {200, {{"all_complete", true}}};
        break;
    }
    m.commit(*e, std::move(s));
    return out;
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::answer(const std::string& id, const std::string& body) {
  auto& m = *impl_;
  try {
    auto e = m.entry(id);
    const auto j = parse_body(body);
    if (!j.contains("answer") || !j.at("answer").is_string()) return bad_request("answer is required");
    if (!j.contains("node_path")) return bad_request("node_path is required");
    const NodePath path = path_from_json(j.at("node_path"));
    const std::string raw = j.at("answer").get<std::string>();

    std::lock_guard guard(e->mu);
    Session s = m.loaded(*e, id);
    if (s.status != SessionStatus::kAwaitingUser && !s.node_sessions.empty()) {
      // A replay of the answer that was just accepted gets the same reply.
      const auto& ns = s.node_sessions.back();
      if (ns.node_path == path && !ns.turns.empty() && ns.turns.back().answer_raw == raw &&
          !ns.pending_question) {
        return {200, {{"parsed_feedback", ojson::parse(nlohmann::json(ns.turns.back().parsed).dump())},
                      {"replayed", true}}};
      }
    }
    const Turn turn = m.engine.submit_answer(s, path, raw);
    m.commit(*e, std::move(s));
    return {200, {{"parsed_feedback", ojson::parse(nlohmann::json(turn.parsed).dump())}}};
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::tree(const std::string& id) {
  auto& m = *impl_;
  try {
    auto e = m.entry(id);
    std::lock_guard guard(e->mu);
    const Session& s = m.loaded(*e, id);
    ojson revisions = ojson::array();
    for (const auto& r : s.tree_history) {
      revisions.push_back({{"version", r.tree.version},
                           {"cause", r.cause},
                           {"after_node", r.after_node},
                           {"error", r.error ? ojson(*r.error) : ojson(nullptr)},
                           {"warnings", r.warnings}});
    }
    return {200, {{"session_id", s.id},
                  {"status", session_status_name(s.status)},
                  {"version", s.tree().version},
                  {"tree", tree_json(s.tree())},
                  {"revisions", std::move(revisions)}}};
  } catch (const Error& err) {
    return error_result(err);
  }
}

HttpResult Service::prd(const std::string& id, const std::string& body) {
  auto& m = *impl_;
  try {
    auto e = m.entry(id);
    const auto j = parse_body(body);
    const bool intermediate = j.value("intermediate", false);
    std::lock_guard guard(e->mu);
    Session s = m.loaded(*e, id);
    const int completed = static_cast<int>(s.context.size());
    if (intermediate) {
      for (const auto& doc : s.intermediate_prds) {
        if (doc.completed_nodes == completed) {
          return {200, {{"prd_text", doc.text}, {"intermediate", true}, {"completed_nodes", completed}}};
        }
      }
    } else if (s.prd) {
      return {200, {{"prd_text", *s.prd}, {"intermediate", false}, {"completed_nodes", completed}}};
    }
    std::string text = m.engine.generate_prd(s, intermediate, m.sink(*e, id));
    m.commit(*e, std::move(s));
    return {200, {{"prd_text", std::move(text)}, {"intermediate", intermediate}, {"completed_nodes", completed}}};
  } catch (const Error& err) {
    return error_result(err);
  }
}

namespace {

void send(httplib::Response& res, const HttpResult& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json; charset=utf-8");
}

}  // namespace

int Service::start() {
  auto& m = *impl_;
  auto& srv = m.server;
  srv.set_payload_max_length(m.config.limits.max_body_bytes);

  srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    const auto& token = impl_->config.bearer_token;
    if (!token || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") != "Bearer " + *token) {
      send(res, {401, {{"code", "Unauthorized"}, {"message", "missing or wrong bearer token"}, {"detail", ""}}});
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send(res, error_result(e));
    } catch (const std::exception& e) {
      send(res, error_result(Error(ErrorCode::kInternal, e.what())));
    }
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "NotFound" : res.status == 413 ? "PayloadTooLarge" : "HttpError";
    res.set_content(ojson({{"code", code}, {"message", httplib::status_message(res.status)}, {"detail", ""}}).dump(),
                    "application/json; charset=utf-8");
  });

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send(res, {200, {{"ok", true}}}); });
  srv.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  srv.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) { send(res, list_sessions()); });
  srv.Get(R"(/v1/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, session_summary(req.matches[1]));
  });
  srv.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, next(req.matches[1]));
  });
  srv.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/answer)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, answer(req.matches[1], req.body));
  });
  srv.Get(R"(/v1/sessions/([A-Za-z0-9_-]+)/tree)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, tree(req.matches[1]));
  });
  srv.Post(R"(/v1/sessions/([A-Za-z0-9_-]+)/prd)", [this](const httplib::Request& req, httplib::Response& res) {
    send(res, prd(req.matches[1], req.body));
  });

  int port = m.config.listen_port;
  if (port == 0) {
    port = srv.bind_to_any_port(m.config.listen_host);
    if (port < 0) throw Error(ErrorCode::kConfig, "cannot bind " + m.config.listen_host);
  } else if (!srv.bind_to_port(m.config.listen_host, port)) {
    throw Error(ErrorCode::kConfig, "cannot bind " + m.config.listen_host + ":" + std::to_string(port));
  }
  m.thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port;
}

void Service::serve_forever() {
  start();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) impl_->thread.join();
}

}  // namespace oversight
