#include "oversight/gateway.hpp"

#include <thread>

#include <nlohmann/json.hpp>

namespace oversight {

std::string_view model_role_name(ModelRole role) noexcept {
  switch (role) {
    case ModelRole::kInteractionPolicy: return "interaction_policy";
    case ModelRole::kTreeUpdater: return "tree_updater";
    case ModelRole::kDocGenerator: return "doc_generator";
    case ModelRole::kUserSim: return "user_sim";
    case ModelRole::kJudge: return "judge";
  }
  return "interaction_policy";
}

ModelRole model_role_from_name(std::string_view name) {
  for (auto r : kAllRoles) {
    if (model_role_name(r) == name) return r;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown model role: " + std::string(name));
}

std::string_view message_role_name(MessageRole role) noexcept {
  switch (role) {
    case MessageRole::kSystem: return "system";
    case MessageRole::kUser: return "user";
    case MessageRole::kAssistant: return "assistant";
  }
  return "user";
}

MessageRole message_role_from_name(std::string_view name) {
  if (name == "system") return MessageRole::kSystem;
  if (name == "user") return MessageRole::kUser;
  if (name == "assistant") return MessageRole::kAssistant;
  throw Error(ErrorCode::kInvalidArgument, "unknown message role: " + std::string(name));
}

void to_json(nlohmann::json& j, const ChatMessage& m) {
  j = nlohmann::json{{"role", message_role_name(m.role)}, {"content", m.content}};
}

void from_json(const nlohmann::json& j, ChatMessage& m) {
  m.role = message_role_from_name(j.at("role").get<std::string>());
  m.content = j.at("content").get<std::string>();
}

ChatParams default_params(ModelRole role) {
  ChatParams p;
  p.temperature =
      (role == ModelRole::kInteractionPolicy || role == ModelRole::kUserSim) ? 0.7 : 0.0;
  return p;
}

Gateway::Gateway()
    : sleep_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

void Gateway::set_backend(ModelRole role, std::shared_ptr<ChatBackend> backend) {
  backends_[role] = std::move(backend);
}

void Gateway::set_params(ModelRole role, ChatParams params) { params_[role] = params; }

bool Gateway::has_backend(ModelRole role) const { return backends_.count(role) != 0; }

std::shared_ptr<ChatBackend> Gateway::backend(ModelRole role) const {
  auto it = backends_.find(role);
  return it == backends_.end() ? nullptr : it->second;
}

ChatParams Gateway::params(ModelRole role) const {
  auto it = params_.find(role);
  return it == params_.end() ? default_params(role) : it->second;
}

ChatExchange Gateway::complete(ChatRequest request, TranscriptSink* sink) const {
  if (request.messages.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "chat request has no messages");
  }
  auto backend_it = backends_.find(request.model_role);
  if (backend_it == backends_.end() || !backend_it->second) {
    throw Error(ErrorCode::kConfig,
                "no backend configured for role " + std::string(model_role_name(request.model_role)));
  }
  if (!request.params) request.params = params(request.model_role);

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto budget = request.params->timeout * (retry_.max_retries + 1);
  auto backoff = retry_.initial_backoff;

  ChatExchange exchange;
  for (int attempt = 0;; ++attempt) {
    exchange.attempts = attempt + 1;
    try {
      BackendReply reply = backend_it->second->complete(request);
      exchange.response = std::move(reply.content);
      exchange.usage = reply.usage;
      break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kTransportError) throw;
      const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - start);
      if (attempt >= retry_.max_retries || elapsed + backoff >= budget) {
        throw Error(ErrorCode::kTransportError,
                    std::string(e.what()) + " (after " + std::to_string(attempt + 1) + " attempts)",
                    e.detail());
      }
      sleep_(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry_.multiplier));
    }
  }
  exchange.latency =
      std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - start);
  exchange.request = std::move(request);
  if (sink) sink->record(exchange);
  return exchange;
}

}  // namespace oversight
