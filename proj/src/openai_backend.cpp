#include <regex>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "oversight/gateway.hpp"

namespace oversight {

OpenAiBackend::OpenAiBackend(OpenAiConfig config) : config_(std::move(config)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.base_url, m, kUrl)) {
    throw Error(ErrorCode::kConfig, "invalid base URL: " + config_.base_url);
  }
  origin_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

nlohmann::json OpenAiBackend::request_body(const std::string& model, const ChatRequest& request,
                                           const ChatParams& params) {
  return nlohmann::json{{"model", model},
                        {"messages", request.messages},
                        {"temperature", params.temperature},
                        {"max_tokens", params.max_tokens}};
}

BackendReply OpenAiBackend::complete(const ChatRequest& request) {
  const ChatParams params = request.params.value_or(default_params(request.model_role));
  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(params.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(params.timeout).count() % 1'000'000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const std::string body = request_body(config_.model, request, params).dump();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::kTransportError, "chat request failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw Error(ErrorCode::kTransportError, "HTTP " + std::to_string(res->status), res->body);
  }
  if (res->status >= 400) {
    throw Error(ErrorCode::kBackendRefusal, "HTTP " + std::to_string(res->status), res->body);
  }

  BackendReply reply;
  try {
    const auto doc = nlohmann::json::parse(res->body);
    reply.content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (auto u = doc.find("usage"); u != doc.end() && u->is_object()) {
      reply.usage.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      reply.usage.completion_tokens = u->value("completion_tokens", std::int64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kTransportError, std::string("unreadable completion: ") + e.what(),
                res->body);
  }
  return reply;
}

}  // namespace oversight
