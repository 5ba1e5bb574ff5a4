#pragma once

// Chat-completion access for every model role.  Backends speak one request
// at a time; the Gateway adds role defaults, retries and transcript capture.

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oversight/error.hpp"
#include "oversight/prompts.hpp"

namespace oversight {

enum class ModelRole { kInteractionPolicy, kTreeUpdater, kDocGenerator, kUserSim, kJudge };

inline constexpr std::array<ModelRole, 5> kAllRoles = {
    ModelRole::kInteractionPolicy, ModelRole::kTreeUpdater, ModelRole::kDocGenerator,
    ModelRole::kUserSim, ModelRole::kJudge};

std::string_view model_role_name(ModelRole role) noexcept;
ModelRole model_role_from_name(std::string_view name);

enum class MessageRole { kSystem, kUser, kAssistant };

std::string_view message_role_name(MessageRole role) noexcept;
MessageRole message_role_from_name(std::string_view name);

struct ChatMessage {
  MessageRole role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatParams {
  double temperature = 0.0;
  int max_tokens = 4096;
  std::chrono::milliseconds timeout{120'000};
};

/// 0.7 for dialogue roles, 0.0 for judge/updater/generator.
ChatParams default_params(ModelRole role);

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ChatRequest {
  ModelRole model_role = ModelRole::kInteractionPolicy;
  std::vector<ChatMessage> messages;
  std::optional<ChatParams> params;  // role default when absent
  std::optional<PromptId> template_id;
  SlotMap slots;  // variables the system prompt was rendered from
};

struct ChatExchange {
  ChatRequest request;
  std::string response;
  Usage usage;
  std::chrono::milliseconds latency{0};
  int attempts = 0;
};

struct BackendReply {
  std::string content;
  Usage usage;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws Error: kTransportError (retryable), kBackendRefusal,
  /// kScriptExhausted or kReplayMismatch.
  virtual BackendReply complete(const ChatRequest& request) = 0;
};

class TranscriptSink {
 public:
  virtual ~TranscriptSink() = default;
  virtual void record(const ChatExchange& exchange) = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

class Gateway {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Gateway();

  void set_backend(ModelRole role, std::shared_ptr<ChatBackend> backend);
  void set_params(ModelRole role, ChatParams params);
  bool has_backend(ModelRole role) const;
  std::shared_ptr<ChatBackend> backend(ModelRole role) const;
  ChatParams params(ModelRole role) const;

  void set_retry_policy(RetryPolicy policy) { retry_ = policy; }
  void set_sleeper(Sleeper sleeper) { sleep_ = std::move(sleeper); }

  /// Safe to call concurrently.  Messages are forwarded byte-for-byte.
  ChatExchange complete(ChatRequest request, TranscriptSink* sink = nullptr) const;

 private:
  std::map<ModelRole, std::shared_ptr<ChatBackend>> backends_;
  std::map<ModelRole, ChatParams> params_;
  RetryPolicy retry_;
  Sleeper sleep_;
};

// --- OpenAI-compatible HTTP backend -----------------------------------------

struct OpenAiConfig {
  std::string base_url;  // e.g. https://api.openai.com/v1
  std::string model;
  std::string api_key;
};

/// POST {base_url}/chat/completions with {model, messages, temperature,
/// max_tokens}; reads choices[0].message.content.  429/5xx and transport
/// failures are retryable; other 4xx surface the body as kBackendRefusal.
class OpenAiBackend : public ChatBackend {
 public:
  explicit OpenAiBackend(OpenAiConfig config);
  BackendReply complete(const ChatRequest& request) override;

  static nlohmann::json request_body(const std::string& model, const ChatRequest& request,
                                     const ChatParams& params);

 private:
  OpenAiConfig config_;
  std::string origin_;       // scheme://host:port
  std::string path_prefix_;  // /v1
};

// --- Scripted backend --------------------------------------------------------

/// One matcher with its canned responses.  All present predicates must hold.
struct ScriptRule {
  std::optional<ModelRole> role;
  std::string contains;         // substring of the last user message
  std::string regex_source;     // ECMAScript regex over the last user message
  std::string system_contains;  // substring of the first system message
  std::optional<PromptId> template_id;
  std::map<std::string, std::string> slot_contains;
  std::vector<std::string> responses;  // consumed in order; last one repeats
  std::optional<std::string> echo_slot;  // respond with this slot's value
  int times = 0;  // 0: responses.size() (1 for echo); -1: unlimited
};

class ScriptedBackend : public ChatBackend {
 public:
  ScriptedBackend(std::vector<ScriptRule> rules, bool strict = true);
  /// {"strict": bool, "rules": [{"role", "match": {...}, "response"|"responses"|"echo_slot", "times"}]}
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& script);
  static std::shared_ptr<ScriptedBackend> from_file(const std::string& path);

  BackendReply complete(const ChatRequest& request) override;
  /// Number of times each rule has fired, in rule order.
  std::vector<int> fire_counts() const;

 private:
  struct Slot {
    ScriptRule rule;
    std::optional<std::regex> regex;
    int limit = 1;
    int fired = 0;
  };
  bool matches(const Slot& slot, const ChatRequest& request) const;

  mutable std::mutex mu_;
  std::vector<Slot> slots_;
  bool strict_;
};

/// Text of the message scripted matchers inspect: the last user message, or
/// the last message of any role when the request has none.
std::string_view last_user_content(const ChatRequest& request);

// --- Replay backend ----------------------------------------------------------

/// Serves responses recorded in a transcript, per model role in record order,
/// and verifies the replayed request messages match the recorded ones.
class ReplayBackend : public ChatBackend {
 public:
  explicit ReplayBackend(const std::vector<nlohmann::json>& records, bool verify_requests = true);
  static std::shared_ptr<ReplayBackend> from_file(const std::string& path, bool verify = true);

  BackendReply complete(const ChatRequest& request) override;

 private:
  struct Entry {
    std::vector<ChatMessage> messages;
    std::string response;
    Usage usage;
  };
  mutable std::mutex mu_;
  std::map<ModelRole, std::vector<Entry>> queues_;
  std::map<ModelRole, std::size_t> cursors_;
  bool verify_;
};

void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);

}  // namespace oversight
