#include "oversight/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oversight/desk_backends.hpp"
#include "oversight/session_store.hpp"

namespace oversight {
namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base.empty()) return path;
  return base / path;
}

void read_backend(const nlohmann::json& j, const std::filesystem::path& base, BackendConfig& b) {
  if (!j.is_object()) throw Error(ErrorCode::kConfig, "role entry must be an object");
  b.backend = j.value("backend", b.backend);
  b.base_url = j.value("base_url", b.base_url);
  b.model = j.value("model", b.model);
  b.api_key = j.value("api_key", b.api_key);
  if (j.contains("api_key_env")) {
    if (const char* v = std::getenv(j.at("api_key_env").get<std::string>().c_str())) b.api_key = v;
  }
  if (j.contains("path")) b.path = resolve(base, j.at("path").get<std::string>());
  b.verify = j.value("verify", b.verify);
  if (j.contains("temperature")) b.temperature = j.at("temperature").get<double>();
  if (j.contains("max_tokens")) b.max_tokens = j.at("max_tokens").get<int>();
  if (j.contains("timeout_ms")) b.timeout_ms = j.at("timeout_ms").get<int>();
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& b) {
  if (b.backend == "openai") {
    if (b.base_url.empty()) throw Error(ErrorCode::kConfig, "openai backend needs base_url");
    return std::make_shared<OpenAiBackend>(OpenAiConfig{b.base_url, b.model, b.api_key});
  }
  if (b.backend == "script") return ScriptedBackend::from_file(b.path.string());
  if (b.backend == "replay") return ReplayBackend::from_file(b.path.string(), b.verify);
  if (b.backend == "desk") return std::make_shared<FeatureEchoPolicy>(read_file(b.path));
  if (b.backend == "containment") return std::make_shared<ContainmentJudge>();
  throw Error(ErrorCode::kConfig, "unknown backend kind: " + b.backend);
}

}  // namespace

void AppConfig::validate() const {
  if (limits.max_sessions <= 0 || limits.turn_cap <= 0 || limits.max_body_bytes == 0 ||
      limits.max_query_bytes == 0) {
    throw Error(ErrorCode::kConfig, "limits must be positive");
  }
  if (prd_cadence <= 0) throw Error(ErrorCode::kConfig, "prd_cadence must be positive");
  if (listen_port < 0 || listen_port > 65535) throw Error(ErrorCode::kConfig, "listen port out of range");
  if (retry.max_retries < 0) throw Error(ErrorCode::kConfig, "max_retries must be >= 0");
}

void set_listen(AppConfig& config, const std::string& listen) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::kConfig, "listen must be host:port");
  if (colon > 0) config.listen_host = listen.substr(0, colon);
  try {
    config.listen_port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kConfig, "bad listen port in " + listen);
  }
}

AppConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  AppConfig c;
  try {
    if (doc.contains("listen")) set_listen(c, doc.at("listen").get<std::string>());
    if (doc.contains("storage_root")) c.storage_root = resolve(base_dir, doc.at("storage_root").get<std::string>());
    if (doc.contains("prompts_dir") && doc.at("prompts_dir").is_string()) {
      c.prompts_dir = resolve(base_dir, doc.at("prompts_dir").get<std::string>());
    }
    c.fixed_clock = doc.value("fixed_clock", c.fixed_clock);
    c.prd_cadence = doc.value("prd_cadence", c.prd_cadence);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("bearer_token") && doc.at("bearer_token").is_string()) {
      c.bearer_token = doc.at("bearer_token").get<std::string>();
    }
    if (doc.contains("limits")) {
      const auto& l = doc.at("limits");
      c.limits.max_sessions = l.value("max_sessions", c.limits.max_sessions);
      c.limits.turn_cap = l.value("turn_cap", c.limits.turn_cap);
      c.limits.max_body_bytes = l.value("max_body_bytes", c.limits.max_body_bytes);
      c.limits.max_query_bytes = l.value("max_query_bytes", c.limits.max_query_bytes);
    }
    if (doc.contains("retry")) {
      const auto& r = doc.at("retry");
      c.retry.max_retries = r.value("max_retries", c.retry.max_retries);
      c.retry.initial_backoff = std::chrono::milliseconds(
          r.value("initial_backoff_ms", static_cast<long long>(c.retry.initial_backoff.count())));
      c.retry.multiplier = r.value("multiplier", c.retry.multiplier);
    }
    if (doc.contains("roles")) {
      const auto& roles = doc.at("roles");
      BackendConfig fallback;
      if (roles.contains("default")) read_backend(roles.at("default"), base_dir, fallback);
      for (auto role : kAllRoles) {
        BackendConfig b = fallback;
        const std::string key(model_role_name(role));
        if (roles.contains(key)) read_backend(roles.at(key), base_dir, b);
        if (!b.backend.empty()) c.roles[role] = b;
      }
      for (const auto& [key, _] : roles.items()) {
        if (key != "default") model_role_from_name(key);  // reject typos
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "invalid config", e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    throw Error(ErrorCode::kConfig, e.what(), e.detail());
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "config is not valid JSON: " + path.string(), e.what());
  }
  return config_from_json(doc, path.parent_path());
}

void apply_overrides(AppConfig& c, const nlohmann::json& o) {
  if (o.is_null()) return;
  if (!o.is_object()) throw Error(ErrorCode::kConfig, "overrides must be a JSON object");
  try {
    if (o.contains("storage_root")) c.storage_root = o.at("storage_root").get<std::string>();
    if (o.contains("prompts_dir")) c.prompts_dir = o.at("prompts_dir").get<std::string>();
    if (o.contains("listen")) set_listen(c, o.at("listen").get<std::string>());
    c.fixed_clock = o.value("fixed_clock", c.fixed_clock);
    c.prd_cadence = o.value("prd_cadence", c.prd_cadence);
    c.limits.turn_cap = o.value("turn_cap", c.limits.turn_cap);
    c.limits.max_sessions = o.value("max_sessions", c.limits.max_sessions);
    c.seed = o.value("seed", c.seed);
    if (o.contains("bearer_token")) c.bearer_token = o.at("bearer_token").get<std::string>();
    if (o.contains("roles")) {
      const auto& roles = o.at("roles");
      for (auto role : kAllRoles) {
        const std::string key(model_role_name(role));
        const nlohmann::json* entry = roles.contains(key) ? &roles.at(key)
                                      : roles.contains("default") ? &roles.at("default")
                                                                  : nullptr;
        if (!entry) continue;
        BackendConfig b = c.roles.count(role) ? c.roles.at(role) : BackendConfig{};
        read_backend(*entry, {}, b);
        if (!b.backend.empty()) c.roles[role] = b;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "invalid override", e.what());
  }
  c.validate();
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str()); v && *v) return std::string(v);
    return std::nullopt;
  };
}

void apply_env(AppConfig& c, const EnvLookup& env) {
  if (auto v = env("OVERSIGHT_STORAGE_ROOT")) c.storage_root = *v;
  if (auto v = env("OVERSIGHT_LISTEN")) set_listen(c, *v);
  if (auto v = env("OVERSIGHT_BEARER_TOKEN")) c.bearer_token = *v;
  for (auto role : kAllRoles) {
    const std::string suffix = "_" + upper(model_role_name(role));
    auto pick = [&](const char* stem) {
      if (auto v = env(std::string(stem) + suffix)) return v;
      return env(stem);
    };
    auto key = pick("OVERSIGHT_API_KEY");
    auto url = pick("OVERSIGHT_BASE_URL");
    auto model = pick("OVERSIGHT_MODEL");
    if (!key && !url && !model) continue;
    auto it = c.roles.find(role);
    if (it == c.roles.end()) {
      if (!url) continue;  // a key or model alone does not create a backend
      it = c.roles.emplace(role, BackendConfig{}).first;
      it->second.backend = "openai";
    }
    if (it->second.backend != "openai") continue;
    if (key) it->second.api_key = *key;
    if (url) it->second.base_url = *url;
    if (model) it->second.model = *model;
  }
}

std::unique_ptr<Gateway> build_gateway(const AppConfig& config) {
  auto gw = std::make_unique<Gateway>();
  gw->set_retry_policy(config.retry);
  std::map<std::string, std::shared_ptr<ChatBackend>> shared;
  for (const auto& [role, b] : config.roles) {
    std::ostringstream key;
    key << b.backend << '|' << b.base_url << '|' << b.model << '|' << b.api_key << '|' << b.path.string();
    auto& backend = shared[key.str()];
    if (!backend) backend = make_backend(b);
    gw->set_backend(role, backend);
    ChatParams p = default_params(role);
    if (b.temperature) p.temperature = *b.temperature;
    if (b.max_tokens) p.max_tokens = *b.max_tokens;
    if (b.timeout_ms) p.timeout = std::chrono::milliseconds(*b.timeout_ms);
    gw->set_params(role, p);
  }
  return gw;
}

}  // namespace oversight
