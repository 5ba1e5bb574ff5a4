#pragma once

// Runtime configuration.  A JSON file supplies defaults, OVERSIGHT_* variables
// override it, and command-line flags override both.
//
//   {
//     "listen": "127.0.0.1:8080",
//     "storage_root": "data",
//     "prompts_dir": null,
//     "fixed_clock": false,
//     "prd_cadence": 5,
//     "seed": 0,
//     "bearer_token": null,
//     "limits": {"max_sessions": 64, "turn_cap": 12, "max_body_bytes": 1048576, "max_query_bytes": 16384},
//     "retry": {"max_retries": 3, "initial_backoff_ms": 500, "multiplier": 2.0},
//     "roles": {
//       "default": {"backend": "openai", "base_url": "...", "model": "...", "api_key": "..."},
//       "judge": {"backend": "script", "path": "judge_script.json", "temperature": 0.0}
//     }
//   }
//
// Backends: openai, script (ScriptedBackend file), replay (transcript file),
// desk (FeatureEchoPolicy over the tree file in `path`), containment.
// Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "oversight/gateway.hpp"

namespace oversight {

struct BackendConfig {
  std::string backend;  // empty: not configured
  std::string base_url;
  std::string model;
  std::string api_key;
  std::filesystem::path path;
  bool verify = true;  // replay only
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::optional<int> timeout_ms;
};

struct Limits {
  int max_sessions = 64;
  int turn_cap = 12;
  std::size_t max_body_bytes = 1 << 20;
  std::size_t max_query_bytes = 16 * 1024;
};

struct AppConfig {
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::filesystem::path storage_root = "oversight-data";
  std::filesystem::path prompts_dir;  // empty: the built-in templates
  bool fixed_clock = false;
  int prd_cadence = 5;
  std::uint64_t seed = 0;
  std::optional<std::string> bearer_token;
  Limits limits;
  RetryPolicy retry;
  std::map<ModelRole, BackendConfig> roles;

  /// Throws kConfig on non-positive limits and the like.
  void validate() const;
};

AppConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
AppConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// OVERSIGHT_{API_KEY,BASE_URL,MODEL}[_<ROLE>], OVERSIGHT_STORAGE_ROOT,
/// OVERSIGHT_LISTEN, OVERSIGHT_BEARER_TOKEN.  Role-specific names win over the
/// bare ones.  A base URL for an unconfigured role selects the openai backend.
void apply_env(AppConfig& config, const EnvLookup& env);

/// Flat command-line style overrides: storage_root, listen, fixed_clock,
/// prd_cadence, turn_cap, max_sessions, seed, bearer_token, prompts_dir and
/// a "roles" map merged over the configured roles.
void apply_overrides(AppConfig& config, const nlohmann::json& overrides);

/// "host:port" or ":port".
void set_listen(AppConfig& config, const std::string& listen);

/// Builds one backend per distinct configuration so that roles sharing a
/// script also share its rule counters.
std::unique_ptr<Gateway> build_gateway(const AppConfig& config);

}  // namespace oversight
