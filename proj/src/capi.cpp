#include "oversight/oversight.h"

#include <cstring>
#include <mutex>
#include <optional>

#include <nlohmann/json.hpp>

#include "oversight/config.hpp"
#include "oversight/driver.hpp"
#include "oversight/evaluator.hpp"
#include "oversight/feedback.hpp"
#include "oversight/rewards.hpp"
#include "oversight/service.hpp"
#include "oversight/session_store.hpp"

using namespace oversight;
using ojson = nlohmann::ordered_json;

struct oversight_context {
  AppConfig config;
  std::optional<PromptLibrary> own_prompts;
  const PromptLibrary* prompts = nullptr;
  std::mutex mu;
  std::shared_ptr<Gateway> gateway;  // built on first use
  std::unique_ptr<Service> service;  // likewise

  Gateway& gw() {
    std::lock_guard lock(mu);
    if (!gateway) gateway = std::shared_ptr<Gateway>(build_gateway(config));
    return *gateway;
  }
  Service& svc() {
    gw();
    std::lock_guard lock(mu);
    if (!service) service = std::make_unique<Service>(config, *prompts, gateway);
    return *service;
  }
};

namespace {

thread_local std::string g_last_error = "{}";

void set_error(ErrorCode code, const std::string& message, const std::string& detail = {}) {
  g_last_error = ojson{{"code", error_code_name(code)}, {"message", message}, {"detail", detail}}.dump();
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

template <class F>
oversight_status guarded(F&& body) {
  try {
    body();
    return OVERSIGHT_OK;
  } catch (const Error& e) {
    set_error(e.code(), e.what(), e.detail());
    return static_cast<oversight_status>(e.code());
  } catch (const nlohmann::json::exception& e) {
    set_error(ErrorCode::kInvalidArgument, "invalid JSON", e.what());
    return OVERSIGHT_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    set_error(ErrorCode::kInternal, e.what());
    return OVERSIGHT_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

ErrorCode code_from_name(const std::string& name) {
  for (int c = 0; c <= 99; ++c) {
    const auto code = static_cast<ErrorCode>(c);
    if (error_code_name(code) == name) return code;
  }
  return ErrorCode::kInternal;
}

// HTTP-shaped results become status codes; the body is returned either way.
void deliver(const HttpResult& r, char** out) {
  if (r.status >= 400) {
    const std::string code = r.body.value("code", std::string("Internal"));
    throw Error(code_from_name(code), r.body.value("message", std::string()), r.body.value("detail", std::string()));
  }
  *out = dup(r.body.dump());
}


}  // namespace

extern "C" {

const char* oversight_version(void) { return "0.1.0"; }

const char* oversight_status_name(oversight_status status) {
  return error_code_name(static_cast<ErrorCode>(status)).data();
}

const char* oversight_last_error(void) { return g_last_error.c_str(); }

void oversight_string_free(char* s) { std::free(s); }

oversight_status oversight_context_create(const char* config_path, const char* overrides_json,
                                          oversight_context** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto ctx = std::make_unique<oversight_context>();
    ctx->config = config_path && *config_path ? load_config(config_path) : AppConfig{};
    apply_env(ctx->config, process_env());
    if (overrides_json && *overrides_json) apply_overrides(ctx->config, nlohmann::json::parse(overrides_json));
    ctx->config.validate();
    if (ctx->config.prompts_dir.empty()) {
      ctx->prompts = &PromptLibrary::shared();
    } else {
      ctx->own_prompts.emplace(PromptLibrary::load(ctx->config.prompts_dir));
      ctx->prompts = &*ctx->own_prompts;
    }
    *out = ctx.release();
  });
}

void oversight_context_destroy(oversight_context* ctx) { delete ctx; }

oversight_status oversight_context_config(oversight_context* ctx, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(out_json, "out_json");
    const AppConfig& c = ctx->config;
    ojson roles = ojson::object();
    for (const auto& [role, b] : c.roles) {
      roles[std::string(model_role_name(role))] = {{"backend", b.backend},
                                                   {"base_url", b.base_url},
                                                   {"model", b.model},
                                                   {"api_key", b.api_key.empty() ? "" : "***"},
                                                   {"path", b.path.string()}};
    }
    ojson j = {{"listen", c.listen_host + ":" + std::to_string(c.listen_port)},
               {"storage_root", c.storage_root.string()},
               {"prompts_dir", c.prompts_dir.empty() ? PromptLibrary::default_dir().string() : c.prompts_dir.string()},
               {"fixed_clock", c.fixed_clock},
               {"prd_cadence", c.prd_cadence},
               {"seed", c.seed},
               {"bearer_token", c.bearer_token ? "***" : ""},
               {"limits", {{"max_sessions", c.limits.max_sessions},
                           {"turn_cap", c.limits.turn_cap},
                           {"max_body_bytes", c.limits.max_body_bytes},
                           {"max_query_bytes", c.limits.max_query_bytes}}},
               {"roles", std::move(roles)}};
    *out_json = dup(j.dump(2));
  });
}

oversight_status oversight_session_create(oversight_context* ctx, const char* request_json, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(request_json, "request_json");
    require(out_json, "out_json");
    deliver(ctx->svc().create_session(request_json), out_json);
  });
}

oversight_status oversight_session_next(oversight_context* ctx, const char* session_id, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(out_json, "out_json");
    deliver(ctx->svc().next(session_id), out_json);
  });
}

oversight_status oversight_session_answer(oversight_context* ctx, const char* session_id, const char* request_json,
                                          char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(request_json, "request_json");
    require(out_json, "out_json");
    deliver(ctx->svc().answer(session_id, request_json), out_json);
  });
}

oversight_status oversight_session_tree(oversight_context* ctx, const char* session_id, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(out_json, "out_json");
    deliver(ctx->svc().tree(session_id), out_json);
  });
}

oversight_status oversight_session_prd(oversight_context* ctx, const char* session_id, const char* request_json,
                                       char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(out_json, "out_json");
    deliver(ctx->svc().prd(session_id, request_json ? request_json : "{}"), out_json);
  });
}

oversight_status oversight_session_status(oversight_context* ctx, const char* session_id, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(out_json, "out_json");
    deliver(ctx->svc().session_summary(session_id), out_json);
  });
}

oversight_status oversight_run(oversight_context* ctx, const char* request_json, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(request_json, "request_json");
    require(out_json, "out_json");
    const auto req = nlohmann::json::parse(request_json);
    CaseSpec spec;
    spec.intent = req.at("intent").get<std::string>();
    spec.oracle = req.value("oracle", std::string());
    spec.simulator = req.value("simulator", spec.oracle.empty() ? std::string("model") : std::string("oracle"));
    spec.rubrics = req.value("rubrics", std::string());
    spec.session_id = req.value("session_id", std::string());
    spec.intermediate = req.value("intermediate", true);
    spec.evaluate = req.value("evaluate", true);
    spec.strict_indicator = req.value("strict_indicator", false);
    spec.rewards = req.value("rewards", false);
    SessionStore store(ctx->config.storage_root);
    ojson out = run_case(spec, ctx->gw(), *ctx->prompts, store,
                               EngineOptions{ctx->config.limits.turn_cap, ctx->config.prd_cadence},
                               ctx->config.fixed_clock);
    out["storage_root"] = ctx->config.storage_root.string();
    *out_json = dup(out.dump(2));
  });
}

oversight_status oversight_replay(oversight_context* ctx, const char* session_id, const char* target_root,
                                  char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(session_id, "session_id");
    require(target_root, "target_root");
    require(out_json, "out_json");
    SessionStore source(ctx->config.storage_root);
    SessionStore target(target_root);
    const ReplayResult r = replay_session(source, session_id, target, *ctx->prompts, ctx->config.limits.turn_cap);
    const ojson out = {{"session_id", r.session.id},
                       {"dir", target.session_dir(r.session.id).string()},
                       {"exchanges_identical", r.exchanges_identical},
                       {"prd_identical", r.prd_identical}};
    *out_json = dup(out.dump(2));
  });
}

oversight_status oversight_evaluate(oversight_context* ctx, const char* request_json, char** out_report_json,
                                   char** out_markdown) {
  return guarded([&] {
    require(ctx, "ctx");
    require(request_json, "request_json");
    require(out_report_json, "out_report_json");
    const auto req = nlohmann::ordered_json::parse(request_json);
    const RubricTree rubrics = parse_rubric_tree(req.at("rubrics"));
    Evaluator ev(ctx->gw(), *ctx->prompts, nullptr, EvaluatorOptions{req.value("strict_indicator", false), 1});
    const EvaluationReport report = ev.evaluate(req.at("prd").get<std::string>(), rubrics);
    *out_report_json = dup(report_json(report, rubrics).dump(2));
    if (out_markdown) *out_markdown = dup(report_markdown(report));
  });
}

oversight_status oversight_generate_rubrics(oversight_context* ctx, const char* reference_prd, char** out_json) {
  return guarded([&] {
    require(ctx, "ctx");
    require(reference_prd, "reference_prd");
    require(out_json, "out_json");
    std::vector<std::string> warnings;
    Evaluator ev(ctx->gw(), *ctx->prompts);
    ojson out = rubric_tree_json(ev.generate_rubrics(reference_prd, &warnings));
    out["warnings"] = warnings;
    *out_json = dup(out.dump(2));
  });
}

oversight_status oversight_rewards(const char* traces_path, double epsilon, const char* out_dir, char** out_json) {
  return guarded([&] {
    require(traces_path, "traces_path");
    require(out_json, "out_json");
    const RewardReport r = compute_rewards(read_traces(traces_path), epsilon);
    const ojson j = rewards_json(r);
    if (out_dir && *out_dir) {
      const std::filesystem::path dir(out_dir);
      write_file_atomic(dir / "rewards.json", j.dump(2) + "\n");
      write_advantages(r.advantages, dir / "advantages.bin");
    }
    *out_json = dup(j.dump(2));
  });
}

oversight_status oversight_benchmark(const char* bench_config_path, const char* out_dir, char** out_report_json) {
  return guarded([&] {
    require(bench_config_path, "bench_config_path");
    require(out_dir, "out_dir");
    require(out_report_json, "out_report_json");
    const BenchConfig cfg = load_bench_config(bench_config_path);
    const PromptLibrary& prompts =
        cfg.app.prompts_dir.empty() ? PromptLibrary::shared() : PromptLibrary::load(cfg.app.prompts_dir);
    *out_report_json = dup(run_benchmark(cfg, prompts, out_dir).dump(2));
  });
}

oversight_status oversight_compare(const char* reports_json, char** out_json, char** out_markdown) {
  return guarded([&] {
    require(reports_json, "reports_json");
    require(out_json, "out_json");
    const auto arr = nlohmann::ordered_json::parse(reports_json);
    if (!arr.is_array()) throw Error(ErrorCode::kInvalidArgument, "expected an array of reports");
    const ojson cmp = compare_methods(std::vector<ojson>(arr.begin(), arr.end()));
    *out_json = dup(cmp.dump(2));
    if (out_markdown) *out_markdown = dup(comparison_markdown(cmp));
  });
}

oversight_status oversight_parse_feedback(const char* answer, char** out_json) {
  return guarded([&] {
    require(answer, "answer");
    require(out_json, "out_json");
    *out_json = dup(nlohmann::json(parse_feedback(answer)).dump());
  });
}

oversight_status oversight_server_start(oversight_context* ctx, int* out_port) {
  return guarded([&] {
    require(ctx, "ctx");
    const int port = ctx->svc().start();
    if (out_port) *out_port = port;
  });
}

oversight_status oversight_server_serve(oversight_context* ctx) {
  return guarded([&] {
    require(ctx, "ctx");
    ctx->svc().serve_forever();
  });
}

oversight_status oversight_server_stop(oversight_context* ctx) {
  return guarded([&] {
    require(ctx, "ctx");
    std::lock_guard lock(ctx->mu);
    if (ctx->service) ctx->service->stop();
  });
}

}  // extern "C"
