// Command-line front end.  Talks to the library only through oversight.h.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oversight/oversight.h"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct CliError {
  std::string code;
  std::string message;
};

// Owns a library string.
struct Owned {
  char* p = nullptr;
  ~Owned() { oversight_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

void check(oversight_status st) {
  if (st != OVERSIGHT_OK) throw st;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{"StorageError", "cannot read " + path};
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw CliError{"StorageError", "cannot write " + path.string()};
}

struct Globals {
  std::string config;
  std::string storage;
  std::string listen;
  std::string prompts;
  std::string bearer;
  bool fixed_clock = false;
  int turn_cap = 0;
  int cadence = 0;
  int max_sessions = 0;
  std::vector<std::string> backends;  // role=kind[:arg]
  std::vector<std::string> models;    // role=model

  json overrides() const {
    json o = json::object();
    if (!storage.empty()) o["storage_root"] = storage;
    if (!listen.empty()) o["listen"] = listen;
    if (!prompts.empty()) o["prompts_dir"] = prompts;
    if (!bearer.empty()) o["bearer_token"] = bearer;
    if (fixed_clock) o["fixed_clock"] = true;
    if (turn_cap > 0) o["turn_cap"] = turn_cap;
    if (cadence > 0) o["prd_cadence"] = cadence;
    if (max_sessions > 0) o["max_sessions"] = max_sessions;
    json roles = json::object();
    for (const auto& b : backends) {
      const auto eq = b.find('=');
      if (eq == std::string::npos) throw CliError{"InvalidArgument", "--backend wants role=kind[:arg]: " + b};
      const std::string role = b.substr(0, eq), spec = b.substr(eq + 1);
      const auto colon = spec.find(':');
      const std::string kind = spec.substr(0, colon);
      json entry = {{"backend", kind}};
      if (colon != std::string::npos) {
        const std::string arg = spec.substr(colon + 1);
        if (kind == "openai") {
          entry["base_url"] = arg;
        } else {
          entry["path"] = fs::absolute(arg).string();
        }
      }
      for (const auto& [k, v] : entry.items()) roles[role][k] = v;
    }
    for (const auto& m : models) {
      const auto eq = m.find('=');
      if (eq == std::string::npos) throw CliError{"InvalidArgument", "--model wants role=name: " + m};
      roles[m.substr(0, eq)]["model"] = m.substr(eq + 1);
    }
    if (!roles.empty()) o["roles"] = roles;
    return o;
  }
};

struct Context {
  oversight_context* ctx = nullptr;
  explicit Context(const Globals& g) {
    const std::string o = g.overrides().dump();
    check(oversight_context_create(g.config.empty() ? nullptr : g.config.c_str(), o.c_str(), &ctx));
  }
  ~Context() { oversight_context_destroy(ctx); }
};

void print(const std::string& s) { std::cout << s << (s.empty() || s.back() != '\n' ? "\n" : ""); }

std::string timestamp_dir() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return std::string("runs/") + buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive requirement elicitation: sessions, evaluation, rewards and benchmarks"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--storage", g.storage, "storage root for sessions");
  app.add_option("--prompts", g.prompts, "prompt template directory");
  app.add_option("--backend", g.backends, "role=kind[:arg]; kinds openai, script, replay, desk, containment")
      ->take_all();
  app.add_option("--model", g.models, "role=model name for openai backends");
  app.add_flag("--fixed-clock", g.fixed_clock, "pin transcript timestamps for byte-stable output");
  app.add_option("--turn-cap", g.turn_cap, "questions per node before the wrap-up nudge");
  app.add_option("--cadence", g.cadence, "intermediate PRD every N completed nodes");

  // Session steps
  std::string query, query_file, client_token, session_id, node, answer_text;
  bool intermediate = false;
  auto* init = app.add_subcommand("init", "create a session and its initial requirement tree");
  auto* q = init->add_option("--query", query, "initial user query");
  init->add_option("--query-file", query_file, "read the query from a file")->excludes(q);
  init->add_option("--client-token", client_token, "idempotency key");

  auto* step = app.add_subcommand("step", "advance a session by one assistant step");
  step->add_option("session", session_id)->required();

  auto* ans = app.add_subcommand("answer", "answer the pending question");
  ans->add_option("session", session_id)->required();
  ans->add_option("--node", node, "node path, \"Root > Child\"")->required();
  ans->add_option("--answer", answer_text, "answer string, e.g. \"[A > C]- Conf[0.8]\"")->required();

  auto* tree = app.add_subcommand("tree", "show the current tree and its revisions");
  tree->add_option("session", session_id)->required();

  auto* status = app.add_subcommand("status", "show session progress");
  status->add_option("session", session_id)->required();

  auto* prd = app.add_subcommand("prd", "generate the final or an intermediate PRD");
  prd->add_option("session", session_id)->required();
  prd->add_flag("--intermediate", intermediate);

  // Whole runs
  std::string intent, oracle, rubrics, simulator = "oracle";
  bool no_intermediate = false, no_eval = false, strict = false, rewards = false;
  auto* run = app.add_subcommand("run", "drive a full session against a simulated user");
  run->add_option("--intent", intent, "intent markdown with front matter")->required()->check(CLI::ExistingFile);
  run->add_option("--oracle", oracle, "oracle rules (YAML or JSON)")->check(CLI::ExistingFile);
  run->add_option("--simulator", simulator, "oracle or model")->check(CLI::IsMember({"oracle", "model"}));
  run->add_option("--rubrics", rubrics, "rubric tree JSON; generated from the intent when absent")
      ->check(CLI::ExistingFile);
  run->add_option("--session-id", session_id);
  run->add_flag("--no-intermediate", no_intermediate);
  run->add_flag("--no-eval", no_eval);
  run->add_flag("--strict", strict, "count only fully satisfied rubrics");
  run->add_flag("--rewards", rewards, "also write traces, rewards and advantages");

  std::string target;
  auto* replay = app.add_subcommand("replay", "re-execute a stored session from its transcript");
  replay->add_option("session", session_id)->required();
  replay->add_option("--target", target, "storage root for the replayed copy")->required();

  std::string prd_file, out;
  auto* eval = app.add_subcommand("eval", "score a PRD against a rubric tree");
  eval->add_option("--prd", prd_file)->required()->check(CLI::ExistingFile);
  eval->add_option("--rubrics", rubrics)->required()->check(CLI::ExistingFile);
  eval->add_flag("--strict", strict);
  eval->add_option("--out", out, "directory for report.json and report.md");

  std::string reference;
  auto* rub = app.add_subcommand("rubrics", "extract a rubric tree from a reference PRD");
  rub->add_option("--reference", reference)->required()->check(CLI::ExistingFile);
  rub->add_option("--out", out, "output file");

  std::string traces;
  double epsilon = 1e-8;
  auto* reward = app.add_subcommand("reward", "rewards and advantages from a trace file");
  reward->add_option("--traces", traces)->required()->check(CLI::ExistingFile);
  reward->add_option("--epsilon", epsilon);
  reward->add_option("--out", out, "directory for rewards.json and advantages.{bin,json}");

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--listen", g.listen, "host:port");
  serve->add_option("--bearer-token", g.bearer);
  serve->add_option("--max-sessions", g.max_sessions);

  std::string bench_file;
  auto* bench = app.add_subcommand("bench", "run a benchmark from a bench config");
  bench->add_option("bench_config", bench_file)->required()->check(CLI::ExistingFile);
  bench->add_option("--out", out, "output directory (default runs/<timestamp>)");

  std::vector<std::string> reports;
  auto* compare = app.add_subcommand("compare", "delta table across benchmark reports");
  compare->add_option("reports", reports)->required()->expected(1, -1)->check(CLI::ExistingFile);
  compare->add_option("--out", out, "write comparison.json and comparison.md here");

  auto* parse = app.add_subcommand("parse-feedback", "show how an answer string parses");
  parse->add_option("answer", answer_text)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Owned o, md;
    if (*init) {
      Context c(g);
      json req = {{"query", query_file.empty() ? query : read_text(query_file)}};
      if (!client_token.empty()) req["client_token"] = client_token;
      check(oversight_session_create(c.ctx, req.dump().c_str(), &o.p));
    } else if (*step) {
      Context c(g);
      check(oversight_session_next(c.ctx, session_id.c_str(), &o.p));
    } else if (*ans) {
      Context c(g);
      const json req = {{"node_path", node}, {"answer", answer_text}};
      check(oversight_session_answer(c.ctx, session_id.c_str(), req.dump().c_str(), &o.p));
    } else if (*tree) {
      Context c(g);
      check(oversight_session_tree(c.ctx, session_id.c_str(), &o.p));
    } else if (*status) {
      Context c(g);
      check(oversight_session_status(c.ctx, session_id.c_str(), &o.p));
    } else if (*prd) {
      Context c(g);
      const json req = {{"intermediate", intermediate}};
      check(oversight_session_prd(c.ctx, session_id.c_str(), req.dump().c_str(), &o.p));
    } else if (*run) {
      Context c(g);
      json req = {{"intent", intent},
                  {"simulator", simulator},
                  {"intermediate", !no_intermediate},
                  {"evaluate", !no_eval},
                  {"strict_indicator", strict},
                  {"rewards", rewards}};
      if (!oracle.empty()) req["oracle"] = oracle;
      if (!rubrics.empty()) req["rubrics"] = rubrics;
      if (!session_id.empty()) req["session_id"] = session_id;
      check(oversight_run(c.ctx, req.dump().c_str(), &o.p));
    } else if (*replay) {
      Context c(g);
      check(oversight_replay(c.ctx, session_id.c_str(), target.c_str(), &o.p));
    } else if (*eval) {
      Context c(g);
      const json req = {{"prd", read_text(prd_file)},
                        {"rubrics", json::parse(read_text(rubrics))},
                        {"strict_indicator", strict}};
      check(oversight_evaluate(c.ctx, req.dump().c_str(), &o.p, &md.p));
      if (!out.empty()) {
        write_text(fs::path(out) / "report.json", o.str() + "\n");
        write_text(fs::path(out) / "report.md", md.str());
      }
    } else if (*rub) {
      Context c(g);
      check(oversight_generate_rubrics(c.ctx, read_text(reference).c_str(), &o.p));
      if (!out.empty()) write_text(out, o.str() + "\n");
    } else if (*reward) {
      check(oversight_rewards(traces.c_str(), epsilon, out.empty() ? nullptr : out.c_str(), &o.p));
    } else if (*serve) {
      Context c(g);
      int port = 0;
      check(oversight_server_start(c.ctx, &port));
      std::cerr << json{{"listening", port}}.dump() << std::endl;
      check(oversight_server_serve(c.ctx));
      return 0;
    } else if (*bench) {
      if (out.empty()) out = timestamp_dir();
      check(oversight_benchmark(bench_file.c_str(), out.c_str(), &o.p));
    } else if (*compare) {
      json arr = json::array();
      for (const auto& r : reports) arr.push_back(json::parse(read_text(r)));
      check(oversight_compare(arr.dump().c_str(), &o.p, &md.p));
      if (!out.empty()) {
        write_text(fs::path(out) / "comparison.json", o.str() + "\n");
        write_text(fs::path(out) / "comparison.md", md.str());
      }
    } else if (*parse) {
      check(oversight_parse_feedback(answer_text.c_str(), &o.p));
    }
    print(o.str());
    return 0;
  } catch (oversight_status st) {
    std::cerr << oversight_last_error() << std::endl;
    return st == OVERSIGHT_INTERNAL ? 70 : 1;
  } catch (const CliError& e) {
    std::cerr << json{{"code", e.code}, {"message", e.message}, {"detail", ""}}.dump() << std::endl;
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << json{{"code", "InvalidArgument"}, {"message", "invalid JSON input"}, {"detail", e.what()}}.dump()
              << std::endl;
    return 1;
  }
}
