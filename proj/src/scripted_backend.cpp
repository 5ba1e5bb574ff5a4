#include <fstream>

#include <nlohmann/json.hpp>

#include "oversight/gateway.hpp"
#include "oversight/json_text.hpp"

namespace oversight {

std::string_view last_user_content(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == MessageRole::kUser) return it->content;
  }
  return request.messages.empty() ? std::string_view{} : request.messages.back().content;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules, bool strict) : strict_(strict) {
  for (auto& rule : rules) {
    Slot slot;
    if (!rule.regex_source.empty()) {
      try {
        slot.regex.emplace(rule.regex_source, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::kConfig, "bad script regex '" + rule.regex_source + "': " + e.what());
      }
    }
    if (rule.responses.empty() && !rule.echo_slot) {
      throw Error(ErrorCode::kConfig, "script rule has neither response nor echo_slot");
    }
    if (rule.times < 0) {
      slot.limit = -1;
    } else if (rule.times == 0) {
      slot.limit = rule.echo_slot ? 1 : static_cast<int>(rule.responses.size());
    } else {
      slot.limit = rule.times;
    }
    slot.rule = std::move(rule);
    slots_.push_back(std::move(slot));
  }
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& script) {
  std::vector<ScriptRule> rules;
  try {
    for (const auto& r : script.at("rules")) {
      ScriptRule rule;
      if (auto it = r.find("role"); it != r.end()) {
        rule.role = model_role_from_name(it->get<std::string>());
      }
      if (auto m = r.find("match"); m != r.end()) {
        rule.contains = m->value("contains", "");
        rule.regex_source = m->value("regex", "");
        rule.system_contains = m->value("system_contains", "");
        if (auto t = m->find("template"); t != m->end()) {
          rule.template_id = prompt_id_from_name(t->get<std::string>());
        }
        if (auto s = m->find("slots"); s != m->end()) {
          rule.slot_contains = s->get<std::map<std::string, std::string>>();
        }
      }
      if (auto it = r.find("response"); it != r.end()) rule.responses.push_back(it->get<std::string>());
      if (auto it = r.find("responses"); it != r.end()) {
        for (const auto& s : *it) rule.responses.push_back(s.get<std::string>());
      }
      if (auto it = r.find("echo_slot"); it != r.end()) rule.echo_slot = it->get<std::string>();
      rule.times = r.value("times", 0);
      rules.push_back(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("bad script: ") + e.what());
  }
  return std::make_shared<ScriptedBackend>(std::move(rules), script.value("strict", true));
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open script " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "bad script " + path + ": " + e.what());
  }
  return from_json(doc);
}

bool ScriptedBackend::matches(const Slot& slot, const ChatRequest& request) const {
  const ScriptRule& rule = slot.rule;
  if (slot.limit >= 0 && slot.fired >= slot.limit) return false;
  if (rule.role && *rule.role != request.model_role) return false;
  if (rule.template_id && request.template_id != rule.template_id) return false;
  const std::string_view last = last_user_content(request);
  if (!rule.contains.empty() && last.find(rule.contains) == std::string_view::npos) return false;
  if (slot.regex) {
    const std::string subject(last);
    if (!std::regex_search(subject, *slot.regex)) return false;
  }
  if (!rule.system_contains.empty()) {
    const auto& first = request.messages.front();
    if (first.role != MessageRole::kSystem ||
        first.content.find(rule.system_contains) == std::string::npos) {
      return false;
    }
  }
  for (const auto& [name, needle] : rule.slot_contains) {
    auto it = request.slots.find(name);
    if (it == request.slots.end() || it->second.find(needle) == std::string::npos) return false;
  }
  return true;
}

BackendReply ScriptedBackend::complete(const ChatRequest& request) {
  if (request.messages.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "chat request has no messages");
  }
  std::lock_guard lock(mu_);
  for (auto& slot : slots_) {
    if (!matches(slot, request)) continue;
    BackendReply reply;
    if (slot.rule.echo_slot) {
      auto it = request.slots.find(*slot.rule.echo_slot);
      reply.content = it == request.slots.end() ? std::string(last_user_content(request)) : it->second;
    } else {
      const auto idx = std::min<std::size_t>(static_cast<std::size_t>(slot.fired),
                                             slot.rule.responses.size() - 1);
      reply.content = slot.rule.responses[idx];
    }
    ++slot.fired;
    return reply;
  }
  if (strict_) {
    std::string preview(last_user_content(request).substr(0, 160));
    throw Error(ErrorCode::kScriptExhausted,
                "no script rule matches " + std::string(model_role_name(request.model_role)) +
                    " request",
                preview);
  }
  return BackendReply{};
}

std::vector<int> ScriptedBackend::fire_counts() const {
  std::lock_guard lock(mu_);
  std::vector<int> out;
  for (const auto& s : slots_) out.push_back(s.fired);
  return out;
}

ReplayBackend::ReplayBackend(const std::vector<nlohmann::json>& records, bool verify_requests)
    : verify_(verify_requests) {
  for (const auto& rec : records) {
    Entry e;
    e.messages = rec.at("request_messages").get<std::vector<ChatMessage>>();
    e.response = rec.at("response").get<std::string>();
    if (auto u = rec.find("usage"); u != rec.end() && u->is_object()) {
      e.usage.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      e.usage.completion_tokens = u->value("completion_tokens", std::int64_t{0});
    }
    queues_[model_role_from_name(rec.at("model_role").get<std::string>())].push_back(std::move(e));
  }
}

BackendReply ReplayBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  auto& queue = queues_[request.model_role];
  auto& cursor = cursors_[request.model_role];
  if (cursor >= queue.size()) {
    throw Error(ErrorCode::kScriptExhausted,
                "transcript has no more " + std::string(model_role_name(request.model_role)) +
                    " exchanges");
  }
  const Entry& e = queue[cursor];
  if (verify_ && e.messages != request.messages) {
    throw Error(ErrorCode::kReplayMismatch,
                "replayed request diverges from the transcript at " +
                    std::string(model_role_name(request.model_role)) + " exchange " +
                    std::to_string(cursor));
  }
  ++cursor;
  return BackendReply{e.response, e.usage};
}

}  // namespace oversight
