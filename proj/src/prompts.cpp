#include "oversight/prompts.hpp"

#include <array>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "oversight/error.hpp"

#ifndef OVERSIGHT_DEFAULT_PROMPTS_DIR
#define OVERSIGHT_DEFAULT_PROMPTS_DIR "prompts"
#endif

namespace oversight {
namespace {

constexpr std::array<std::pair<PromptId, std::string_view>, 10> kNames = {{
    {PromptId::kInteractionSystem, "interaction_system"},
    {PromptId::kTreeInit, "tree_init"},
    {PromptId::kTreeUpdate, "tree_update"},
    {PromptId::kDocGenerator, "doc_generator"},
    {PromptId::kUserSim, "user_sim"},
    {PromptId::kEvalSplit, "eval_split"},
    {PromptId::kEvalModule, "eval_module"},
    {PromptId::kProgressiveReward, "progressive_reward"},
    {PromptId::kRubricsGen, "rubrics_gen"},
    {PromptId::kRubricClassify, "rubric_classify"},
}};

bool valid_slot_name(std::string_view name) {
  if (name.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) return false;
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  }
  return true;
}

// Walks the body and reports literals and slots.  Returns the offending
// offset when the syntax is broken.
template <typename OnText, typename OnSlot>
std::optional<std::size_t> scan(std::string_view body, OnText on_text, OnSlot on_slot) {
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '{') {
      if (i + 1 < body.size() && body[i + 1] == '{') {
        on_text(std::string_view("{"));
        i += 2;
        continue;
      }
      const auto close = body.find('}', i);
      if (close == std::string_view::npos) return i;
      const auto name = body.substr(i + 1, close - i - 1);
      if (!valid_slot_name(name)) return i;
      on_slot(name);
      i = close + 1;
      continue;
    }
    if (c == '}') {
      if (i + 1 < body.size() && body[i + 1] == '}') {
        on_text(std::string_view("}"));
        i += 2;
        continue;
      }
      return i;
    }
    const auto next = body.find_first_of("{}", i);
    const auto end = next == std::string_view::npos ? body.size() : next;
    on_text(body.substr(i, end - i));
    i = end;
  }
  return std::nullopt;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kTemplateIntegrity, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string_view prompt_id_name(PromptId id) noexcept {
  for (const auto& [k, v] : kNames) {
    if (k == id) return v;
  }
  return "unknown";
}

PromptId prompt_id_from_name(std::string_view name) {
  for (const auto& [k, v] : kNames) {
    if (v == name) return k;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown prompt id: " + std::string(name));
}

std::set<std::string> template_slots(std::string_view body) {
  std::set<std::string> slots;
  auto bad = scan(body, [](std::string_view) {}, [&](std::string_view s) { slots.emplace(s); });
  if (bad) {
    throw Error(ErrorCode::kTemplateIntegrity,
                "unbalanced brace at offset " + std::to_string(*bad));
  }
  return slots;
}

std::string PromptTemplate::render(const SlotMap& slots) const {
  for (const auto& name : required_slots) {
    if (!slots.count(name)) {
      throw Error(ErrorCode::kMissingSlot,
                  std::string(prompt_id_name(id)) + ": missing slot " + name, name);
    }
  }
  for (const auto& [name, _] : slots) {
    if (!required_slots.count(name)) {
      throw Error(ErrorCode::kUnknownSlot,
                  std::string(prompt_id_name(id)) + ": unknown slot " + name, name);
    }
  }
  std::string out;
  out.reserve(body.size() + 256);
  auto bad = scan(
      body, [&](std::string_view t) { out.append(t); },
      [&](std::string_view s) { out.append(slots.at(std::string(s))); });
  if (bad) {
    throw Error(ErrorCode::kResidualPlaceholder,
                std::string(prompt_id_name(id)) + ": unresolved placeholder at offset " +
                    std::to_string(*bad));
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
  const auto manifest_text = read_file(dir / "manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kTemplateIntegrity, std::string("bad manifest: ") + e.what());
  }
  PromptLibrary lib;
  for (const auto& entry : manifest.at("templates")) {
    const auto id = prompt_id_from_name(entry.at("id").get<std::string>());
    const auto file = dir / entry.at("file").get<std::string>();
    std::string body = read_file(file);
    const auto digest = sha256_hex(body);
    if (digest != entry.at("sha256").get<std::string>()) {
      throw Error(ErrorCode::kTemplateIntegrity, "checksum mismatch for " + file.string(), digest);
    }
    auto slots = template_slots(body);
    const auto declared = entry.at("required_slots").get<std::set<std::string>>();
    if (slots != declared) {
      throw Error(ErrorCode::kTemplateIntegrity, "slot set mismatch for " + file.string());
    }
    lib.templates_.emplace(id, PromptTemplate{id, std::move(body), std::move(slots)});
  }
  for (const auto& [id, name] : kNames) {
    if (!lib.templates_.count(id)) {
      throw Error(ErrorCode::kTemplateIntegrity, "manifest lacks template " + std::string(name));
    }
  }
  return lib;
}

std::filesystem::path PromptLibrary::default_dir() {
  if (const char* env = std::getenv("OVERSIGHT_PROMPTS_DIR"); env && *env) return env;
  return OVERSIGHT_DEFAULT_PROMPTS_DIR;
}

const PromptLibrary& PromptLibrary::shared() {
  static const PromptLibrary lib = load(default_dir());
  return lib;
}

const PromptTemplate& PromptLibrary::get(PromptId id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) {
    throw Error(ErrorCode::kTemplateIntegrity, "template not loaded: " + std::string(prompt_id_name(id)));
  }
  return it->second;
}

std::string render_feature_goals(const std::vector<std::string>& features) {
  if (features.empty()) return "- Specific implementation requirements for this feature";
  std::string out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (i) out.push_back('\n');
    out += "- " + features[i];
  }
  return out;
}

}  // namespace oversight
