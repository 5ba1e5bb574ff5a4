#include "oversight/json_text.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "oversight/error.hpp"

namespace oversight {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kMalformedTree: return "MalformedTree";
    case ErrorCode::kDuplicateSibling: return "DuplicateSibling";
    case ErrorCode::kWrongRootCount: return "WrongRootCount";
    case ErrorCode::kProcessedNodeMutated: return "ProcessedNodeMutated";
    case ErrorCode::kRootSetChanged: return "RootSetChanged";
    case ErrorCode::kMissingSlot: return "MissingSlot";
    case ErrorCode::kUnknownSlot: return "UnknownSlot";
    case ErrorCode::kResidualPlaceholder: return "ResidualPlaceholder";
    case ErrorCode::kTemplateIntegrity: return "TemplateIntegrity";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kBackendRefusal: return "BackendRefusal";
    case ErrorCode::kScriptExhausted: return "ScriptExhausted";
    case ErrorCode::kStorageError: return "StorageError";
    case ErrorCode::kTreeInitFailed: return "TreeInitFailed";
    case ErrorCode::kSessionNotAwaiting: return "SessionNotAwaiting";
    case ErrorCode::kNodeMismatch: return "NodeMismatch";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kSessionIncomplete: return "SessionIncomplete";
    case ErrorCode::kJudgeParseError: return "JudgeParseError";
    case ErrorCode::kEmptyRubricSet: return "EmptyRubricSet";
    case ErrorCode::kIdMismatch: return "IdMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kNoUserTurns: return "NoUserTurns";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kIntentSetMismatch: return "IntentSetMismatch";
    case ErrorCode::kCapacity: return "Capacity";
    case ErrorCode::kReplayMismatch: return "ReplayMismatch";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kAwaitingAnswer: return "AwaitingAnswer";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

namespace text {

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string normalize_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) {
      lines.emplace_back(s.substr(start));
      break;
    }
    std::string_view line = s.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::string strip_code_fences(std::string_view s) {
  const std::string body = trim(s);
  auto open = body.find("```");
  if (open == std::string::npos) return body;
  auto line_end = body.find('\n', open);
  if (line_end == std::string::npos) return body;
  auto close = body.find("```", line_end + 1);
  if (close == std::string::npos) return trim(std::string_view(body).substr(line_end + 1));
  return trim(std::string_view(body).substr(line_end + 1, close - line_end - 1));
}

std::optional<std::string> extract_json_object(std::string_view s) {
  std::size_t pos = 0;
  while ((pos = s.find('{', pos)) != std::string_view::npos) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = pos; i < s.size(); ++i) {
      const char c = s[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) return std::string(s.substr(pos, i - pos + 1));
      }
    }
    // Unbalanced from this brace; try the next one.
    ++pos;
  }
  return std::nullopt;
}

std::string repair_interior_quotes(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 16);
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (!in_string) {
      if (c == '"') in_string = true;
      out.push_back(c);
      continue;
    }
    if (escaped) {
      escaped = false;
      out.push_back(c);
      continue;
    }
    if (c == '\\') {
      escaped = true;
      out.push_back(c);
      continue;
    }
    if (c == '"') {
      std::size_t j = i + 1;
      while (j < s.size() && (s[j] == ' ' || s[j] == '\t' || s[j] == '\r' || s[j] == '\n')) ++j;
      const bool closes = j >= s.size() || s[j] == ',' || s[j] == '}' || s[j] == ']' || s[j] == ':';
      if (closes) {
        in_string = false;
        out.push_back(c);
      } else {
        out.append("\\\"");
      }
      continue;
    }
    if (c == '\n') {
      out.append("\\n");
      continue;
    }
    out.push_back(c);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace text
}  // namespace oversight
