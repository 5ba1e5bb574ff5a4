#include "oversight/session_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace oversight {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kStorageError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kStorageError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kStorageError, "cannot rename into " + path.string(), ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStorageError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool valid_session_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

SessionStore::SessionStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_ / "sessions", ec);
  if (ec) throw Error(ErrorCode::kStorageError, "storage root not writable: " + root_.string(), ec.message());
}

fs::path SessionStore::session_dir(const std::string& id) const {
  if (!valid_session_id(id)) throw Error(ErrorCode::kInvalidArgument, "invalid session id: " + id);
  return root_ / "sessions" / id;
}

fs::path SessionStore::transcript_path(const std::string& id) const {
  return session_dir(id) / "transcript.jsonl";
}

bool SessionStore::exists(const std::string& id) const {
  return valid_session_id(id) && fs::exists(session_dir(id) / "state.json");
}

void SessionStore::save(const Session& session) const {
  const fs::path dir = session_dir(session.id);
  for (const auto& rev : session.tree_history) {
    const fs::path p = dir / ("tree.v" + std::to_string(rev.tree.version) + ".json");
    if (!fs::exists(p)) write_file_atomic(p, serialize_tree(rev.tree) + "\n");
  }
  for (const auto& doc : session.intermediate_prds) {
    const fs::path p = dir / ("prd.k" + std::to_string(doc.completed_nodes) + ".md");
    if (!fs::exists(p)) write_file_atomic(p, doc.text);
  }
  if (session.prd) write_file_atomic(dir / "prd.md", *session.prd);
  write_file_atomic(dir / "state.json", nlohmann::json(session).dump(2) + "\n");
}

Session SessionStore::load(const std::string& id) const {
  if (!exists(id)) throw Error(ErrorCode::kSessionNotFound, "no such session: " + id);
  try {
    return nlohmann::json::parse(read_file(session_dir(id) / "state.json")).get<Session>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kStorageError, "corrupt state for session " + id, e.what());
  }
}

std::vector<std::string> SessionStore::list() const {
  std::vector<std::string> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(root_ / "sessions", ec)) {
    if (fs::exists(entry.path() / "state.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::unique_ptr<TranscriptWriter> SessionStore::open_transcript(const std::string& id,
                                                                bool fixed_clock) const {
  return std::make_unique<TranscriptWriter>(transcript_path(id), fixed_clock);
}

}  // namespace oversight
