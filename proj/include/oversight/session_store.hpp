#pragma once

// On-disk layout under a storage root:
//   sessions/{id}/state.json        snapshot after every transition
//   sessions/{id}/transcript.jsonl  chat exchanges
//   sessions/{id}/tree.v{N}.json    one file per tree revision
//   sessions/{id}/prd.md            final document
//   sessions/{id}/prd.k{K}.md       intermediate document after K nodes
// Every file is written to a temporary sibling and renamed into place.

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "oversight/engine.hpp"
#include "oversight/transcript.hpp"

namespace oversight {

void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path session_dir(const std::string& id) const;
  std::filesystem::path transcript_path(const std::string& id) const;

  bool exists(const std::string& id) const;
  /// Writes state.json plus any tree revision or document not yet on disk.
  void save(const Session& session) const;
  Session load(const std::string& id) const;  // throws SessionNotFound
  std::vector<std::string> list() const;

  std::unique_ptr<TranscriptWriter> open_transcript(const std::string& id, bool fixed_clock) const;

 private:
  std::filesystem::path root_;
};

/// Session ids become directory names; restrict them accordingly.
bool valid_session_id(std::string_view id);

}  // namespace oversight
