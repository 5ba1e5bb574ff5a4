#pragma once

// Append-only JSONL transcript of chat exchanges, one record per line:
//   {seq, role, model_role, request_messages, response, usage, latency_ms, ts, template_id}
// Each line is flushed before record() returns, so a crash leaves a
// parseable prefix.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oversight/gateway.hpp"

namespace oversight {

/// JSON record for one exchange.  A fixed clock pins ts and latency so that
/// replays produce byte-identical files.
nlohmann::ordered_json exchange_record(const ChatExchange& exchange, std::int64_t seq,
                                       bool fixed_clock);

class TranscriptWriter : public TranscriptSink {
 public:
  /// Opens for append.  A torn trailing line from an earlier crash is cut off
  /// and numbering resumes after the last intact record.
  explicit TranscriptWriter(std::filesystem::path path, bool fixed_clock = false);

  void record(const ChatExchange& exchange) override;  // throws StorageError
  std::int64_t next_seq() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  bool fixed_clock_;
  mutable std::mutex mu_;
  std::ofstream out_;
  std::int64_t seq_ = 0;
};

/// Records of the longest parseable prefix.  `torn` reports whether anything
/// after it was discarded.
std::vector<nlohmann::json> read_transcript(const std::filesystem::path& path,
                                            bool* torn = nullptr);

/// Collects exchanges in memory; used by tests and by replay comparison.
class MemoryTranscript : public TranscriptSink {
 public:
  void record(const ChatExchange& exchange) override;
  std::vector<ChatExchange> exchanges() const;

 private:
  mutable std::mutex mu_;
  std::vector<ChatExchange> exchanges_;
};

/// Fans one exchange out to two sinks; either may be null.
class TeeSink : public TranscriptSink {
 public:
  TeeSink(TranscriptSink* a, TranscriptSink* b) : a_(a), b_(b) {}
  void record(const ChatExchange& exchange) override {
    if (a_) a_->record(exchange);
    if (b_) b_->record(exchange);
  }

 private:
  TranscriptSink* a_;
  TranscriptSink* b_;
};

}  // namespace oversight
