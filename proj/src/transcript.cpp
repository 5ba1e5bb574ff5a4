#include "oversight/transcript.hpp"

#include <ctime>

namespace oversight {
namespace {

std::string utc_now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

// Byte length of the intact prefix and the number of records in it.
std::pair<std::uintmax_t, std::int64_t> intact_prefix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::uintmax_t good = 0;
  std::int64_t count = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (in.eof()) break;  // no trailing newline: torn write
    if (!nlohmann::json::accept(line)) break;
    good += line.size() + 1;
    ++count;
  }
  return {good, count};
}

}  // namespace

nlohmann::ordered_json exchange_record(const ChatExchange& ex, std::int64_t seq, bool fixed_clock) {
  nlohmann::ordered_json rec;
  rec["seq"] = seq;
  rec["role"] = "assistant";
  rec["model_role"] = model_role_name(ex.request.model_role);
  auto& msgs = rec["request_messages"] = nlohmann::ordered_json::array();
  for (const auto& m : ex.request.messages) {
    msgs.push_back({{"role", message_role_name(m.role)}, {"content", m.content}});
  }
  rec["response"] = ex.response;
  rec["usage"] = {{"prompt_tokens", ex.usage.prompt_tokens},
                  {"completion_tokens", ex.usage.completion_tokens}};
  rec["latency_ms"] = fixed_clock ? 0 : ex.latency.count();
  rec["ts"] = fixed_clock ? std::string("1970-01-01T00:00:00.000Z") : utc_now_iso();
  rec["template_id"] = ex.request.template_id
                           ? nlohmann::ordered_json(prompt_id_name(*ex.request.template_id))
                           : nlohmann::ordered_json(nullptr);
  return rec;
}

TranscriptWriter::TranscriptWriter(std::filesystem::path path, bool fixed_clock)
    : path_(std::move(path)), fixed_clock_(fixed_clock) {
  std::error_code ec;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
  if (std::filesystem::exists(path_)) {
    const auto [good, count] = intact_prefix(path_);
    if (std::filesystem::file_size(path_) != good) std::filesystem::resize_file(path_, good, ec);
    if (ec) throw Error(ErrorCode::kStorageError, "cannot repair transcript " + path_.string());
    seq_ = count;
  }
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorCode::kStorageError, "cannot open transcript " + path_.string());
}

void TranscriptWriter::record(const ChatExchange& exchange) {
  std::lock_guard lock(mu_);
  const std::string line = exchange_record(exchange, seq_, fixed_clock_).dump() + "\n";
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw Error(ErrorCode::kStorageError, "transcript write failed: " + path_.string());
  ++seq_;
}

std::int64_t TranscriptWriter::next_seq() const {
  std::lock_guard lock(mu_);
  return seq_;
}

std::vector<nlohmann::json> read_transcript(const std::filesystem::path& path, bool* torn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStorageError, "cannot open transcript " + path.string());
  std::vector<nlohmann::json> records;
  std::string line;
  bool cut = false;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || in.eof()) {
      cut = true;
      break;
    }
    records.push_back(std::move(rec));
  }
  if (torn) *torn = cut;
  return records;
}

std::shared_ptr<ReplayBackend> ReplayBackend::from_file(const std::string& path, bool verify) {
  return std::make_shared<ReplayBackend>(read_transcript(path), verify);
}

void MemoryTranscript::record(const ChatExchange& exchange) {
  std::lock_guard lock(mu_);
  exchanges_.push_back(exchange);
}

std::vector<ChatExchange> MemoryTranscript::exchanges() const {
  std::lock_guard lock(mu_);
  return exchanges_;
}

}  // namespace oversight
