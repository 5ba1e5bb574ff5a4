#include "oversight/transcript.hpp"

#include "doctest.h"

#include <fstream>
#include <thread>

#include "oversight/session_store.hpp"
#include "support.hpp"

using namespace oversight;
namespace fs = std::filesystem;

namespace {

ChatExchange exchange(const std::string& text) {
  ChatExchange ex;
  ex.request.model_role = ModelRole::kJudge;
  ex.request.messages = {{MessageRole::kSystem, "sys"}, {MessageRole::kUser, text}};
  ex.request.template_id = PromptId::kEvalModule;
  ex.response = "re: " + text;
  ex.latency = std::chrono::milliseconds(42);
  return ex;
}

}  // namespace

TEST_CASE("records are numbered and flushed line by line") {
  testing_support::ScratchDir dir("tx");
  const fs::path p = dir.path() / "t.jsonl";
  {
    TranscriptWriter w(p, true);
    for (int i = 0; i < 3; ++i) w.record(exchange("m" + std::to_string(i)));
    // Readable while the writer is still open.
    CHECK(read_transcript(p).size() == 3);
  }
  bool torn = true;
  const auto recs = read_transcript(p, &torn);
  CHECK_FALSE(torn);
  REQUIRE(recs.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(recs[i]["seq"] == i);
    CHECK(recs[i]["model_role"] == "judge");
    CHECK(recs[i]["template_id"] == "eval_module");
    CHECK(recs[i]["latency_ms"] == 0);
    CHECK(recs[i]["request_messages"][1]["content"] == "m" + std::to_string(i));
  }
}

TEST_CASE("fixed clock makes records byte-stable") {
  const auto a = exchange_record(exchange("x"), 7, true).dump();
  auto later = exchange("x");
  later.latency = std::chrono::milliseconds(9000);
  CHECK(exchange_record(later, 7, true).dump() == a);
  CHECK(exchange_record(later, 7, false).dump() != a);
}

TEST_CASE("a torn tail is cut and numbering resumes") {
  testing_support::ScratchDir dir("torn");
  const fs::path p = dir.path() / "t.jsonl";
  {
    TranscriptWriter w(p, true);
    w.record(exchange("a"));
    w.record(exchange("b"));
  }
  const auto intact = fs::file_size(p);
  {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << R"({"seq": 2, "role": "assist)";
  }
  bool torn = false;
  CHECK(read_transcript(p, &torn).size() == 2);
  CHECK(torn);

  TranscriptWriter w(p, true);
  CHECK(fs::file_size(p) == intact);
  CHECK(w.next_seq() == 2);
  w.record(exchange("c"));
  const auto recs = read_transcript(p, &torn);
  CHECK_FALSE(torn);
  REQUIRE(recs.size() == 3);
  CHECK(recs[2]["seq"] == 2);
  CHECK(recs[2]["response"] == "re: c");
}

TEST_CASE("garbage in the middle ends the readable prefix") {
  testing_support::ScratchDir dir("mid");
  const fs::path p = dir.path() / "t.jsonl";
  {
    TranscriptWriter w(p, true);
    w.record(exchange("a"));
  }
  {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << "not json\n";
  }
  TranscriptWriter w(p, true);
  CHECK(w.next_seq() == 1);
  w.record(exchange("b"));
  CHECK(read_transcript(p).size() == 2);
}

TEST_CASE("concurrent writers do not interleave lines") {
  testing_support::ScratchDir dir("conc");
  const fs::path p = dir.path() / "t.jsonl";
  {
    TranscriptWriter w(p, true);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&w, t] {
        for (int i = 0; i < 50; ++i) w.record(exchange(std::string(200, static_cast<char>('a' + t))));
      });
    }
    for (auto& th : threads) th.join();
  }
  const auto recs = read_transcript(p);
  REQUIRE(recs.size() == 200);
  for (int i = 0; i < 200; ++i) CHECK(recs[i]["seq"] == i);
}

TEST_CASE("atomic file writes and store listing") {
  testing_support::ScratchDir dir("store");
  write_file_atomic(dir.path() / "a" / "f.txt", "one");
  write_file_atomic(dir.path() / "a" / "f.txt", "two");
  CHECK(read_file(dir.path() / "a" / "f.txt") == "two");
  for (const auto& e : fs::directory_iterator(dir.path() / "a")) CHECK(e.path().filename() == "f.txt");

  SessionStore store(dir.path() / "root");
  CHECK(store.list().empty());
  CHECK_FALSE(store.exists("nope"));
  CHECK_THROWS_AS(store.load("nope"), Error);
  CHECK(valid_session_id("case_a-1"));
  CHECK_FALSE(valid_session_id("../etc"));
  CHECK_FALSE(valid_session_id(""));
}
