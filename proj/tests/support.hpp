#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "oversight/config.hpp"
#include "oversight/desk_backends.hpp"
#include "oversight/gateway.hpp"
#include "oversight/prompts.hpp"
#include "oversight/session_store.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(OVERSIGHT_TEST_SOURCE_DIR); }
inline fs::path fixture(const std::string& rel) { return source_dir() / "fixtures" / rel; }

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh directory under the build tree, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::path(OVERSIGHT_TEST_BINARY_DIR) / "scratch" /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline const oversight::PromptLibrary& prompts() { return oversight::PromptLibrary::shared(); }

// Echo policy for policy/updater/generator plus the containment judge.
inline std::shared_ptr<oversight::Gateway> desk_gateway(const std::string& tree_fixture = "trees/five_leaf.json") {
  auto gw = std::make_shared<oversight::Gateway>();
  auto echo = std::make_shared<oversight::FeatureEchoPolicy>(slurp(fixture(tree_fixture)));
  gw->set_backend(oversight::ModelRole::kInteractionPolicy, echo);
  gw->set_backend(oversight::ModelRole::kTreeUpdater, echo);
  gw->set_backend(oversight::ModelRole::kDocGenerator, echo);
  gw->set_backend(oversight::ModelRole::kJudge, std::make_shared<oversight::ContainmentJudge>());
  return gw;
}

inline oversight::AppConfig config_with_storage(const std::string& fixture_config, const fs::path& storage) {
  oversight::AppConfig c = oversight::load_config(fixture("configs/" + fixture_config));
  c.storage_root = storage;
  return c;
}

}  // namespace testing_support
