#pragma once

// Rubric-based judging of a generated PRD against a reference intent.
// Stage one splits the document into the five PRD sections; stage two scores
// each section against that section's rubrics on the {0, 0.5, 1} scale.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oversight/gateway.hpp"
#include "oversight/prompts.hpp"

namespace oversight {

struct Rubric {
  std::string id;
  std::string text;  // "[Domain] - [requirement]"
};

struct RubricModule {
  std::string name;
  std::vector<Rubric> rubrics;
};

/// Always holds the five PRD sections in canonical order.
struct RubricTree {
  std::vector<RubricModule> modules;

  static RubricTree empty();
  std::size_t size() const;
  /// Assigns ids M{m}.R{k} (1-based) in module then list order.
  void renumber();
};

/// Index into kPrdSections for a section title, tolerating common variants.
std::optional<std::size_t> prd_section_index(std::string_view name);

/// Reads {"rubrics_tree": [{section: {description?, features?, submodules?}}, ...]}.
/// Every feature string anywhere under a section becomes one rubric.
RubricTree parse_rubric_tree(const nlohmann::ordered_json& doc);
RubricTree load_rubric_file(const std::filesystem::path& path);
nlohmann::ordered_json rubric_tree_json(const RubricTree& tree);

struct RubricScore {
  std::string rubric_id;
  double value = 0.0;  // exactly 0, 0.5 or 1
  std::optional<std::string> judge_rationale;

  bool operator==(const RubricScore&) const = default;
};

struct ModuleScores {
  std::string module;
  std::vector<RubricScore> scores;
};

struct SplitDocument {
  std::vector<std::pair<std::string, std::string>> parts;  // five sections, canonical order
  const std::string& part(std::string_view module) const;
};

/// Nearest of {0, 0.5, 1}; ties go to the lower value.  Out-of-range input is clamped.
double coerce_score(double v);

struct AlignmentResult {
  std::vector<std::pair<std::string, std::optional<double>>> per_module;  // absent: no rubrics
  double overall = 0.0;        // pooled over every rubric
  double macro_average = 0.0;  // mean of the module means that exist
  std::size_t rubric_count = 0;
};

/// strict_indicator counts only a full 1 as satisfied.
AlignmentResult alignment_score(const std::vector<ModuleScores>& modules, bool strict_indicator = false);

/// Square matrix; entry (a,b) is the fraction of rubrics scored identically.
std::vector<std::vector<double>> judge_agreement(const std::vector<std::vector<RubricScore>>& sets);

struct EvaluationReport {
  AlignmentResult alignment;
  std::vector<ModuleScores> modules;
  SplitDocument split;
  std::vector<std::string> warnings;
  bool strict_indicator = false;
};

nlohmann::ordered_json report_json(const EvaluationReport& report, const RubricTree& rubrics);
std::string report_markdown(const EvaluationReport& report);

struct EvaluatorOptions {
  bool strict_indicator = false;
  int max_parallel = 1;  // >1 scores sections concurrently; transcript order then varies
};

class Evaluator {
 public:
  Evaluator(const Gateway& gateway, const PromptLibrary& prompts, TranscriptSink* sink = nullptr,
            EvaluatorOptions options = {});

  RubricTree generate_rubrics(std::string_view reference_prd, std::vector<std::string>* warnings = nullptr) const;
  SplitDocument split_prd(std::string_view prd, std::vector<std::string>* warnings = nullptr) const;
  std::vector<RubricScore> score_module(std::string_view part_text, const std::vector<Rubric>& rubrics,
                                        std::vector<std::string>* warnings = nullptr) const;
  EvaluationReport evaluate(std::string_view prd, const RubricTree& rubrics) const;

  /// 1 when the node summary adds coverage of the target points over the
  /// earlier summaries, else 0.
  int progressive_reward(std::string_view node_summary, const std::vector<std::string>& prior_summaries,
                         const std::vector<std::string>& target_points,
                         std::vector<std::string>* warnings = nullptr) const;

 private:
  nlohmann::json judge_json(ChatRequest request, std::vector<std::string>* warnings) const;

  const Gateway& gateway_;
  const PromptLibrary& prompts_;
  TranscriptSink* sink_;
  EvaluatorOptions options_;
};

/// Lenient JSON object extraction for judge output: fences, surrounding prose
/// and unescaped interior quotes are tolerated.  Returns nullopt on failure.
std::optional<nlohmann::json> parse_judge_json(std::string_view text);

}  // namespace oversight
