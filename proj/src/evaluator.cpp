#include "oversight/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oversight/json_text.hpp"
#include "oversight/tree.hpp"

namespace oversight {
namespace {

constexpr std::string_view kCoreSection = "Core Functional Modules";

void warn(std::vector<std::string>* w, std::string msg) {
  if (w) w->push_back(std::move(msg));
}

std::string modules_info() {
  std::vector<std::string> lines;
  for (auto s : kPrdSections) lines.push_back("- " + std::string(s));
  return text::join(lines, "\n");
}

std::string rubric_lines(const std::vector<std::string>& texts) {
  std::vector<std::string> lines;
  for (const auto& t : texts) lines.push_back("- " + t);
  return text::join(lines, "\n");
}

// Keys a judge might use for a rubric: its text with or without the list
// marker, whitespace- and case-insensitive.
std::string rubric_key(std::string_view s) {
  std::string t = text::trim(s);
  if (t.rfind("- ", 0) == 0) t = t.substr(2);
  return text::normalize_ws(t);
}

std::optional<double> as_number(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = text::trim(v.get<std::string>());
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (!s.empty() && end && *end == '\0') return d;
  }
  if (v.is_object()) {
    for (const char* k : {"score", "value"}) {
      if (v.contains(k)) return as_number(v.at(k));
    }
  }
  return std::nullopt;
}

const std::vector<std::pair<std::size_t, std::vector<std::string_view>>>& section_aliases() {
  static const std::vector<std::pair<std::size_t, std::vector<std::string_view>>> table = {
      {0, {"product overview", "overview"}},
      {1, {"core functional modules", "core functional module", "core functions", "core function",
           "core functionality", "core feature modules", "core features", "functional modules"}},
      {2, {"non-functional requirements", "non functional requirements", "nonfunctional requirements",
           "non-functional requirement", "non-functional"}},
      {3, {"user experience design", "user experience", "ux design", "experience design"}},
      {4, {"business rules", "business rule"}},
  };
  return table;
}

// Keyword hints for placing a rubric by its [Domain] tag.
const std::vector<std::pair<std::size_t, std::vector<std::string_view>>>& domain_keywords() {
  static const std::vector<std::pair<std::size_t, std::vector<std::string_view>>> table = {
      {0, {"overview", "positioning", "value proposition", "target user", "target audience", "vision",
           "brand"}},
      {2, {"performance", "security", "reliability", "availability", "scalability", "compatibility",
           "latency", "stability", "non-functional", "nonfunctional"}},
      {3, {"user experience", "ux", "ui", "interface", "layout", "navigation", "journey", "visual",
           "accessibility", "onboarding"}},
      {4, {"business", "pricing", "tier", "subscription", "copyright", "compliance", "policy",
           "payment", "licens", "rule"}},
  };
  return table;
}

bool has_word(std::string_view hay, std::string_view needle) {
  // Short keywords (ux, ui) must stand alone; longer ones may be prefixes.
  const std::string h = text::to_lower(hay);
  std::size_t pos = 0;
  while ((pos = h.find(needle, pos)) != std::string::npos) {
    const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(h[pos - 1]));
    const std::size_t end = pos + needle.size();
    const bool right = end >= h.size() || !std::isalnum(static_cast<unsigned char>(h[end]));
    if (left && (right || needle.size() > 3)) return true;
    ++pos;
  }
  return false;
}

std::optional<std::size_t> domain_section(std::string_view rubric) {
  std::string domain;
  const std::string t = text::trim(rubric);
  if (!t.empty() && t.front() == '[') {
    const auto close = t.find(']');
    if (close != std::string::npos) domain = t.substr(1, close - 1);
  }
  if (domain.empty()) return std::nullopt;
  if (auto idx = prd_section_index(domain)) return idx;
  std::optional<std::size_t> hit;
  for (const auto& [idx, words] : domain_keywords()) {
    for (auto w : words) {
      if (has_word(domain, w)) {
        if (hit && *hit != idx) return std::nullopt;  // ambiguous
        hit = idx;
        break;
      }
    }
  }
  return hit;
}

void collect_features(const nlohmann::ordered_json& node, std::vector<std::string>& out) {
  if (!node.is_object()) return;
  if (auto f = node.find("features"); f != node.end() && f->is_array()) {
    for (const auto& v : *f) {
      if (v.is_string() && text::trim(v.get<std::string>()) != "...") out.push_back(v.get<std::string>());
    }
  }
  if (auto s = node.find("submodules"); s != node.end() && s->is_object()) {
    for (const auto& [k, v] : s->items()) collect_features(v, out);
  }
}

}  // namespace

RubricTree RubricTree::empty() {
  RubricTree t;
  for (auto s : kPrdSections) t.modules.push_back({std::string(s), {}});
  return t;
}

std::size_t RubricTree::size() const {
  std::size_t n = 0;
  for (const auto& m : modules) n += m.rubrics.size();
  return n;
}

void RubricTree::renumber() {
  for (std::size_t m = 0; m < modules.size(); ++m) {
    for (std::size_t k = 0; k < modules[m].rubrics.size(); ++k) {
      modules[m].rubrics[k].id = "M" + std::to_string(m + 1) + ".R" + std::to_string(k + 1);
    }
  }
}

std::optional<std::size_t> prd_section_index(std::string_view name) {
  std::string n = text::normalize_ws(name);
  // Drop numbering such as "1." or "2)" and trailing colons.
  while (!n.empty() && (std::isdigit(static_cast<unsigned char>(n.front())) || n.front() == '.' ||
                        n.front() == ')' || n.front() == ' ')) {
    n.erase(0, 1);
  }
  while (!n.empty() && (n.back() == ':' || n.back() == ' ')) n.pop_back();
  for (const auto& [idx, aliases] : section_aliases()) {
    for (auto a : aliases) {
      if (n == a) return idx;
    }
  }
  return std::nullopt;
}

RubricTree parse_rubric_tree(const nlohmann::ordered_json& doc) {
  RubricTree tree = RubricTree::empty();
  const nlohmann::ordered_json* list = &doc;
  if (doc.is_object() && doc.contains("rubrics_tree")) list = &doc.at("rubrics_tree");
  std::vector<const nlohmann::ordered_json*> maps;
  if (list->is_array()) {
    for (const auto& e : *list) maps.push_back(&e);
  } else {
    maps.push_back(list);
  }
  for (const nlohmann::ordered_json* m : maps) {
    if (!m->is_object()) throw Error(ErrorCode::kConfig, "rubric tree entries must be objects");
    for (const auto& [key, node] : m->items()) {
      const auto idx = prd_section_index(key);
      if (!idx) throw Error(ErrorCode::kConfig, "rubric section is not a PRD section: " + key);
      std::vector<std::string> feats;
      collect_features(node, feats);
      for (auto& f : feats) tree.modules[*idx].rubrics.push_back({"", std::move(f)});
    }
  }
  tree.renumber();
  return tree;
}

RubricTree load_rubric_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open rubric file " + path.string());
  try {
    return parse_rubric_tree(nlohmann::ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, "bad rubric file " + path.string(), e.what());
  }
}

nlohmann::ordered_json rubric_tree_json(const RubricTree& tree) {
  nlohmann::ordered_json sections = nlohmann::ordered_json::object();
  for (const auto& m : tree.modules) {
    nlohmann::ordered_json feats = nlohmann::ordered_json::array();
    for (const auto& r : m.rubrics) feats.push_back(r.text);
    sections[m.name] = {{"features", std::move(feats)}};
  }
  return {{"rubrics_tree", nlohmann::ordered_json::array({std::move(sections)})}};
}

const std::string& SplitDocument::part(std::string_view module) const {
  static const std::string empty;
  for (const auto& [k, v] : parts) {
    if (same_root_name(k, module)) return v;
  }
  return empty;
}

double coerce_score(double v) {
  if (!(v > 0.25)) return 0.0;  // also maps NaN to 0
  if (v <= 0.75) return 0.5;
  return 1.0;
}

AlignmentResult alignment_score(const std::vector<ModuleScores>& modules, bool strict_indicator) {
  AlignmentResult out;
  double pooled = 0.0;
  double macro = 0.0;
  std::size_t macro_n = 0;
  for (const auto& m : modules) {
    if (m.scores.empty()) {
      out.per_module.emplace_back(m.module, std::nullopt);
      continue;
    }
    double sum = 0.0;
    for (const auto& s : m.scores) sum += strict_indicator ? (s.value == 1.0 ? 1.0 : 0.0) : s.value;
    pooled += sum;
    out.rubric_count += m.scores.size();
    const double mean = sum / static_cast<double>(m.scores.size());
    out.per_module.emplace_back(m.module, mean);
    macro += mean;
    ++macro_n;
  }
  if (out.rubric_count == 0) throw Error(ErrorCode::kEmptyRubricSet, "no rubrics to score");
  out.overall = pooled / static_cast<double>(out.rubric_count);
  out.macro_average = macro / static_cast<double>(macro_n);
  return out;
}

std::vector<std::vector<double>> judge_agreement(const std::vector<std::vector<RubricScore>>& sets) {
  if (sets.size() < 2) throw Error(ErrorCode::kInvalidArgument, "agreement needs at least two scorings");
  std::vector<std::map<std::string, double>> by_id;
  for (const auto& set : sets) {
    std::map<std::string, double> m;
    for (const auto& s : set) {
      if (!m.emplace(s.rubric_id, s.value).second) {
        throw Error(ErrorCode::kIdMismatch, "duplicate rubric id " + s.rubric_id);
      }
    }
    by_id.push_back(std::move(m));
  }
  for (std::size_t i = 1; i < by_id.size(); ++i) {
    if (by_id[i].size() != by_id[0].size() ||
        !std::equal(by_id[i].begin(), by_id[i].end(), by_id[0].begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; })) {
      throw Error(ErrorCode::kIdMismatch, "scorings cover different rubric ids");
    }
  }
  if (by_id[0].empty()) throw Error(ErrorCode::kEmptyRubricSet, "no rubrics to compare");
  const std::size_t n = sets.size();
  std::vector<std::vector<double>> mat(n, std::vector<double>(n, 1.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      std::size_t same = 0;
      auto ib = by_id[b].begin();
      for (const auto& [id, v] : by_id[a]) {
        if (ib->second == v) ++same;
        ++ib;
      }
      mat[a][b] = mat[b][a] = static_cast<double>(same) / static_cast<double>(by_id[a].size());
    }
  }
  return mat;
}

std::optional<nlohmann::json> parse_judge_json(std::string_view raw) {
  const std::string unfenced = text::strip_code_fences(raw);
  auto obj = text::extract_json_object(unfenced);
  if (!obj) obj = text::extract_json_object(raw);
  if (!obj) return std::nullopt;
  auto doc = nlohmann::json::parse(*obj, nullptr, false);
  if (doc.is_discarded()) doc = nlohmann::json::parse(text::repair_interior_quotes(*obj), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
  return doc;
}

Evaluator::Evaluator(const Gateway& gateway, const PromptLibrary& prompts, TranscriptSink* sink,
                     EvaluatorOptions options)
    : gateway_(gateway), prompts_(prompts), sink_(sink), options_(options) {}

nlohmann::json Evaluator::judge_json(ChatRequest req, std::vector<std::string>* warnings) const {
  req.model_role = ModelRole::kJudge;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const ChatExchange ex = gateway_.complete(req, sink_);
    if (auto doc = parse_judge_json(ex.response)) return *doc;
    const std::string id = req.template_id ? std::string(prompt_id_name(*req.template_id)) : "judge";
    if (attempt == 0) {
      warn(warnings, id + ": judge reply was not valid JSON; asking again");
      req.messages.push_back({MessageRole::kAssistant, ex.response});
      req.messages.push_back({MessageRole::kUser,
                              "Your reply could not be parsed as JSON. Output only the JSON object "
                              "in the required format, with interior double quotes escaped."});
    } else {
      throw Error(ErrorCode::kJudgeParseError, id + ": judge reply is not valid JSON after one retry",
                  ex.response.substr(0, 400));
    }
  }
  throw Error(ErrorCode::kInternal, "unreachable");
}

RubricTree Evaluator::generate_rubrics(std::string_view reference_prd, std::vector<std::string>* warnings) const {
  if (text::trim(reference_prd).empty()) throw Error(ErrorCode::kInvalidArgument, "reference PRD is empty");
  ChatRequest req;
  req.template_id = PromptId::kRubricsGen;
  req.slots = {{"prd_doc", std::string(reference_prd)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kRubricsGen, req.slots)}};
  const nlohmann::json doc = judge_json(std::move(req), warnings);
  if (!doc.contains("rubrics") || !doc.at("rubrics").is_array()) {
    throw Error(ErrorCode::kJudgeParseError, "rubric reply lacks a \"rubrics\" array");
  }
  std::vector<std::string> texts;
  for (const auto& v : doc.at("rubrics")) {
    if (v.is_string() && !text::trim(v.get<std::string>()).empty()) texts.push_back(text::trim(v.get<std::string>()));
  }

  RubricTree tree = RubricTree::empty();
  std::vector<std::size_t> placed(texts.size(), kPrdSections.size());
  std::vector<std::string> unplaced;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (auto idx = domain_section(texts[i])) {
      placed[i] = *idx;
    } else {
      unplaced.push_back(texts[i]);
    }
  }
  if (!unplaced.empty()) {
    ChatRequest cls;
    cls.template_id = PromptId::kRubricClassify;
    cls.slots = {{"modules_info", modules_info()}, {"rubrics", rubric_lines(unplaced)}};
    cls.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kRubricClassify, cls.slots)}};
    const nlohmann::json map = judge_json(std::move(cls), warnings);
    std::map<std::string, std::size_t> assigned;
    for (const auto& [k, v] : map.items()) {
      if (!v.is_string()) continue;
      if (auto idx = prd_section_index(v.get<std::string>())) assigned[rubric_key(k)] = *idx;
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (placed[i] != kPrdSections.size()) continue;
      auto it = assigned.find(rubric_key(texts[i]));
      if (it != assigned.end()) {
        placed[i] = it->second;
      } else {
        placed[i] = 1;
        warn(warnings, "rubric not classified, filed under " + std::string(kCoreSection) + ": " + texts[i]);
      }
    }
  }
  for (std::size_t i = 0; i < texts.size(); ++i) tree.modules[placed[i]].rubrics.push_back({"", texts[i]});
  tree.renumber();
  return tree;
}

SplitDocument Evaluator::split_prd(std::string_view prd, std::vector<std::string>* warnings) const {
  if (text::trim(prd).empty()) throw Error(ErrorCode::kInvalidArgument, "PRD is empty");
  ChatRequest req;
  req.template_id = PromptId::kEvalSplit;
  req.slots = {{"modules_info", modules_info()}, {"md_content", std::string(prd)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kEvalSplit, req.slots)}};
  const nlohmann::json doc = judge_json(std::move(req), warnings);

  SplitDocument out;
  for (auto section : kPrdSections) {
    std::optional<std::string> found;
    for (const auto& [k, v] : doc.items()) {
      if (prd_section_index(k) != prd_section_index(section)) continue;
      if (v.is_string()) {
        found = v.get<std::string>();
      } else if (v.is_array()) {
        std::vector<std::string> pieces;
        for (const auto& p : v) pieces.push_back(p.is_string() ? p.get<std::string>() : p.dump());
        found = text::join(pieces, "\n");
      } else if (!v.is_null()) {
        found = v.dump();
      }
      break;
    }
    if (!found) warn(warnings, "split: no part for " + std::string(section) + "; using empty text");
    out.parts.emplace_back(std::string(section), found.value_or(""));
  }
  return out;
}

std::vector<RubricScore> Evaluator::score_module(std::string_view part_text, const std::vector<Rubric>& rubrics,
                                                 std::vector<std::string>* warnings) const {
  if (rubrics.empty()) throw Error(ErrorCode::kEmptyRubricSet, "no rubrics for this module");
  std::vector<std::string> texts;
  for (const auto& r : rubrics) texts.push_back(r.text);
  ChatRequest req;
  req.template_id = PromptId::kEvalModule;
  req.slots = {{"rubrics", rubric_lines(texts)}, {"prd_doc", std::string(part_text)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kEvalModule, req.slots)}};
  const nlohmann::json doc = judge_json(std::move(req), warnings);
  const bool nested = doc.contains("eval") && doc.at("eval").is_object();
  const nlohmann::json& eval = nested ? doc.at("eval") : doc;

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < rubrics.size(); ++i) {
    index.emplace(rubric_key(rubrics[i].text), i);
    index.emplace(rubric_key(rubrics[i].id), i);
  }
  std::vector<std::optional<RubricScore>> got(rubrics.size());
  for (const auto& [k, v] : eval.items()) {
    if (!nested && (k == "score" || k == "reason")) continue;
    auto it = index.find(rubric_key(k));
    if (it == index.end()) {
      warn(warnings, "judge scored an unknown rubric, ignored: " + k);
      continue;
    }
    const auto num = as_number(v);
    if (!num) {
      warn(warnings, "judge value for " + rubrics[it->second].id + " is not a number; scored 0");
      continue;
    }
    const double c = coerce_score(*num);
    if (c != *num) {
      warn(warnings, "judge value " + text::format_double(*num) + " for " + rubrics[it->second].id +
                         " coerced to " + text::format_double(c));
    }
    RubricScore s{rubrics[it->second].id, c, std::nullopt};
    if (v.is_object() && v.contains("reason") && v.at("reason").is_string()) {
      s.judge_rationale = v.at("reason").get<std::string>();
    }
    got[it->second] = std::move(s);
  }
  std::vector<RubricScore> out;
  for (std::size_t i = 0; i < rubrics.size(); ++i) {
    if (!got[i]) {
      warn(warnings, "judge omitted rubric " + rubrics[i].id + "; scored 0");
      got[i] = RubricScore{rubrics[i].id, 0.0, std::nullopt};
    }
    out.push_back(std::move(*got[i]));
  }
  return out;
}

EvaluationReport Evaluator::evaluate(std::string_view prd, const RubricTree& rubrics) const {
  if (rubrics.size() == 0) throw Error(ErrorCode::kEmptyRubricSet, "rubric tree is empty");
  EvaluationReport report;
  report.strict_indicator = options_.strict_indicator;
  report.split = split_prd(prd, &report.warnings);

  const std::size_t n = rubrics.modules.size();
  std::vector<std::vector<RubricScore>> scores(n);
  std::vector<std::vector<std::string>> module_warnings(n);
  auto score_one = [&](std::size_t m) {
    const auto& mod = rubrics.modules[m];
    if (mod.rubrics.empty()) return;
    scores[m] = score_module(report.split.part(mod.name), mod.rubrics, &module_warnings[m]);
  };
  if (options_.max_parallel > 1) {
    std::vector<std::future<void>> pending;
    for (std::size_t m = 0; m < n; ++m) {
      pending.push_back(std::async(std::launch::async, score_one, m));
      if (pending.size() >= static_cast<std::size_t>(options_.max_parallel)) {
        for (auto& f : pending) f.get();
        pending.clear();
      }
    }
    for (auto& f : pending) f.get();
  } else {
    for (std::size_t m = 0; m < n; ++m) score_one(m);
  }
  for (std::size_t m = 0; m < n; ++m) {
    report.modules.push_back({rubrics.modules[m].name, std::move(scores[m])});
    for (auto& w : module_warnings[m]) report.warnings.push_back(std::move(w));
  }
  report.alignment = alignment_score(report.modules, options_.strict_indicator);
  return report;
}

int Evaluator::progressive_reward(std::string_view node_summary, const std::vector<std::string>& prior_summaries,
                                  const std::vector<std::string>& target_points,
                                  std::vector<std::string>* warnings) const {
  ChatRequest req;
  req.template_id = PromptId::kProgressiveReward;
  req.slots = {{"node_document", std::string(node_summary)},
               {"history_summary", prior_summaries.empty() ? std::string("(none)")
                                                           : text::join(prior_summaries, "\n\n")},
               {"features_text", rubric_lines(target_points)}};
  req.messages = {{MessageRole::kSystem, prompts_.render(PromptId::kProgressiveReward, req.slots)}};
  nlohmann::json doc = judge_json(req, warnings);
  for (int attempt = 0;; ++attempt) {
    if (auto v = doc.contains("score") ? as_number(doc.at("score")) : std::nullopt; v && (*v == 0 || *v == 1)) {
      return static_cast<int>(*v);
    }
    if (attempt == 1) break;
    warn(warnings, "progressive_reward: reply lacks a 0/1 score; asking again");
    req.messages.push_back({MessageRole::kAssistant, doc.dump()});
    req.messages.push_back({MessageRole::kUser, "Output only {\"score\": 0 or 1, \"reason\": \"...\"}."});
    doc = judge_json(req, warnings);
  }
  throw Error(ErrorCode::kJudgeParseError, "progressive reward reply has no 0/1 score", doc.dump());
}

nlohmann::ordered_json report_json(const EvaluationReport& report, const RubricTree& rubrics) {
  std::map<std::string, const Rubric*> by_id;
  for (const auto& m : rubrics.modules) {
    for (const auto& r : m.rubrics) by_id[r.id] = &r;
  }
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [name, v] : report.alignment.per_module) {
    per[name] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  }
  nlohmann::ordered_json scores = nlohmann::ordered_json::array();
  for (const auto& m : report.modules) {
    for (const auto& s : m.scores) {
      auto it = by_id.find(s.rubric_id);
      scores.push_back({{"rubric_id", s.rubric_id},
                        {"module", m.module},
                        {"text", it == by_id.end() ? std::string() : it->second->text},
                        {"value", s.value},
                        {"judge_rationale", s.judge_rationale ? nlohmann::ordered_json(*s.judge_rationale)
                                                              : nlohmann::ordered_json(nullptr)}});
    }
  }
  return {{"per_module", std::move(per)},
          {"overall", report.alignment.overall},
          {"macro_average", report.alignment.macro_average},
          {"rubric_count", report.alignment.rubric_count},
          {"strict_indicator", report.strict_indicator},
          {"scores", std::move(scores)},
          {"warnings", report.warnings}};
}

std::string report_markdown(const EvaluationReport& report) {
  std::string head = "|", rule = "|", row = "|";
  for (const auto& [name, v] : report.alignment.per_module) {
    head += " " + name + " |";
    rule += " --- |";
    row += " " + (v ? text::format_double(std::round(*v * 1000) / 1000) : std::string("n/a")) + " |";
  }
  head += " Overall |";
  rule += " --- |";
  row += " " + text::format_double(std::round(report.alignment.overall * 1000) / 1000) + " |";
  return head + "\n" + rule + "\n" + row + "\n";
}

}  // namespace oversight
