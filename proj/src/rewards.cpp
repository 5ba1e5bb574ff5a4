#include "oversight/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "oversight/error.hpp"
#include "oversight/session_store.hpp"

namespace oversight {

double user_reward(const TraceSequence& seq) {
  if (seq.user_turn_feedback.empty()) {
    throw Error(ErrorCode::kNoUserTurns, "sequence " + seq.query_id + "/" + std::to_string(seq.seq_index) +
                                             " has no user turns");
  }
  std::size_t dont_care = 0;
  for (auto k : seq.user_turn_feedback) {
    if (k == FeedbackKind::kDontCare) ++dont_care;
  }
  if (dont_care == 0) return 0.0;
  return -static_cast<double>(dont_care) / static_cast<double>(seq.user_turn_feedback.size());
}

CombinedRewards combine_rewards(const std::vector<double>& ur, const std::vector<double>& pr, double or_j) {
  if (ur.size() != pr.size()) throw Error(ErrorCode::kLengthMismatch, "UR and PR arrays differ in length");
  if (ur.empty()) throw Error(ErrorCode::kEmptyBatch, "group has no sequences");
  CombinedRewards out;
  double sum = 0.0;
  for (std::size_t i = 0; i < ur.size(); ++i) {
    out.per_sequence.push_back({ur[i], pr[i], or_j, pr[i] + ur[i] + 0.5 * or_j});
    sum += pr[i] + ur[i];
  }
  out.aggregate = sum / static_cast<double>(ur.size()) + 0.5 * or_j;
  return out;
}

std::vector<double> group_baseline(const std::vector<double>& terminals) {
  if (terminals.empty()) throw Error(ErrorCode::kEmptyBatch, "group has no sequences");
  double sum = 0.0;
  for (double r : terminals) sum += r;
  const double mean = sum / static_cast<double>(terminals.size());
  std::vector<double> out;
  out.reserve(terminals.size());
  for (double r : terminals) out.push_back(r - mean);
  return out;
}

AdvantageTensor token_advantages(const std::vector<TraceSequence>& batch, const std::vector<double>& r_tilde,
                                 double epsilon) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "advantage batch is empty");
  if (batch.size() != r_tilde.size()) {
    throw Error(ErrorCode::kLengthMismatch, "one baseline value is needed per sequence");
  }
  AdvantageTensor a;
  a.rows = batch.size();
  for (const auto& s : batch) {
    if (s.token_count <= 0 || s.eos_position < 0 || s.eos_position >= s.token_count) {
      throw Error(ErrorCode::kInvalidArgument, "sequence needs 0 <= eos_position < token_count");
    }
    a.cols = std::max(a.cols, static_cast<std::size_t>(s.token_count));
    a.eos_positions.push_back(s.eos_position);
  }

  // Every masked position of row i carries the same raw return r~_i, so the
  // moments reduce to weighted sums over rows.
  double n = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double w = static_cast<double>(batch[i].eos_position + 1);
    n += w;
    sum += w * r_tilde[i];
  }
  a.mean = sum / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double d = r_tilde[i] - a.mean;
    ss += static_cast<double>(batch[i].eos_position + 1) * d * d;
  }
  a.stddev = std::sqrt(ss / n);
  // Equal returns must give exactly zero; rounding in the mean would
  // otherwise leave a tiny sigma and advantages of order 1e-9.
  if (std::all_of(r_tilde.begin(), r_tilde.end(), [&](double v) { return v == r_tilde.front(); })) {
    a.mean = r_tilde.front();
    a.stddev = 0.0;
  }
  // Epsilon only decides when the spread is too small to normalize; above it
  // the division is by sigma itself so the result has unit std.
  a.degenerate = a.stddev <= epsilon;

  a.values.assign(a.rows * a.cols, 0.0);
  if (a.degenerate) return a;
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double v = (r_tilde[i] - a.mean) / a.stddev;
    for (int t = 0; t <= batch[i].eos_position; ++t) a.values[i * a.cols + static_cast<std::size_t>(t)] = v;
  }
  return a;
}

nlohmann::ordered_json trace_json(const TraceSequence& s) {
  nlohmann::ordered_json kinds = nlohmann::ordered_json::array();
  for (auto k : s.user_turn_feedback) kinds.push_back(feedback_kind_name(k));
  return {{"query_id", s.query_id}, {"seq_index", s.seq_index}, {"token_count", s.token_count},
          {"eos_position", s.eos_position}, {"feedback", std::move(kinds)}, {"pr", s.progressive},
          {"or", s.outcome}};
}

std::vector<TraceSequence> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStorageError, "cannot open traces " + path.string());
  std::vector<TraceSequence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TraceSequence s;
      s.query_id = j.at("query_id").get<std::string>();
      s.seq_index = j.at("seq_index").get<int>();
      s.token_count = j.at("token_count").get<int>();
      s.eos_position = j.value("eos_position", s.token_count - 1);
      for (const auto& k : j.at("feedback")) s.user_turn_feedback.push_back(feedback_kind_from_name(k.get<std::string>()));
      s.progressive = j.value("pr", 0);
      s.outcome = j.value("or", 0.0);
      if (s.progressive != 0 && s.progressive != 1) throw Error(ErrorCode::kInvalidArgument, "pr must be 0 or 1");
      if (s.outcome < 0.0 || s.outcome > 1.0) throw Error(ErrorCode::kInvalidArgument, "or must lie in [0,1]");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidArgument, "bad trace at line " + std::to_string(lineno), e.what());
    }
  }
  return out;
}

std::vector<TraceGroup> group_traces(const std::vector<TraceSequence>& traces) {
  std::vector<TraceGroup> groups;
  std::map<std::string, std::size_t> at;
  for (const auto& s : traces) {
    auto [it, fresh] = at.emplace(s.query_id, groups.size());
    if (fresh) groups.push_back({s.query_id, {}});
    groups[it->second].sequences.push_back(s);
  }
  for (auto& g : groups) {
    std::stable_sort(g.sequences.begin(), g.sequences.end(),
                     [](const TraceSequence& a, const TraceSequence& b) { return a.seq_index < b.seq_index; });
  }
  return groups;
}

RewardReport compute_rewards(const std::vector<TraceSequence>& traces, double epsilon) {
  if (traces.empty()) throw Error(ErrorCode::kEmptyBatch, "no traces");
  RewardReport rep;
  rep.groups = group_traces(traces);
  std::vector<TraceSequence> batch;
  std::vector<double> all_tilde;
  for (const auto& g : rep.groups) {
    std::vector<double> ur, pr;
    const double or_j = g.sequences.front().outcome;
    for (const auto& s : g.sequences) {
      if (s.outcome != or_j) {
        throw Error(ErrorCode::kInvalidArgument, "sequences of query " + g.query_id + " disagree on OR");
      }
      ur.push_back(user_reward(s));
      pr.push_back(static_cast<double>(s.progressive));
    }
    CombinedRewards c = combine_rewards(ur, pr, or_j);
    std::vector<double> terminals;
    for (const auto& b : c.per_sequence) terminals.push_back(b.terminal);
    std::vector<double> tilde = group_baseline(terminals);
    for (std::size_t i = 0; i < tilde.size(); ++i) {
      batch.push_back(g.sequences[i]);
      all_tilde.push_back(tilde[i]);
    }
    rep.combined.push_back(std::move(c));
    rep.r_tilde.push_back(std::move(tilde));
  }
  rep.advantages = token_advantages(batch, all_tilde, epsilon);
  return rep;
}

nlohmann::ordered_json rewards_json(const RewardReport& rep) {
  nlohmann::ordered_json queries = nlohmann::ordered_json::array();
  for (std::size_t g = 0; g < rep.groups.size(); ++g) {
    nlohmann::ordered_json seqs = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < rep.groups[g].sequences.size(); ++i) {
      const auto& b = rep.combined[g].per_sequence[i];
      seqs.push_back({{"i", rep.groups[g].sequences[i].seq_index},
                      {"UR", b.ur},
                      {"PR", b.pr},
                      {"OR", b.or_shared},
                      {"terminal", b.terminal},
                      {"r_tilde", rep.r_tilde[g][i]}});
    }
    queries.push_back({{"query_id", rep.groups[g].query_id},
                       {"aggregate", rep.combined[g].aggregate},
                       {"sequences", std::move(seqs)}});
  }
  return {{"queries", std::move(queries)},
          {"whitening", {{"mean", rep.advantages.mean},
                         {"std", rep.advantages.stddev},
                         {"degenerate", rep.advantages.degenerate}}}};
}

void write_advantages(const AdvantageTensor& t, const std::filesystem::path& bin_path) {
  std::string bytes(t.values.size() * sizeof(double), '\0');
  std::memcpy(bytes.data(), t.values.data(), bytes.size());
  write_file_atomic(bin_path, bytes);
  std::filesystem::path side = bin_path;
  side.replace_extension(".json");
  nlohmann::ordered_json meta = {{"shape", {t.rows, t.cols}},
                                 {"dtype", "float64"},
                                 {"order", "row-major"},
                                 {"eos_positions", t.eos_positions}};
  write_file_atomic(side, meta.dump(2) + "\n");
}

}  // namespace oversight
