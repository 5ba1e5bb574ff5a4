#pragma once

// Rewards over recorded interaction traces and the group-baseline, whitened
// per-token advantages a trainer consumes.  Pure functions throughout:
// summation order is fixed so equal inputs give bit-equal outputs.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "oversight/feedback.hpp"

namespace oversight {

struct TraceSequence {
  std::string query_id;
  int seq_index = 0;
  int token_count = 0;   // includes the EOS position
  int eos_position = 0;  // T_i, last unmasked token
  std::vector<FeedbackKind> user_turn_feedback;
  int progressive = 0;   // PR in {0, 1}
  double outcome = 0.0;  // OR shared by the whole query

  bool masked(int t) const noexcept { return t <= eos_position; }
};

struct TraceGroup {
  std::string query_id;
  std::vector<TraceSequence> sequences;
};

/// -(#DontCare)/(#user turns); throws NoUserTurns.
double user_reward(const TraceSequence& seq);

struct RewardBreakdown {
  double ur = 0.0;
  double pr = 0.0;
  double or_shared = 0.0;
  double terminal = 0.0;  // PR + UR + 0.5 * OR
};

struct CombinedRewards {
  std::vector<RewardBreakdown> per_sequence;
  double aggregate = 0.0;  // sum(PR + UR) / n + 0.5 * OR
};

CombinedRewards combine_rewards(const std::vector<double>& ur, const std::vector<double>& pr, double or_j);

/// r_i minus the group mean.
std::vector<double> group_baseline(const std::vector<double>& terminals);

struct AdvantageTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;            // longest token_count; shorter rows are zero padded
  std::vector<double> values;      // row-major
  std::vector<int> eos_positions;
  double mean = 0.0;               // of the raw masked returns
  double stddev = 0.0;             // population
  bool degenerate = false;         // stddev <= epsilon, all advantages zero

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Raw return r~_i on t <= T_i, whitened over all masked positions in the
/// batch: (ret - mean) / std, zero beyond T_i.  A batch whose std is at most
/// epsilon is degenerate and gets zero advantages.
AdvantageTensor token_advantages(const std::vector<TraceSequence>& batch, const std::vector<double>& r_tilde,
                                 double epsilon = 1e-8);

// --- trace files ---------------------------------------------------------------

/// JSONL, one sequence per line:
///   {query_id, seq_index, token_count, eos_position, feedback: [kind...], pr, or}
std::vector<TraceSequence> read_traces(const std::filesystem::path& path);
nlohmann::ordered_json trace_json(const TraceSequence& seq);
/// Groups by query id in order of first appearance; sequences by seq_index.
std::vector<TraceGroup> group_traces(const std::vector<TraceSequence>& traces);

struct RewardReport {
  std::vector<TraceGroup> groups;
  std::vector<CombinedRewards> combined;       // per group
  std::vector<std::vector<double>> r_tilde;    // per group
  AdvantageTensor advantages;                  // rows in group then sequence order
};

RewardReport compute_rewards(const std::vector<TraceSequence>& traces, double epsilon = 1e-8);
nlohmann::ordered_json rewards_json(const RewardReport& report);
/// Writes {stem}.bin (float64, row-major) and {stem}.json {shape, eos_positions}.
void write_advantages(const AdvantageTensor& tensor, const std::filesystem::path& bin_path);

}  // namespace oversight
