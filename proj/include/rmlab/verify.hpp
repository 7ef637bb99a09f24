#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rmlab/models.hpp"
#include "rmlab/synth.hpp"

// Everything downstream of a trained reward model: trailing-token reward
// aggregation, best-of-N selection, pairwise preference accuracy, win/tie/
// lose comparison against a gold scorer, and per-token reward heatmaps.
// All operations here are read-only over frozen models.

namespace rmlab {

enum class Aggregation { last_token, ema };

struct AggregationConfig {
  Aggregation kind = Aggregation::last_token;
  double decay = 0.0;       // ignored for last_token
  bool normalized = false;  // divide the EMA by its weight sum (alternative reading)

  void validate() const;  // decay in [0,1]
};

Aggregation parse_aggregation(const std::string& name);
std::string aggregation_name(Aggregation kind);

// Trailing-token weighted sum: sum_i decay^(m-i) * rewards[i] for i = 1..m
// (1-based), with the convention 0^0 = 1 so decay 0 returns the last reward
// and decay 1 the plain sum. normalized divides by the weight sum.
double ema_aggregate(const std::vector<double>& rewards, double decay, bool normalized = false);

// Applies the configured aggregation to one prefix-reward vector.
double aggregate(const std::vector<double>& rewards, const AggregationConfig& cfg);

// Convenience: prefix rewards of (prompt, response) under rm, aggregated.
double aggregate_response(const RewardModel& rm, const TokenSeq& seq, const AggregationConfig& cfg);

// Gold-truth scorer used wherever an oracle stands in for a reward model.
using SeqScorer = std::function<double(const TokenSeq& seq)>;

struct BonResult {
  int selected = -1;           // argmax of scores, ties to the lowest index
  std::vector<double> scores;  // aggregate score per candidate
  int gold_best = -1;          // argmax of gold scores; -1 when no gold scorer
  bool gold_correct = false;   // selected candidate attains the best gold score
};

// Scores every candidate response to one prompt and picks the best.
BonResult bon_select(const RewardModel& rm, const std::vector<int>& prompt,
                     const std::vector<std::vector<int>>& candidates, const AggregationConfig& cfg,
                     const SeqScorer* gold = nullptr);

// Same selection driven by arbitrary per-candidate scores (already aggregated).
BonResult bon_select_scores(const std::vector<double>& scores, const std::vector<double>* gold_scores = nullptr);

// Fraction of triples where aggregate(chosen) > aggregate(rejected); exact
// ties count one half. The scorer overload evaluates any SeqScorer in place
// of a reward model (gold oracle, constant baseline, ...).
double pairwise_accuracy(const RewardModel& rm, const std::vector<PreferenceRecord>& data,
                         const AggregationConfig& cfg);
double pairwise_accuracy(const SeqScorer& scorer, const std::vector<PreferenceRecord>& data);

struct WinTieLose {
  double win = 0.0;   // fraction where a scores above b by more than tie_eps
  double tie = 0.0;   // fraction within tie_eps
  double lose = 0.0;  // remainder; the three sum to 1 within 1e-12
};

// Compares two policies' responses to the same prompts under a gold scorer.
// responses_a[i] and responses_b[i] must answer prompts[i]; misaligned list
// lengths are an InvalidInputError.
WinTieLose win_tie_lose(const std::vector<std::vector<int>>& prompts,
                        const std::vector<std::vector<int>>& responses_a,
                        const std::vector<std::vector<int>>& responses_b, const SeqScorer& gold,
                        double tie_eps = 1e-6);

// Score-list form used when responses are already gold-scored.
WinTieLose win_tie_lose_scores(const std::vector<double>& a, const std::vector<double>& b, double tie_eps = 1e-6);

struct HeatmapRow {
  int position = 0;    // k, 1-based prefix length
  int token = 0;       // y_k
  std::string name;    // printable token name
  double reward = 0.0; // sigmoid(prefix logit), in (0,1)
};

std::vector<HeatmapRow> heatmap_rows(const RewardModel& rm, const TokenSeq& seq);

// Writes one line per response token (position, token id, token name,
// sigmoid of the prefix reward logit) plus a PPM image companion at
// path + ".ppm" mapping reward to a red-to-green ramp.
void heatmap_export(const RewardModel& rm, const TokenSeq& seq, const std::string& path);

}  // namespace rmlab
