#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rmlab/models.hpp"
#include "rmlab/rng.hpp"

// Synthetic preference tasks and an enumerable check world.
//
// The scoring rule is deliberately length-neutral: a response's gold score is
// a squashed function of its MEAN per-token contribution plus a bonus for
// adjacent pairs of good tokens. Length carries no signal of its own, which
// makes the length_bias knob below a purely spurious correlation that a
// training set can plant and a held-out set can expose.

namespace rmlab {

struct TaskSpec {
  int vocab_size = 16;
  int max_prompt_len = 4;
  int max_response_len = 10;
  std::vector<int> good_tokens = {3, 4, 5, 6};
  std::vector<int> bad_tokens = {7, 8, 9, 10};
  double good_weight = 1.0;
  double bad_weight = 1.0;
  double context_bonus = 0.5;
  double squash_scale = 2.0;
  double continue_prob = 0.85;  // chance each step emits content instead of EOS
  double good_bias = 1.5;       // logit scale separating good-mode and bad-mode token draws
  double good_mix = 0.5;        // probability a sampled response is in good mode
  double length_bias = 0.0;     // lambda: chance the longer response is forced to be chosen
  double label_noise = 0.0;     // chance a finished pair's labels are swapped

  Vocab vocab() const;
  void validate() const;
};

// Signed contribution of one token: +good_weight, -bad_weight, or 0.
double token_contrib(const TaskSpec& spec, int token);

// Squashed quality of a response (content tokens only; trailing EOS ignored).
// Empty content scores exactly 0.5.
double gold_score(const TaskSpec& spec, const std::vector<int>& response);

struct PreferenceRecord {
  std::vector<int> prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
  double gold_chosen = 0.0;
  double gold_rejected = 0.0;
  std::uint64_t seed = 0;  // per-record stream seed, for provenance
  bool flipped = false;    // true when chosen's gold score is below rejected's
};

struct LabeledRecord {
  std::vector<int> prompt;
  std::vector<int> response;
  int label = 0;  // 1 = the preferred side of its source pair
  double gold = 0.0;
};

std::vector<int> sample_prompt(const TaskSpec& spec, Rng& rng);
std::vector<int> sample_task_response(const TaskSpec& spec, bool good_mode, Rng& rng);

std::vector<TokenSeq> build_corpus(const TaskSpec& spec, int count, std::uint64_t seed);
std::vector<PreferenceRecord> build_preferences(const TaskSpec& spec, int count, std::uint64_t seed);
std::vector<LabeledRecord> to_labeled(const std::vector<PreferenceRecord>& prefs);

void write_corpus(const std::string& path, const TaskSpec& spec, const std::vector<TokenSeq>& recs);
std::vector<TokenSeq> read_corpus(const std::string& path, int* vocab_size = nullptr);
void write_preferences(const std::string& path, const TaskSpec& spec, const std::vector<PreferenceRecord>& recs);
std::vector<PreferenceRecord> read_preferences(const std::string& path, int* vocab_size = nullptr);
void write_labeled(const std::string& path, const TaskSpec& spec, const std::vector<LabeledRecord>& recs);
std::vector<LabeledRecord> read_labeled(const std::string& path, int* vocab_size = nullptr);

// A fully enumerable sequence world: every length-`horizon` string over an
// `alphabet`-letter token set has a terminal score in [0,1], and every shorter
// prefix has an explicit next-token distribution. Small enough to evaluate the
// exact expected terminal score of any prefix two independent ways.
struct MicroWorld {
  int alphabet = 2;
  int horizon = 3;
  // Next-token distribution for every prefix of length < horizon (including
  // the empty prefix). Each row sums to 1 exactly: the last entry is written
  // as 1 minus the sum of the others.
  std::map<std::vector<int>, std::vector<double>> transitions;
  // Terminal score for every full length-`horizon` string.
  std::map<std::vector<int>, double> terminal;

  static MicroWorld random(std::uint64_t seed);
  static MicroWorld random(std::uint64_t seed, int alphabet, int horizon);
  void validate() const;
};

// Expected terminal score of `prefix`, by recursive expectation over the
// transition tree. Unknown prefixes are a domain error.
double true_prefix_reward(const MicroWorld& w, const std::vector<int>& prefix);

// Same quantity by flat enumeration of every completion (independent code
// path; no recursion).
double prefix_reward_flat(const MicroWorld& w, const std::vector<int>& prefix);

struct DecompReport {
  // max over checked prefixes of |r(y_{1:m}) - sum over length-n extensions of
  // P(extension | y_{1:m}) * r(y_{1:n})|
  double max_residual = 0.0;
  // max disagreement between the recursive and flat reward oracles
  double max_oracle_gap = 0.0;
  // max of |r(y_{1:n}) - r(y_{1:m})| - (1 - P(y_{m+1:n}|y_{1:m})); nonpositive
  // when the probability-mass change bound holds
  double max_bound_slack = -1.0;
  int prefixes_checked = 0;
};

// Checks that the reward of every length-m prefix equals the probability-
// weighted average of the rewards of its length-n extensions. Requires
// 1 <= m < n <= horizon.
DecompReport verify_decomposition(const MicroWorld& w, int m, int n);

// Worst case of the above over every valid (m, n) pair.
DecompReport verify_decomposition(const MicroWorld& w);

}  // namespace rmlab
