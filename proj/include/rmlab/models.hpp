#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmlab/autodiff.hpp"

// Tiny autoregressive models over a toy vocabulary. Both the generator and
// the reward model share a single-layer gated recurrent backbone operating on
// row vectors [1 x d]. Sequences are processed as BOS + prompt + response;
// the recurrence makes every per-position output causal by construction.
//
// Position conventions for a response y_1..y_R after a prompt of length P:
//   - the next-token distribution for y_k is read from the state after
//     consuming BOS, the prompt, and y_1..y_{k-1};
//   - the prefix reward for y_{1:k} is read from the state after consuming
//     y_k (so it sees exactly the prompt and the first k response tokens).
// EOS is an ordinary scored token; trailing PAD is ignored.

namespace rmlab {

struct Vocab {
  int size = 16;
  int pad = 0;
  int bos = 1;
  int eos = 2;

  void validate() const;  // reserved ids distinct and inside [0, size), size >= 3
  bool reserved(int id) const { return id == pad || id == bos || id == eos; }
  std::string token_name(int id) const;
};

struct TokenSeq {
  std::vector<int> prompt;
  std::vector<int> response;
};

// Response with trailing PAD removed. Throws TokenError on ids outside the
// vocabulary, PAD interior to the response, PAD in the prompt, or an empty
// effective response.
std::vector<int> effective_response(const Vocab& v, const TokenSeq& seq);

using StepLogProbs = std::vector<double>;
using PrefixRewardVector = std::vector<double>;

class GeneratorModel {
 public:
  Vocab vocab;
  int dim = 16;
  ParameterSet params;

  static GeneratorModel init(const Vocab& vocab, int dim, std::uint64_t seed);
};

class RewardModel {
 public:
  Vocab vocab;
  int dim = 16;
  double dropout = 0.1;       // reward-head input dropout, active in train mode only
  bool has_gen_head = false;  // auxiliary generation head sharing the backbone
  ParameterSet params;

  static RewardModel init(const Vocab& vocab, int dim, double dropout, bool gen_head, std::uint64_t seed);
};

// log theta_g(y_k | x, y_{1:k-1}) for k = 1..R, as graph nodes (rank 0 each).
std::vector<Var> generator_logprob_nodes(const GeneratorModel& g, const TokenSeq& seq);

// Same values detached from the graph.
StepLogProbs generator_step_logprobs(const GeneratorModel& g, const TokenSeq& seq);

// Full next-token log distribution rows [1 x V], one per response position.
std::vector<Array> generator_step_distributions(const GeneratorModel& g, const TokenSeq& seq);

// Ancestral sampling with temperature and nucleus truncation. temperature 0
// selects greedy argmax decoding (ties to the lowest id). PAD and BOS are
// never emitted; the response ends at EOS or max_len, whichever comes first.
TokenSeq sample_response(const GeneratorModel& g, const std::vector<int>& prompt, double temperature, double top_p,
                         int max_len, std::uint64_t seed);

// Scalar reward logits theta_r(x, y_{1:k}) for k = 1..R as graph nodes.
// Dropout on the head input is applied only when train_mode is set, with a
// mask derived deterministically from seed and the position.
std::vector<Var> prefix_reward_nodes(const RewardModel& r, const TokenSeq& seq, bool train_mode = false,
                                     std::uint64_t seed = 0);

PrefixRewardVector prefix_rewards(const RewardModel& r, const TokenSeq& seq, bool train_mode = false,
                                  std::uint64_t seed = 0);

double outcome_reward(const RewardModel& r, const TokenSeq& seq);

// One backbone pass feeding both heads. The generation-head path applies
// stop_gradient to the hidden states, so its loss trains the head alone and
// sends exactly zero gradient into the backbone. Requires has_gen_head.
struct SharedForward {
  std::vector<Var> step_logprobs;    // generation head, detached backbone
  std::vector<Var> prefix_rewards;   // reward head, gradient flows
};
SharedForward shared_backbone_forward(const RewardModel& r, const TokenSeq& seq, bool train_mode = false,
                                      std::uint64_t seed = 0);

// Generation-head log-probs with gradient flowing into the backbone as well.
// This is the regularizer path: the auxiliary SFT loss shapes the shared
// hidden states instead of being blocked at the head.
std::vector<Var> aux_gen_logprob_nodes(const RewardModel& r, const TokenSeq& seq);

// Versioned text checkpoints. Values are written as hex floats, so a
// save/load round trip is bit-exact and files are byte-deterministic.
void save_checkpoint(const GeneratorModel& g, const std::string& path);
void save_checkpoint(const RewardModel& r, const std::string& path);
std::string checkpoint_kind(const std::string& path);  // "generator" or "reward"
GeneratorModel load_generator(const std::string& path);
RewardModel load_reward_model(const std::string& path);

// Byte-deterministic rendering of all parameters; used for bit-identity
// assertions between training trajectories.
std::string params_fingerprint(const ParameterSet& params);

}  // namespace rmlab
