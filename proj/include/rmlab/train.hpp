#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rmlab/autodiff.hpp"
#include "rmlab/losses.hpp"
#include "rmlab/models.hpp"
#include "rmlab/synth.hpp"

// Training pipelines: generator SFT, preference reward modeling in its
// paired, pointwise, and joint variants, and best-of-8 DPO alignment.
//
// Determinism contract: the same (dataset, config, seed) yields the same
// parameter bytes. All batching, shuffling, dropout masks, and sampling
// derive from the run seed; nothing reads the clock except the wall-time
// field of the in-memory report, which is kept out of the metrics file.

namespace rmlab {

enum class TrainMode { bt, icrm, l1, disc, e2e };
TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);

enum class OptimizerKind { adam, sgd };
OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct TrainConfig {
  TrainMode mode = TrainMode::icrm;
  double alpha = 0.1;  // consistency mixing weight; mode bt forces 0
  double lr = 1e-3;    // flat rate, no schedule; sized for from-scratch toy
                       // models rather than fine-tuning, where far smaller
                       // scheduled rates are the norm
  int epochs = 4;
  int batch_size = 8;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double clip_norm = 5.0;   // global-norm gradient clip
  bool length_norm = false; // per-response pair-count normalization in the reg term

  // Auxiliary generation-head SFT on the chosen response. In paired modes the
  // flag adds the backbone-flowing regularizer; in e2e mode the head-only
  // term is always present and only the weight applies (0 removes it).
  bool aux_sft = false;
  double sft_weight = 0.001;

  double eval_decay = 0.0;  // trailing-token decay for the per-epoch eval metric

  double dpo_beta = 0.1;
  int dpo_samples = 8;
  double sample_temperature = 1.0;
  double sample_top_p = 1.0;
  int max_sample_len = 10;

  void validate() const;  // ConfigError on any field outside its range
  std::string echo() const;  // flat key=value rendering, stable field order
};

struct EpochRecord {
  int epoch = 0;         // 1-based
  double bt = 0.0;       // mean pairing loss (pointwise BCE / DPO loss in those modes)
  double reg = 0.0;      // mean consistency term; 0 where absent
  double sft = 0.0;      // mean auxiliary generation NLL; 0 where absent
  double total = 0.0;    // mean optimized objective
  double grad_norm = 0.0;   // mean pre-clip global gradient norm over steps
  long clamp_events = 0;    // log-floor hits
  double eval_metric = -1.0;  // pairwise accuracy on the eval set; -1 when none
};

struct RunReport {
  std::string pipeline;  // sft | train-rm | e2e | dpo
  std::string mode;      // train mode name, or "-" for sft/dpo
  std::uint64_t seed = 0;
  std::string optimizer_note;  // optimizer, rate, and the rate rationale
  std::string config_echo;
  std::vector<EpochRecord> epochs;
  bool diverged = false;      // non-finite loss encountered; training stopped
  int skipped_prompts = 0;    // dpo: prompts whose samples gave no usable pair
  int trained_pairs = 0;      // dpo: best-worst pairs entering training

  // Excluded from write_metrics so reruns produce identical bytes.
  double wall_ms = 0.0;

  // Line-delimited log, one record per epoch, plus header/config/summary
  // lines. Byte-deterministic for a fixed (dataset, config, seed).
  void write_metrics(const std::string& path) const;
};

// Scales all gradients in place so the global L2 norm is at most max_norm;
// returns the pre-clip norm.
double clip_gradients(ParameterSet& params, double max_norm);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParameterSet& params) = 0;  // consumes accumulated grads
};
std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);

// Fresh parameter leaves holding copies of the values (gradients reset).
ParameterSet clone_params(const ParameterSet& params);
GeneratorModel clone_generator(const GeneratorModel& g);

// Mean next-token NLL minimization on a corpus. Zero epochs leaves the
// parameters untouched.
RunReport sft_generator(GeneratorModel& g, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg);

// Paired preference training, modes bt / icrm / l1. One code path: bt runs
// the full consistency graph with alpha forced to 0, so bt and icrm(alpha=0)
// produce bit-identical trajectories. The generator is read-only throughout;
// its step log-probs enter the weights as constants.
RunReport train_reward_model(RewardModel& rm, const GeneratorModel& gen, const std::vector<PreferenceRecord>& data,
                             const TrainConfig& cfg, const std::vector<PreferenceRecord>* eval_set = nullptr);

// Pointwise discriminative training on labeled records, mode disc.
RunReport train_reward_model(RewardModel& rm, const std::vector<LabeledRecord>& data, const TrainConfig& cfg,
                             const std::vector<PreferenceRecord>* eval_set = nullptr);

// Joint mode e2e: one backbone feeding both heads. Step log-probs for the
// mutual weights come from the co-trained generation head, frozen per step;
// the generation head's SFT term is blocked at the backbone.
RunReport train_end_to_end(RewardModel& rm, const std::vector<PreferenceRecord>& data, const TrainConfig& cfg,
                           const std::vector<PreferenceRecord>* eval_set = nullptr);

// -log sigmoid(beta * [(log pi(win) - log ref(win)) - (log pi(lose) - log ref(lose))])
// as a graph over the policy parameters; reference log-probs are constants.
Var dpo_pair_loss(const GeneratorModel& policy, const GeneratorModel& reference, const TokenSeq& win,
                  const TokenSeq& lose, double beta, LossStats* stats = nullptr);

// Samples dpo_samples responses per prompt from the frozen base, scores them
// with the reward model's outcome reward, and trains a cloned policy on the
// (argmax, argmin) pairs (ties to the lowest sample index). Prompts whose
// best and worst samples coincide are skipped and counted.
GeneratorModel dpo_align(const GeneratorModel& base, const RewardModel& rm,
                         const std::vector<std::vector<int>>& prompts, const TrainConfig& cfg,
                         RunReport* report = nullptr);

}  // namespace rmlab
