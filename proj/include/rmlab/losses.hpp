#pragma once

#include <vector>

#include "rmlab/autodiff.hpp"
#include "rmlab/models.hpp"

// Loss family for preference reward modeling with intra-trajectory
// consistency regularization. All losses are built as autodiff graphs over
// scalar prefix logits; every log argument passes through a 1e-12 floor
// (clamp events are counted into LossStats so callers can report them).

namespace rmlab {

constexpr double kLogFloor = 1e-12;

struct LossStats {
  long clamp_events = 0;
};

struct PreferenceTriple {
  std::vector<int> prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
};

// Pairwise preference loss -log(sigmoid(chosen - rejected)) on two scalar
// outcome logits. Invariant under a common shift of both logits.
Var bt_loss(const Var& chosen_logit, const Var& rejected_logit, LossStats* stats = nullptr);

// Calibrated per-prefix rewards. Each side is squashed through a sigmoid
// after subtracting the mean prefix logit of the counterpart response; the
// mean is a calibration constant only and is excluded from the gradient, so
// d rhat_chosen / d rejected_logits is exactly zero (and vice versa).
struct CalibratedRewards {
  std::vector<Var> chosen;    // rhat(x, y^w_{1:k}), strictly in (0,1)
  std::vector<Var> rejected;  // rhat(x, y^l_{1:k})
  double chosen_mean = 0.0;   // recorded calibration constants
  double rejected_mean = 0.0;
};
CalibratedRewards calibrate(const std::vector<Var>& chosen_logits, const std::vector<Var>& rejected_logits);

// Mutual weights between adjacent prefixes k-1 and k of one response:
//   w(k -> k-1, s) = p_k * (s * rhat_k     + (1-s) * (1 - rhat_k))
//   w(k-1 -> k, s) = p_k * (s * rhat_{k-1} + (1-s) * (1 - rhat_{k-1}))
// where p_k = theta_g(y_k | x, y_{1:k-1}). The weights are gradient-frozen:
// generator probabilities enter as constants and the reward factors pass
// through stop_gradient. Index i corresponds to the pair (k-1, k) = (i+1, i+2).
struct MutualWeights {
  std::vector<Var> to_prev;  // w(k -> k-1, s)
  std::vector<Var> to_next;  // w(k-1 -> k, s)
  std::vector<double> to_prev_values() const;
  std::vector<double> to_next_values() const;
};
MutualWeights mutual_weights(const StepLogProbs& step_logprobs, const std::vector<Var>& rhat, int s);

// Consistency term for one preference pair: weighted cross-prefix BCE pulling
// adjacent prefix rewards of the chosen response toward 1 and of the rejected
// response toward 0, each pair weighted by its mutual weights. Responses of
// length 1 contribute zero. The value is the plain per-triple sum; batch
// averaging is the caller's job. length_norm divides each response's sum by
// its pair count (off by default, kept as an ablation switch).
Var icrm_reg_loss(const CalibratedRewards& cal, const MutualWeights& w_chosen, const MutualWeights& w_rejected,
                  bool length_norm = false, LossStats* stats = nullptr);

// (1 - alpha) * bt + alpha * reg. alpha outside [0,1] is a ConfigError.
Var total_loss(const Var& bt, const Var& reg, double alpha);

// Pointwise BCE on sigmoid(logit) against a binary quality label; the
// unpaired-data analogue of bt_loss (no calibration).
Var discriminative_bce(const Var& outcome_logit, int label, LossStats* stats = nullptr);

// Sum of |rhat_k - rhat_{k-1}| over adjacent prefixes of one response.
// Ablation that aligns neighboring rewards directly, with no mutual weights.
Var l1_consistency_loss(const std::vector<Var>& rhat);

// Mean next-token NLL through an auxiliary generation head; the SFT-style
// regularizer added to reward training with a small weight.
Var sft_reg_loss(const std::vector<Var>& gen_logprobs);

}  // namespace rmlab
