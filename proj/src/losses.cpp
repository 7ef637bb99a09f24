#include "rmlab/losses.hpp"

#include <cmath>

#include "rmlab/errors.hpp"

namespace rmlab {

namespace {

Var safe_log(const Var& x, LossStats* stats) {
  return log(clamp_min(x, kLogFloor, stats ? &stats->clamp_events : nullptr));
}

// Frozen confidence factor: s * rhat or (1-s) * (1 - rhat), detached.
Var frozen_conf(const Var& rhat, int s) {
  return s == 1 ? stop_gradient(rhat) : stop_gradient(sub(constant(1.0), rhat));
}

// One response's consistency sum: for every adjacent pair (k-1, k),
//   - w(k -> k-1) * log target(rhat_{k-1}) - w(k-1 -> k) * log target(rhat_k)
// where target is rhat for the chosen side (s=1) and 1-rhat for the rejected
// side (s=0).
Var response_consistency(const std::vector<Var>& rhat, const MutualWeights& w, int s, bool length_norm,
                         LossStats* stats) {
  const size_t n = rhat.size();
  if (w.to_prev.size() != (n < 2 ? 0 : n - 1) || w.to_next.size() != w.to_prev.size())
    throw InvalidInputError("mutual weights misaligned with reward vector");
  if (n < 2) return constant(0.0);

  std::vector<Var> terms;
  terms.reserve(2 * (n - 1));
  for (size_t i = 0; i + 1 < n; ++i) {
    Var log_prev = s == 1 ? safe_log(rhat[i], stats) : safe_log(sub(constant(1.0), rhat[i]), stats);
    Var log_next = s == 1 ? safe_log(rhat[i + 1], stats) : safe_log(sub(constant(1.0), rhat[i + 1]), stats);
    terms.push_back(neg(mul(w.to_prev[i], log_prev)));
    terms.push_back(neg(mul(w.to_next[i], log_next)));
  }
  Var total = add_all(terms);
  if (length_norm) total = mul(constant(1.0 / static_cast<double>(n - 1)), total);
  return total;
}

}  // namespace

Var bt_loss(const Var& chosen_logit, const Var& rejected_logit, LossStats* stats) {
  if (chosen_logit->value.size() != 1 || rejected_logit->value.size() != 1)
    throw InvalidInputError("bt_loss expects scalar logits");
  return neg(safe_log(sigmoid(sub(chosen_logit, rejected_logit)), stats));
}

CalibratedRewards calibrate(const std::vector<Var>& chosen_logits, const std::vector<Var>& rejected_logits) {
  if (chosen_logits.empty() || rejected_logits.empty())
    throw InvalidInputError("calibrate: prefix logit vectors must be non-empty");

  auto mean_of = [](const std::vector<Var>& xs) {
    return mul(constant(1.0 / static_cast<double>(xs.size())), add_all(xs));
  };
  Var chosen_mean = mean_of(chosen_logits);
  Var rejected_mean = mean_of(rejected_logits);
  Var frozen_cm = stop_gradient(chosen_mean);
  Var frozen_rm = stop_gradient(rejected_mean);

  CalibratedRewards out;
  out.chosen_mean = chosen_mean->item();
  out.rejected_mean = rejected_mean->item();
  out.chosen.reserve(chosen_logits.size());
  out.rejected.reserve(rejected_logits.size());
  for (const auto& z : chosen_logits) out.chosen.push_back(sigmoid(sub(z, frozen_rm)));
  for (const auto& z : rejected_logits) out.rejected.push_back(sigmoid(sub(z, frozen_cm)));
  return out;
}

std::vector<double> MutualWeights::to_prev_values() const {
  std::vector<double> out;
  out.reserve(to_prev.size());
  for (const auto& w : to_prev) out.push_back(w->item());
  return out;
}

std::vector<double> MutualWeights::to_next_values() const {
  std::vector<double> out;
  out.reserve(to_next.size());
  for (const auto& w : to_next) out.push_back(w->item());
  return out;
}

MutualWeights mutual_weights(const StepLogProbs& step_logprobs, const std::vector<Var>& rhat, int s) {
  if (s != 0 && s != 1) throw InvalidInputError("mutual_weights: s must be 0 or 1");
  if (step_logprobs.size() != rhat.size())
    throw InvalidInputError("mutual_weights: step log-probs and rewards misaligned");

  MutualWeights out;
  if (rhat.size() < 2) return out;
  out.to_prev.reserve(rhat.size() - 1);
  out.to_next.reserve(rhat.size() - 1);
  for (size_t k = 1; k < rhat.size(); ++k) {
    Var p_k = constant(std::exp(step_logprobs[k]));
    out.to_prev.push_back(mul(p_k, frozen_conf(rhat[k], s)));
    out.to_next.push_back(mul(p_k, frozen_conf(rhat[k - 1], s)));
  }
  return out;
}

Var icrm_reg_loss(const CalibratedRewards& cal, const MutualWeights& w_chosen, const MutualWeights& w_rejected,
                  bool length_norm, LossStats* stats) {
  Var chosen_part = response_consistency(cal.chosen, w_chosen, 1, length_norm, stats);
  Var rejected_part = response_consistency(cal.rejected, w_rejected, 0, length_norm, stats);
  return add(chosen_part, rejected_part);
}

Var total_loss(const Var& bt, const Var& reg, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0, 1]");
  return add(mul(constant(1.0 - alpha), bt), mul(constant(alpha), reg));
}

Var discriminative_bce(const Var& outcome_logit, int label, LossStats* stats) {
  if (label != 0 && label != 1) throw InvalidInputError("discriminative_bce: label must be 0 or 1");
  Var p = sigmoid(outcome_logit);
  Var target = label == 1 ? p : sub(constant(1.0), p);
  return neg(safe_log(target, stats));
}

Var l1_consistency_loss(const std::vector<Var>& rhat) {
  if (rhat.empty()) throw InvalidInputError("l1_consistency_loss: empty reward vector");
  if (rhat.size() < 2) return constant(0.0);
  std::vector<Var> terms;
  terms.reserve(rhat.size() - 1);
  for (size_t i = 0; i + 1 < rhat.size(); ++i) {
    Var diff = sub(rhat[i + 1], rhat[i]);
    // |diff| as diff * sign(diff); the sign enters as a constant, which is
    // the correct subgradient everywhere except the tie point (grad 0 there)
    double sv = diff->item();
    double sign = sv > 0.0 ? 1.0 : (sv < 0.0 ? -1.0 : 0.0);
    terms.push_back(mul(diff, constant(sign)));
  }
  return add_all(terms);
}

Var sft_reg_loss(const std::vector<Var>& gen_logprobs) {
  if (gen_logprobs.empty()) throw InvalidInputError("sft_reg_loss: empty log-prob vector");
  return neg(mul(constant(1.0 / static_cast<double>(gen_logprobs.size())), add_all(gen_logprobs)));
}

}  // namespace rmlab
