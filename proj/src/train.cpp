#include "rmlab/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <utility>

#include "rmlab/errors.hpp"
#include "rmlab/rng.hpp"
#include "rmlab/textio.hpp"
#include "rmlab/verify.hpp"

namespace rmlab {

namespace {

constexpr std::uint64_t kOrderSalt = 0x0DE4;
constexpr std::uint64_t kDropSalt = 0xD120;
constexpr std::uint64_t kDpoSalt = 0xD100;

std::vector<size_t> shuffled_indices(size_t n, std::uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

Var scalar_mean(const std::vector<Var>& xs) {
  return mul(constant(1.0 / static_cast<double>(xs.size())), add_all(xs));
}

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

std::string rate_note(const TrainConfig& cfg) {
  return optimizer_name(cfg.optimizer) + " lr=" + fmt_double(cfg.lr) +
         " flat, no schedule; sized for from-scratch toy models (fine-tuning "
         "pretrained models typically wants ~1e-5 with a schedule)";
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "bt") return TrainMode::bt;
  if (name == "icrm") return TrainMode::icrm;
  if (name == "l1") return TrainMode::l1;
  if (name == "disc") return TrainMode::disc;
  if (name == "e2e") return TrainMode::e2e;
  throw ConfigError("unknown train mode '" + name + "' (expected bt, icrm, l1, disc, or e2e)");
}

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::bt: return "bt";
    case TrainMode::icrm: return "icrm";
    case TrainMode::l1: return "l1";
    case TrainMode::disc: return "disc";
    case TrainMode::e2e: return "e2e";
  }
  throw ConfigError("invalid train mode value");
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + fmt_double(alpha));
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (sft_weight < 0.0) throw ConfigError("sft_weight must be nonnegative");
  if (!(eval_decay >= 0.0 && eval_decay <= 1.0)) throw ConfigError("eval_decay must lie in [0, 1]");
  if (dpo_beta < 0.0) throw ConfigError("dpo_beta must be nonnegative");
  if (dpo_samples < 2) throw ConfigError("dpo_samples must be at least 2");
  if (sample_temperature < 0.0) throw ConfigError("sample_temperature must be nonnegative");
  if (!(sample_top_p > 0.0 && sample_top_p <= 1.0)) throw ConfigError("sample_top_p must lie in (0, 1]");
  if (max_sample_len < 1) throw ConfigError("max_sample_len must be at least 1");
}

std::string TrainConfig::echo() const {
  std::string s;
  s += "mode=" + train_mode_name(mode);
  s += " alpha=" + fmt_double(alpha);
  s += " lr=" + fmt_double(lr);
  s += " epochs=" + std::to_string(epochs);
  s += " batch_size=" + std::to_string(batch_size);
  s += " seed=" + std::to_string(seed);
  s += " optimizer=" + optimizer_name(optimizer);
  s += " clip_norm=" + fmt_double(clip_norm);
  s += " length_norm=" + std::string(length_norm ? "1" : "0");
  s += " aux_sft=" + std::string(aux_sft ? "1" : "0");
  s += " sft_weight=" + fmt_double(sft_weight);
  s += " eval_decay=" + fmt_double(eval_decay);
  s += " dpo_beta=" + fmt_double(dpo_beta);
  s += " dpo_samples=" + std::to_string(dpo_samples);
  s += " sample_temperature=" + fmt_double(sample_temperature);
  s += " sample_top_p=" + fmt_double(sample_top_p);
  s += " max_sample_len=" + std::to_string(max_sample_len);
  return s;
}

void RunReport::write_metrics(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics file for writing: " + path);
  out << "rmlab-metrics v1\n";
  out << "run pipeline=" << pipeline << " mode=" << mode << " seed=" << seed << "\n";
  out << "config " << config_echo << "\n";
  out << "optimizer " << optimizer_note << "\n";
  for (const auto& e : epochs) {
    out << "epoch=" << e.epoch << " bt=" << fmt_double(e.bt) << " reg=" << fmt_double(e.reg)
        << " sft=" << fmt_double(e.sft) << " total=" << fmt_double(e.total)
        << " grad_norm=" << fmt_double(e.grad_norm) << " clamp_events=" << e.clamp_events
        << " eval=" << fmt_double(e.eval_metric) << "\n";
  }
  out << "summary diverged=" << (diverged ? 1 : 0) << " skipped_prompts=" << skipped_prompts
      << " trained_pairs=" << trained_pairs << "\n";
  out.flush();
  if (!out) throw IoError("failed writing metrics file: " + path);
}

double clip_gradients(ParameterSet& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  double norm = params.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto& [name, var] : params) {
      (void)name;
      for (std::int64_t i = 0; i < var->grad.size(); ++i) var->grad[i] *= scale;
    }
  }
  return norm;
}

namespace {

class SgdOptimizer : public Optimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}
  void step(ParameterSet& params) override {
    for (auto& [name, var] : params) {
      (void)name;
      for (std::int64_t i = 0; i < var->value.size(); ++i) var->value[i] -= lr_ * var->grad[i];
    }
  }

 private:
  double lr_;
};

class AdamOptimizer : public Optimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}
  void step(ParameterSet& params) override {
    ++t_;
    double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (auto& [name, var] : params) {
      auto it = state_.find(name);
      if (it == state_.end()) {
        it = state_.emplace(name, Moments{Array::zeros(var->value.shape()), Array::zeros(var->value.shape())}).first;
      }
      Array& m = it->second.m;
      Array& v = it->second.v;
      for (std::int64_t i = 0; i < var->value.size(); ++i) {
        double g = var->grad[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        var->value[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  struct Moments {
    Array m, v;
  };
  double lr_;
  std::map<std::string, Moments> state_;
  std::int64_t t_ = 0;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::adam) return std::make_unique<AdamOptimizer>(lr);
  return std::make_unique<SgdOptimizer>(lr);
}

ParameterSet clone_params(const ParameterSet& params) {
  ParameterSet out;
  for (const auto& [name, var] : params) out.add(name, parameter(var->value));
  return out;
}

GeneratorModel clone_generator(const GeneratorModel& g) {
  GeneratorModel out;
  out.vocab = g.vocab;
  out.dim = g.dim;
  out.params = clone_params(g.params);
  return out;
}

namespace {

// Shared scaffolding for one optimization run: epoch loop, deterministic
// shuffling, batching, divergence guard, and per-epoch bookkeeping. The
// step callback builds the batch graph and returns the component values.
struct BatchTerms {
  Var total;
  double bt = 0.0;
  double reg = 0.0;
  double sft = 0.0;
};

using BatchFn = std::function<BatchTerms(const std::vector<size_t>&, LossStats&)>;
using EvalFn = std::function<double()>;  // -1 when absent

void run_epochs(ParameterSet& params, size_t n_items, const TrainConfig& cfg, RunReport& report,
                const BatchFn& batch_fn, const EvalFn& eval_fn) {
  auto opt = make_optimizer(cfg.optimizer, cfg.lr);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<size_t> order = shuffled_indices(n_items, mix64(mix64(cfg.seed, kOrderSalt), epoch));
    LossStats stats;
    double sum_bt = 0.0, sum_reg = 0.0, sum_sft = 0.0, sum_total = 0.0, sum_norm = 0.0;
    size_t steps = 0;
    for (size_t start = 0; start < n_items; start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(n_items, start + static_cast<size_t>(cfg.batch_size));
      std::vector<size_t> batch(order.begin() + start, order.begin() + stop);
      BatchTerms terms = batch_fn(batch, stats);
      double value = terms.total->item();
      if (!std::isfinite(value)) {
        report.diverged = true;
        return;
      }
      double w = static_cast<double>(batch.size());
      sum_bt += terms.bt * w;
      sum_reg += terms.reg * w;
      sum_sft += terms.sft * w;
      sum_total += value * w;
      params.zero_grad();
      backward(terms.total);
      sum_norm += clip_gradients(params, cfg.clip_norm);
      opt->step(params);
      ++steps;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    double n = static_cast<double>(n_items);
    rec.bt = sum_bt / n;
    rec.reg = sum_reg / n;
    rec.sft = sum_sft / n;
    rec.total = sum_total / n;
    rec.grad_norm = steps > 0 ? sum_norm / static_cast<double>(steps) : 0.0;
    rec.clamp_events = stats.clamp_events;
    rec.eval_metric = eval_fn();
    report.epochs.push_back(rec);
  }
}

EvalFn make_eval(const RewardModel& rm, const std::vector<PreferenceRecord>* eval_set, const TrainConfig& cfg) {
  return [&rm, eval_set, cfg]() {
    if (eval_set == nullptr || eval_set->empty()) return -1.0;
    AggregationConfig agg;
    agg.kind = Aggregation::ema;
    agg.decay = cfg.eval_decay;
    return pairwise_accuracy(rm, *eval_set, agg);
  };
}

}  // namespace

RunReport sft_generator(GeneratorModel& g, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw InvalidInputError("sft needs a non-empty corpus");
  RunReport report;
  report.pipeline = "sft";
  report.mode = "-";
  report.seed = cfg.seed;
  report.optimizer_note = rate_note(cfg);
  report.config_echo = cfg.echo();
  double t0 = now_ms();

  auto batch_fn = [&](const std::vector<size_t>& batch, LossStats&) {
    std::vector<Var> items;
    items.reserve(batch.size());
    for (size_t idx : batch) items.push_back(sft_reg_loss(generator_logprob_nodes(g, corpus[idx])));
    BatchTerms terms;
    terms.total = scalar_mean(items);
    terms.sft = terms.total->item();
    return terms;
  };
  run_epochs(g.params, corpus.size(), cfg, report, batch_fn, [] { return -1.0; });

  report.wall_ms = now_ms() - t0;
  return report;
}

RunReport train_reward_model(RewardModel& rm, const GeneratorModel& gen, const std::vector<PreferenceRecord>& data,
                             const TrainConfig& cfg, const std::vector<PreferenceRecord>* eval_set) {
  cfg.validate();
  if (cfg.mode == TrainMode::disc) {
    throw ConfigError("mode disc trains on labeled records, not preference pairs");
  }
  if (cfg.mode == TrainMode::e2e) {
    throw ConfigError("mode e2e is served by train_end_to_end");
  }
  if (data.empty()) throw InvalidInputError("reward training needs a non-empty preference set");
  if (gen.vocab.size != rm.vocab.size) throw ConfigError("generator and reward model vocabularies differ");
  if (cfg.aux_sft && !rm.has_gen_head) {
    throw ConfigError("aux_sft needs a reward model built with a generation head");
  }

  RunReport report;
  report.pipeline = "train-rm";
  report.mode = train_mode_name(cfg.mode);
  report.seed = cfg.seed;
  report.optimizer_note = rate_note(cfg);
  report.config_echo = cfg.echo();
  double t0 = now_ms();

  // bt is the alpha = 0 boundary of the same graph, keeping the two modes'
  // trajectories bit-identical rather than merely close.
  double alpha_eff = cfg.mode == TrainMode::bt ? 0.0 : cfg.alpha;
  bool use_dropout = rm.dropout > 0.0;
  std::uint64_t ticket = 0;

  auto batch_fn = [&](const std::vector<size_t>& batch, LossStats& stats) {
    std::vector<Var> bts, regs, sfts;
    for (size_t idx : batch) {
      const PreferenceRecord& rec = data[idx];
      TokenSeq sc{rec.prompt, rec.chosen};
      TokenSeq sr{rec.prompt, rec.rejected};
      std::vector<Var> zc = prefix_reward_nodes(rm, sc, use_dropout, mix64(mix64(cfg.seed, kDropSalt), ticket++));
      std::vector<Var> zr = prefix_reward_nodes(rm, sr, use_dropout, mix64(mix64(cfg.seed, kDropSalt), ticket++));
      bts.push_back(bt_loss(zc.back(), zr.back(), &stats));
      CalibratedRewards cal = calibrate(zc, zr);
      if (cfg.mode == TrainMode::l1) {
        regs.push_back(add(l1_consistency_loss(cal.chosen), l1_consistency_loss(cal.rejected)));
      } else {
        StepLogProbs lpc = generator_step_logprobs(gen, sc);
        StepLogProbs lpr = generator_step_logprobs(gen, sr);
        MutualWeights wc = mutual_weights(lpc, cal.chosen, 1);
        MutualWeights wr = mutual_weights(lpr, cal.rejected, 0);
        regs.push_back(icrm_reg_loss(cal, wc, wr, cfg.length_norm, &stats));
      }
      if (cfg.aux_sft && cfg.sft_weight != 0.0) {
        sfts.push_back(sft_reg_loss(aux_gen_logprob_nodes(rm, sc)));
      }
    }
    BatchTerms terms;
    Var bt_mean = scalar_mean(bts);
    Var reg_mean = scalar_mean(regs);
    terms.total = total_loss(bt_mean, reg_mean, alpha_eff);
    terms.bt = bt_mean->item();
    terms.reg = reg_mean->item();
    if (!sfts.empty()) {
      Var sft_mean = scalar_mean(sfts);
      terms.sft = sft_mean->item();
      terms.total = add(terms.total, mul(constant(cfg.sft_weight), sft_mean));
    }
    return terms;
  };
  run_epochs(rm.params, data.size(), cfg, report, batch_fn, make_eval(rm, eval_set, cfg));

  report.wall_ms = now_ms() - t0;
  return report;
}

RunReport train_reward_model(RewardModel& rm, const std::vector<LabeledRecord>& data, const TrainConfig& cfg,
                             const std::vector<PreferenceRecord>* eval_set) {
  cfg.validate();
  if (cfg.mode != TrainMode::disc) {
    throw ConfigError("labeled records train mode disc only; mode " + train_mode_name(cfg.mode) +
                      " takes preference pairs");
  }
  if (data.empty()) throw InvalidInputError("discriminative training needs a non-empty labeled set");

  RunReport report;
  report.pipeline = "train-rm";
  report.mode = "disc";
  report.seed = cfg.seed;
  report.optimizer_note = rate_note(cfg);
  report.config_echo = cfg.echo();
  double t0 = now_ms();

  bool use_dropout = rm.dropout > 0.0;
  std::uint64_t ticket = 0;

  auto batch_fn = [&](const std::vector<size_t>& batch, LossStats& stats) {
    std::vector<Var> items;
    items.reserve(batch.size());
    for (size_t idx : batch) {
      const LabeledRecord& rec = data[idx];
      TokenSeq seq{rec.prompt, rec.response};
      std::vector<Var> z = prefix_reward_nodes(rm, seq, use_dropout, mix64(mix64(cfg.seed, kDropSalt), ticket++));
      items.push_back(discriminative_bce(z.back(), rec.label, &stats));
    }
    BatchTerms terms;
    terms.total = scalar_mean(items);
    terms.bt = terms.total->item();
    return terms;
  };
  run_epochs(rm.params, data.size(), cfg, report, batch_fn, make_eval(rm, eval_set, cfg));

  report.wall_ms = now_ms() - t0;
  return report;
}

RunReport train_end_to_end(RewardModel& rm, const std::vector<PreferenceRecord>& data, const TrainConfig& cfg,
                           const std::vector<PreferenceRecord>* eval_set) {
  cfg.validate();
  if (cfg.mode != TrainMode::e2e) throw ConfigError("train_end_to_end requires mode e2e");
  if (!rm.has_gen_head) throw ConfigError("mode e2e needs a reward model built with a generation head");
  if (cfg.aux_sft) {
    throw ConfigError("aux_sft applies to paired modes; e2e carries its generation-head term inherently");
  }
  if (data.empty()) throw InvalidInputError("reward training needs a non-empty preference set");

  RunReport report;
  report.pipeline = "e2e";
  report.mode = "e2e";
  report.seed = cfg.seed;
  report.optimizer_note = rate_note(cfg);
  report.config_echo = cfg.echo();
  double t0 = now_ms();

  bool use_dropout = rm.dropout > 0.0;
  std::uint64_t ticket = 0;

  auto batch_fn = [&](const std::vector<size_t>& batch, LossStats& stats) {
    std::vector<Var> bts, regs, sfts;
    for (size_t idx : batch) {
      const PreferenceRecord& rec = data[idx];
      TokenSeq sc{rec.prompt, rec.chosen};
      TokenSeq sr{rec.prompt, rec.rejected};
      SharedForward fc = shared_backbone_forward(rm, sc, use_dropout, mix64(mix64(cfg.seed, kDropSalt), ticket++));
      SharedForward fr = shared_backbone_forward(rm, sr, use_dropout, mix64(mix64(cfg.seed, kDropSalt), ticket++));
      bts.push_back(bt_loss(fc.prefix_rewards.back(), fr.prefix_rewards.back(), &stats));
      CalibratedRewards cal = calibrate(fc.prefix_rewards, fr.prefix_rewards);
      // Weights read the co-trained head's current values, frozen per step.
      StepLogProbs lpc, lpr;
      for (const Var& v : fc.step_logprobs) lpc.push_back(v->item());
      for (const Var& v : fr.step_logprobs) lpr.push_back(v->item());
      MutualWeights wc = mutual_weights(lpc, cal.chosen, 1);
      MutualWeights wr = mutual_weights(lpr, cal.rejected, 0);
      regs.push_back(icrm_reg_loss(cal, wc, wr, cfg.length_norm, &stats));
      // Head-only SFT stream: the backbone is stop-gradient'd on this path.
      sfts.push_back(sft_reg_loss(fc.step_logprobs));
    }
    BatchTerms terms;
    Var bt_mean = scalar_mean(bts);
    Var reg_mean = scalar_mean(regs);
    Var sft_mean = scalar_mean(sfts);
    terms.total = total_loss(bt_mean, reg_mean, cfg.alpha);
    if (cfg.sft_weight != 0.0) terms.total = add(terms.total, mul(constant(cfg.sft_weight), sft_mean));
    terms.bt = bt_mean->item();
    terms.reg = reg_mean->item();
    terms.sft = sft_mean->item();
    return terms;
  };
  run_epochs(rm.params, data.size(), cfg, report, batch_fn, make_eval(rm, eval_set, cfg));

  report.wall_ms = now_ms() - t0;
  return report;
}

Var dpo_pair_loss(const GeneratorModel& policy, const GeneratorModel& reference, const TokenSeq& win,
                  const TokenSeq& lose, double beta, LossStats* stats) {
  Var pol_w = add_all(generator_logprob_nodes(policy, win));
  Var pol_l = add_all(generator_logprob_nodes(policy, lose));
  double ref_w = 0.0, ref_l = 0.0;
  for (double lp : generator_step_logprobs(reference, win)) ref_w += lp;
  for (double lp : generator_step_logprobs(reference, lose)) ref_l += lp;
  Var scale = constant(beta);
  Var margin_w = mul(scale, sub(pol_w, constant(ref_w)));
  Var margin_l = mul(scale, sub(pol_l, constant(ref_l)));
  return bt_loss(margin_w, margin_l, stats);
}

GeneratorModel dpo_align(const GeneratorModel& base, const RewardModel& rm,
                         const std::vector<std::vector<int>>& prompts, const TrainConfig& cfg, RunReport* report) {
  cfg.validate();
  if (prompts.empty()) throw InvalidInputError("dpo needs a non-empty prompt set");
  if (base.vocab.size != rm.vocab.size) throw ConfigError("policy and reward model vocabularies differ");

  RunReport local;
  RunReport& rep = report != nullptr ? *report : local;
  rep = RunReport{};
  rep.pipeline = "dpo";
  rep.mode = "-";
  rep.seed = cfg.seed;
  rep.optimizer_note = rate_note(cfg);
  rep.config_echo = cfg.echo();
  double t0 = now_ms();

  // Sampling phase, all from the frozen base. Best and worst by outcome
  // reward, ties to the lowest sample index; a prompt whose best and worst
  // responses coincide (in particular, all samples identical) is skipped.
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (size_t pi = 0; pi < prompts.size(); ++pi) {
    std::vector<TokenSeq> cands;
    std::vector<double> scores;
    cands.reserve(static_cast<size_t>(cfg.dpo_samples));
    for (int j = 0; j < cfg.dpo_samples; ++j) {
      std::uint64_t s = mix64(mix64(cfg.seed, kDpoSalt), pi * 1000003ull + static_cast<std::uint64_t>(j));
      TokenSeq seq = sample_response(base, prompts[pi], cfg.sample_temperature, cfg.sample_top_p,
                                     cfg.max_sample_len, s);
      cands.push_back(seq);
      scores.push_back(outcome_reward(rm, seq));
    }
    size_t best = 0, worst = 0;
    for (size_t j = 1; j < scores.size(); ++j) {
      if (scores[j] > scores[best]) best = j;
      if (scores[j] < scores[worst]) worst = j;
    }
    if (cands[best].response == cands[worst].response) {
      ++rep.skipped_prompts;
      continue;
    }
    pairs.emplace_back(cands[best], cands[worst]);
  }
  rep.trained_pairs = static_cast<int>(pairs.size());

  GeneratorModel policy = clone_generator(base);
  if (!pairs.empty()) {
    auto batch_fn = [&](const std::vector<size_t>& batch, LossStats& stats) {
      std::vector<Var> items;
      items.reserve(batch.size());
      for (size_t idx : batch) {
        items.push_back(dpo_pair_loss(policy, base, pairs[idx].first, pairs[idx].second, cfg.dpo_beta, &stats));
      }
      BatchTerms terms;
      terms.total = scalar_mean(items);
      terms.bt = terms.total->item();
      return terms;
    };
    run_epochs(policy.params, pairs.size(), cfg, rep, batch_fn, [] { return -1.0; });
  }

  rep.wall_ms = now_ms() - t0;
  return policy;
}

}  // namespace rmlab
