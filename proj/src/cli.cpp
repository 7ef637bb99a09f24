#include "rmlab/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "rmlab/config.hpp"
#include "rmlab/errors.hpp"
#include "rmlab/losses.hpp"
#include "rmlab/models.hpp"
#include "rmlab/rng.hpp"
#include "rmlab/synth.hpp"
#include "rmlab/textio.hpp"
#include "rmlab/train.hpp"
#include "rmlab/verify.hpp"

namespace rmlab::cli {
namespace {

constexpr std::uint64_t kBonPromptSalt = 0xB0A0;
constexpr std::uint64_t kBonSampleSalt = 0xB0A1;
constexpr std::uint64_t kDpoPromptSalt = 0xD9A0;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

// One run's filesystem footprint. Inputs are checksummed when noted, outputs
// when the manifest is written; the manifest names both so a run directory is
// self-describing.
struct RunContext {
  LabConfig cfg;
  std::string command;
  std::string dir;  // empty when the subcommand was given no output directory
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, checksum)
  std::vector<std::string> outputs;                         // names relative to dir

  std::string path(const std::string& name) const { return dir + "/" + name; }

  void note_input(const std::string& p) { inputs.emplace_back(p, hex64(fnv1a64(slurp(p)))); }

  void note_output(const std::string& name) { outputs.push_back(name); }

  void write_output(const std::string& name, const std::string& content) {
    write_text(path(name), content);
    note_output(name);
  }

  void finish() {
    if (dir.empty()) return;
    std::string m = "rmlab-manifest v1\n";
    m += "command " + command + "\n";
    m += "seed " + std::to_string(cfg.train.seed) + "\n";
    for (const auto& [p, sum] : inputs) m += "input " + p + " fnv1a64=" + sum + "\n";
    for (const std::string& name : outputs) {
      m += "output " + name + " fnv1a64=" + hex64(fnv1a64(slurp(path(name)))) + "\n";
    }
    write_text(path("manifest.txt"), m);
  }
};

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
};

RunContext make_context(const std::string& command, const CommonOpts& o) {
  RunContext ctx;
  ctx.command = command;
  if (!o.config_path.empty()) {
    try {
      load_config_file(ctx.cfg, o.config_path);
    } catch (const IoError& e) {
      // an unreadable config is a usage problem, not a runtime one
      throw ConfigError(e.what());
    }
  }
  for (const std::string& s : o.sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_config_kv(ctx.cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  ctx.cfg.validate();
  if (!o.out_dir.empty()) {
    std::filesystem::create_directories(o.out_dir);
    ctx.dir = o.out_dir;
    if (!o.config_path.empty()) ctx.note_input(o.config_path);
    ctx.write_output("config_echo.txt", config_echo(ctx.cfg));
  }
  return ctx;
}

void check_vocab(const std::string& what, int file_vocab, int task_vocab) {
  if (file_vocab != task_vocab) {
    throw ConfigError(what + " uses vocab size " + std::to_string(file_vocab) + " but task.vocab_size is " +
                      std::to_string(task_vocab));
  }
}

std::vector<PreferenceRecord> read_prefs_checked(RunContext& ctx, const std::string& path, const std::string& what) {
  int vs = 0;
  std::vector<PreferenceRecord> data = read_preferences(path, &vs);
  check_vocab(what, vs, ctx.cfg.task.vocab_size);
  ctx.note_input(path);
  return data;
}

int cmd_gen_data(RunContext& ctx) {
  const TaskSpec& task = ctx.cfg.task;
  std::uint64_t seed = ctx.cfg.train.seed;
  std::vector<TokenSeq> corpus = build_corpus(task, ctx.cfg.data_count, seed);
  std::vector<PreferenceRecord> prefs = build_preferences(task, ctx.cfg.data_count, seed);
  std::vector<PreferenceRecord> evals = build_preferences(task, ctx.cfg.data_eval_count, seed + 1);
  std::vector<LabeledRecord> labeled = to_labeled(prefs);

  write_corpus(ctx.path("corpus.txt"), task, corpus);
  ctx.note_output("corpus.txt");
  write_preferences(ctx.path("prefs_train.txt"), task, prefs);
  ctx.note_output("prefs_train.txt");
  write_preferences(ctx.path("prefs_eval.txt"), task, evals);
  ctx.note_output("prefs_eval.txt");
  write_labeled(ctx.path("labeled_train.txt"), task, labeled);
  ctx.note_output("labeled_train.txt");

  double flipped = 0.0, len_c = 0.0, len_r = 0.0;
  for (const PreferenceRecord& r : prefs) {
    flipped += r.flipped ? 1.0 : 0.0;
    len_c += static_cast<double>(r.chosen.size());
    len_r += static_cast<double>(r.rejected.size());
  }
  double n = static_cast<double>(prefs.size());
  std::cout << "gen-data: " << corpus.size() << " corpus responses, " << prefs.size() << " train pairs, "
            << evals.size() << " eval pairs, " << labeled.size() << " labeled records\n";
  std::cout << "train pairs: mean chosen len " << len_c / n << ", mean rejected len " << len_r / n
            << ", flipped fraction " << flipped / n << "\n";
  ctx.finish();
  return 0;
}

int report_outcome(const RunContext& ctx, const RunReport& rep) {
  if (rep.diverged) {
    std::cerr << ctx.command << ": training diverged (non-finite loss); stopped early\n";
    return 2;
  }
  if (rep.epochs.empty()) {
    std::cout << ctx.command << ": zero epochs requested; parameters untouched\n";
    return 0;
  }
  const EpochRecord& last = rep.epochs.back();
  std::cout << ctx.command << ": " << rep.epochs.size() << " epochs, final total " << last.total;
  if (last.eval_metric >= 0.0) std::cout << ", eval accuracy " << last.eval_metric;
  std::cout << "\n";
  return 0;
}

int cmd_sft(RunContext& ctx, const std::string& corpus_path) {
  int vs = 0;
  std::vector<TokenSeq> corpus = read_corpus(corpus_path, &vs);
  check_vocab("corpus " + corpus_path, vs, ctx.cfg.task.vocab_size);
  ctx.note_input(corpus_path);

  GeneratorModel g = GeneratorModel::init(ctx.cfg.task.vocab(), ctx.cfg.model_dim, ctx.cfg.train.seed);
  RunReport rep = sft_generator(g, corpus, ctx.cfg.train);

  save_checkpoint(g, ctx.path("generator.ckpt"));
  ctx.note_output("generator.ckpt");
  rep.write_metrics(ctx.path("metrics.txt"));
  ctx.note_output("metrics.txt");
  ctx.finish();
  return report_outcome(ctx, rep);
}

int cmd_train_rm(RunContext& ctx, const std::string& prefs_path, const std::string& labeled_path,
                 const std::string& gen_path, const std::string& eval_path) {
  TrainMode mode = ctx.cfg.train.mode;
  Vocab v = ctx.cfg.task.vocab();
  bool gen_head = ctx.cfg.model_gen_head || ctx.cfg.train.aux_sft || mode == TrainMode::e2e;
  RewardModel rm = RewardModel::init(v, ctx.cfg.model_dim, ctx.cfg.model_dropout, gen_head, ctx.cfg.train.seed);

  std::vector<PreferenceRecord> eval_data;
  const std::vector<PreferenceRecord>* eval_ptr = nullptr;
  if (!eval_path.empty()) {
    eval_data = read_prefs_checked(ctx, eval_path, "eval set " + eval_path);
    eval_ptr = &eval_data;
  }

  RunReport rep;
  if (mode == TrainMode::disc) {
    if (labeled_path.empty()) throw ConfigError("mode disc trains on labeled records; pass --labeled");
    int vs = 0;
    std::vector<LabeledRecord> data = read_labeled(labeled_path, &vs);
    check_vocab("labeled set " + labeled_path, vs, ctx.cfg.task.vocab_size);
    ctx.note_input(labeled_path);
    rep = train_reward_model(rm, data, ctx.cfg.train, eval_ptr);
  } else {
    if (prefs_path.empty()) {
      throw ConfigError("mode " + train_mode_name(mode) + " trains on preference pairs; pass --prefs");
    }
    std::vector<PreferenceRecord> data = read_prefs_checked(ctx, prefs_path, "preference set " + prefs_path);
    if (mode == TrainMode::e2e) {
      rep = train_end_to_end(rm, data, ctx.cfg.train, eval_ptr);
    } else {
      GeneratorModel gen;
      if (!gen_path.empty()) {
        gen = load_generator(gen_path);
        check_vocab("generator " + gen_path, gen.vocab.size, ctx.cfg.task.vocab_size);
        ctx.note_input(gen_path);
      } else if (mode == TrainMode::l1) {
        // the absolute-difference ablation has no mutual weights, so any
        // generator satisfies the interface without influencing the result
        gen = GeneratorModel::init(v, ctx.cfg.model_dim, ctx.cfg.train.seed);
      } else {
        throw ConfigError("mode " + train_mode_name(mode) + " needs --gen for the mutual weights");
      }
      rep = train_reward_model(rm, gen, data, ctx.cfg.train, eval_ptr);
    }
  }

  save_checkpoint(rm, ctx.path("reward.ckpt"));
  ctx.note_output("reward.ckpt");
  rep.write_metrics(ctx.path("metrics.txt"));
  ctx.note_output("metrics.txt");
  ctx.finish();
  return report_outcome(ctx, rep);
}

int cmd_eval_rm(RunContext& ctx, const std::string& rm_path, const std::string& prefs_path) {
  RewardModel rm = load_reward_model(rm_path);
  check_vocab("reward model " + rm_path, rm.vocab.size, ctx.cfg.task.vocab_size);
  ctx.note_input(rm_path);
  std::vector<PreferenceRecord> data = read_prefs_checked(ctx, prefs_path, "preference set " + prefs_path);

  double acc = pairwise_accuracy(rm, data, ctx.cfg.eval_agg);

  std::string body = "rmlab-eval v1\n";
  body += "aggregation " + aggregation_name(ctx.cfg.eval_agg.kind) + " decay=" + fmt_double(ctx.cfg.eval_agg.decay) +
          " normalized=" + (ctx.cfg.eval_agg.normalized ? std::string("1") : std::string("0")) + "\n";
  body += "pairs " + std::to_string(data.size()) + "\n";
  body += "pairwise_accuracy " + fmt_double(acc) + "\n";
  ctx.write_output("eval.txt", body);
  ctx.finish();
  std::cout << "eval-rm: pairwise accuracy " << acc << " over " << data.size() << " pairs\n";
  return 0;
}

int cmd_bon(RunContext& ctx, const std::string& rm_path, const std::string& gen_path) {
  const TaskSpec& task = ctx.cfg.task;
  RewardModel rm = load_reward_model(rm_path);
  check_vocab("reward model " + rm_path, rm.vocab.size, task.vocab_size);
  ctx.note_input(rm_path);
  GeneratorModel gen = load_generator(gen_path);
  check_vocab("generator " + gen_path, gen.vocab.size, task.vocab_size);
  ctx.note_input(gen_path);

  std::uint64_t seed = ctx.cfg.train.seed;
  Rng prompt_rng(mix64(seed, kBonPromptSalt));
  SeqScorer gold = [&task](const TokenSeq& s) { return gold_score(task, s.response); };

  std::string body = "rmlab-bon v1\n";
  double sel_gold = 0.0, best_gold = 0.0, cand_gold = 0.0, correct = 0.0, sel_len = 0.0, cand_len = 0.0;
  int n = ctx.cfg.bon_prompts;
  for (int i = 0; i < n; ++i) {
    std::vector<int> prompt = sample_prompt(task, prompt_rng);
    std::vector<std::vector<int>> cands;
    double mean_gold = 0.0, mean_len = 0.0;
    for (int j = 0; j < ctx.cfg.bon_candidates; ++j) {
      std::uint64_t s = mix64(mix64(seed, kBonSampleSalt), static_cast<std::uint64_t>(i) * 1000003u + j);
      TokenSeq cand = sample_response(gen, prompt, ctx.cfg.train.sample_temperature, ctx.cfg.train.sample_top_p,
                                      ctx.cfg.train.max_sample_len, s);
      mean_gold += gold_score(task, cand.response);
      mean_len += static_cast<double>(cand.response.size());
      cands.push_back(std::move(cand.response));
    }
    mean_gold /= ctx.cfg.bon_candidates;
    mean_len /= ctx.cfg.bon_candidates;

    BonResult r = bon_select(rm, prompt, cands, ctx.cfg.eval_agg, &gold);
    double g_sel = gold_score(task, cands[static_cast<size_t>(r.selected)]);
    double g_best = gold_score(task, cands[static_cast<size_t>(r.gold_best)]);
    sel_gold += g_sel;
    best_gold += g_best;
    cand_gold += mean_gold;
    correct += r.gold_correct ? 1.0 : 0.0;
    sel_len += static_cast<double>(cands[static_cast<size_t>(r.selected)].size());
    cand_len += mean_len;
    body += "prompt=" + fmt_ids(prompt) + " selected=" + std::to_string(r.selected) +
            " gold=" + fmt_double(g_sel) + " gold_best=" + fmt_double(g_best) +
            " correct=" + (r.gold_correct ? std::string("1") : std::string("0")) +
            " len=" + std::to_string(cands[static_cast<size_t>(r.selected)].size()) + "\n";
  }
  double dn = static_cast<double>(n);
  body += "summary prompts=" + std::to_string(n) + " candidates=" + std::to_string(ctx.cfg.bon_candidates) +
          " selected_gold=" + fmt_double(sel_gold / dn) + " best_gold=" + fmt_double(best_gold / dn) +
          " mean_candidate_gold=" + fmt_double(cand_gold / dn) + " correct_fraction=" + fmt_double(correct / dn) +
          " selected_len=" + fmt_double(sel_len / dn) + " candidate_len=" + fmt_double(cand_len / dn) + "\n";
  ctx.write_output("bon.txt", body);
  ctx.finish();
  std::cout << "bon: " << n << " prompts x " << ctx.cfg.bon_candidates << " candidates\n";
  std::cout << "selected gold " << sel_gold / dn << " (candidate mean " << cand_gold / dn << ", oracle best "
            << best_gold / dn << "), correct fraction " << correct / dn << "\n";
  std::cout << "selected length " << sel_len / dn << " (candidate mean " << cand_len / dn << ")\n";
  return 0;
}

int cmd_dpo(RunContext& ctx, const std::string& rm_path, const std::string& gen_path) {
  const TaskSpec& task = ctx.cfg.task;
  RewardModel rm = load_reward_model(rm_path);
  check_vocab("reward model " + rm_path, rm.vocab.size, task.vocab_size);
  ctx.note_input(rm_path);
  GeneratorModel base = load_generator(gen_path);
  check_vocab("generator " + gen_path, base.vocab.size, task.vocab_size);
  ctx.note_input(gen_path);

  std::uint64_t seed = ctx.cfg.train.seed;
  Rng prompt_rng(mix64(seed, kDpoPromptSalt));
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < ctx.cfg.dpo_prompts; ++i) prompts.push_back(sample_prompt(task, prompt_rng));

  RunReport rep;
  GeneratorModel policy = dpo_align(base, rm, prompts, ctx.cfg.train, &rep);

  save_checkpoint(policy, ctx.path("policy.ckpt"));
  ctx.note_output("policy.ckpt");
  rep.write_metrics(ctx.path("metrics.txt"));
  ctx.note_output("metrics.txt");

  // held-out greedy comparison under the gold scorer
  Rng held_rng(mix64(seed + 1, kDpoPromptSalt));
  std::string body = "rmlab-dpo v1\n";
  body += "trained_pairs " + std::to_string(rep.trained_pairs) + "\n";
  body += "skipped_prompts " + std::to_string(rep.skipped_prompts) + "\n";
  std::vector<double> pre_scores, post_scores;
  for (int i = 0; i < ctx.cfg.dpo_prompts; ++i) {
    std::vector<int> p = sample_prompt(task, held_rng);
    TokenSeq pre = sample_response(base, p, 0.0, 1.0, ctx.cfg.train.max_sample_len, 0);
    TokenSeq post = sample_response(policy, p, 0.0, 1.0, ctx.cfg.train.max_sample_len, 0);
    pre_scores.push_back(gold_score(task, pre.response));
    post_scores.push_back(gold_score(task, post.response));
    body += "prompt=" + fmt_ids(p) + " pre_gold=" + fmt_double(pre_scores.back()) +
            " post_gold=" + fmt_double(post_scores.back()) + "\n";
  }
  double pre_mean = 0.0, post_mean = 0.0;
  for (size_t i = 0; i < pre_scores.size(); ++i) {
    pre_mean += pre_scores[i];
    post_mean += post_scores[i];
  }
  pre_mean /= static_cast<double>(pre_scores.size());
  post_mean /= static_cast<double>(post_scores.size());
  WinTieLose wtl = win_tie_lose_scores(post_scores, pre_scores);
  body += "summary pre_gold=" + fmt_double(pre_mean) + " post_gold=" + fmt_double(post_mean) +
          " win=" + fmt_double(wtl.win) + " tie=" + fmt_double(wtl.tie) + " lose=" + fmt_double(wtl.lose) + "\n";
  ctx.write_output("dpo_report.txt", body);
  ctx.finish();

  if (rep.diverged) {
    std::cerr << "dpo: training diverged (non-finite loss); stopped early\n";
    return 2;
  }
  std::cout << "dpo: " << rep.trained_pairs << " best-worst pairs (" << rep.skipped_prompts
            << " prompts skipped), beta " << ctx.cfg.train.dpo_beta << "\n";
  std::cout << "held-out greedy gold: pre " << pre_mean << " -> post " << post_mean << " (win " << wtl.win
            << ", tie " << wtl.tie << ", lose " << wtl.lose << ")\n";
  return 0;
}

int cmd_heatmap(RunContext& ctx, const std::string& rm_path, const std::string& prompt_str,
                const std::string& response_str) {
  RewardModel rm = load_reward_model(rm_path);
  ctx.note_input(rm_path);
  TokenSeq seq;
  try {
    seq.prompt = parse_ids(prompt_str, 0);
    seq.response = parse_ids(response_str, 0);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("bad token list: ") + e.what());
  }
  std::vector<HeatmapRow> rows;
  try {
    rows = heatmap_rows(rm, seq);
  } catch (const TokenError& e) {
    // hand-typed ids, so token problems are usage errors here
    throw ConfigError(e.what());
  }
  heatmap_export(rm, seq, ctx.path("heatmap.txt"));
  ctx.note_output("heatmap.txt");
  ctx.note_output("heatmap.txt.ppm");
  ctx.finish();
  for (const HeatmapRow& r : rows) {
    std::cout << "k=" << r.position << " token=" << r.token << " name=" << r.name << " reward=" << r.reward << "\n";
  }
  return 0;
}

int cmd_verify_decomp(RunContext& ctx) {
  int worlds = ctx.cfg.world_count;
  double max_res = 0.0, max_gap = 0.0, max_slack = -1.0;
  long prefixes = 0;
  for (int i = 0; i < worlds; ++i) {
    MicroWorld w =
        MicroWorld::random(ctx.cfg.train.seed + static_cast<std::uint64_t>(i), ctx.cfg.world_alphabet,
                           ctx.cfg.world_horizon);
    DecompReport r = verify_decomposition(w);
    max_res = std::max(max_res, r.max_residual);
    max_gap = std::max(max_gap, r.max_oracle_gap);
    max_slack = std::max(max_slack, r.max_bound_slack);
    prefixes += r.prefixes_checked;
  }
  bool ok = max_res < 1e-12;
  std::string body = "rmlab-verify-decomp v1\n";
  body += "worlds " + std::to_string(worlds) + " alphabet " + std::to_string(ctx.cfg.world_alphabet) + " horizon " +
          std::to_string(ctx.cfg.world_horizon) + " prefixes " + std::to_string(prefixes) + "\n";
  body += "max_residual " + fmt_double(max_res) + "\n";
  body += "max_oracle_gap " + fmt_double(max_gap) + "\n";
  body += "max_bound_slack " + fmt_double(max_slack) + "\n";
  body += std::string("verdict ") + (ok ? "ok" : "fail") + " threshold 1e-12\n";
  if (!ctx.dir.empty()) ctx.write_output("verify_decomp.txt", body);
  ctx.finish();
  std::cout << body;
  return ok ? 0 : 2;
}

// Finite-difference sweep over every loss family on small random instances.
// The consistency family differentiates the frozen-weight objective: the
// detachment rules make mutual weights and calibration means constants of the
// optimization, so the rebuilt graph holds them fixed while the logits move.
int cmd_grad_check(RunContext& ctx, int seeds) {
  if (seeds < 1) throw ConfigError("--seeds must be at least 1");
  const TaskSpec& task = ctx.cfg.task;
  Vocab v = task.vocab();
  int dim = std::min(ctx.cfg.model_dim, 6);

  struct Family {
    std::string name;
    double max_rel = 0.0;
  };
  std::vector<Family> fams = {{"pairing"}, {"consistency"}, {"pointwise"}, {"l1"}, {"aux-gen"}, {"sft"}, {"dpo"}};
  Family& f_bt = fams[0];
  Family& f_icrm = fams[1];
  Family& f_disc = fams[2];
  Family& f_l1 = fams[3];
  Family& f_aux = fams[4];
  Family& f_sft = fams[5];
  Family& f_dpo = fams[6];

  for (int si = 0; si < seeds; ++si) {
    std::uint64_t seed = ctx.cfg.train.seed + static_cast<std::uint64_t>(si);
    std::vector<PreferenceRecord> prefs = build_preferences(task, 2, mix64(seed, 0x6C));
    RewardModel rm = RewardModel::init(v, dim, 0.0, true, seed);
    GeneratorModel g = GeneratorModel::init(v, dim, seed + 50);
    GeneratorModel pol = GeneratorModel::init(v, dim, seed + 51);

    std::vector<TokenSeq> cs, rs;
    for (const PreferenceRecord& r : prefs) {
      cs.push_back({r.prompt, r.chosen});
      rs.push_back({r.prompt, r.rejected});
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (size_t i = 0; i < cs.size(); ++i) {
          terms.push_back(bt_loss(prefix_reward_nodes(rm, cs[i]).back(), prefix_reward_nodes(rm, rs[i]).back()));
        }
        return add_all(terms);
      };
      f_bt.max_rel = std::max(f_bt.max_rel, grad_check(f, rm.params).max_rel_err);
    }

    {
      struct Frozen {
        double cm = 0.0, rm_mean = 0.0;
        std::vector<double> wcp, wcn, wrp, wrn;
      };
      std::vector<Frozen> frozen;
      for (size_t i = 0; i < cs.size(); ++i) {
        CalibratedRewards ref = calibrate(prefix_reward_nodes(rm, cs[i]), prefix_reward_nodes(rm, rs[i]));
        MutualWeights wc = mutual_weights(generator_step_logprobs(g, cs[i]), ref.chosen, 1);
        MutualWeights wr = mutual_weights(generator_step_logprobs(g, rs[i]), ref.rejected, 0);
        frozen.push_back({ref.chosen_mean, ref.rejected_mean, wc.to_prev_values(), wc.to_next_values(),
                          wr.to_prev_values(), wr.to_next_values()});
      }
      auto f = [&] {
        std::vector<Var> terms;
        for (size_t i = 0; i < cs.size(); ++i) {
          std::vector<Var> zc = prefix_reward_nodes(rm, cs[i]);
          std::vector<Var> zr = prefix_reward_nodes(rm, rs[i]);
          CalibratedRewards cal;
          for (const Var& z : zc) cal.chosen.push_back(sigmoid(sub(z, constant(frozen[i].rm_mean))));
          for (const Var& z : zr) cal.rejected.push_back(sigmoid(sub(z, constant(frozen[i].cm))));
          MutualWeights wc, wr;
          for (double x : frozen[i].wcp) wc.to_prev.push_back(constant(x));
          for (double x : frozen[i].wcn) wc.to_next.push_back(constant(x));
          for (double x : frozen[i].wrp) wr.to_prev.push_back(constant(x));
          for (double x : frozen[i].wrn) wr.to_next.push_back(constant(x));
          terms.push_back(total_loss(bt_loss(zc.back(), zr.back()), icrm_reg_loss(cal, wc, wr), 0.1));
        }
        return add_all(terms);
      };
      f_icrm.max_rel = std::max(f_icrm.max_rel, grad_check(f, rm.params).max_rel_err);
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (size_t i = 0; i < cs.size(); ++i) {
          terms.push_back(discriminative_bce(prefix_reward_nodes(rm, cs[i]).back(), 1));
          terms.push_back(discriminative_bce(prefix_reward_nodes(rm, rs[i]).back(), 0));
        }
        return add_all(terms);
      };
      f_disc.max_rel = std::max(f_disc.max_rel, grad_check(f, rm.params).max_rel_err);
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (const TokenSeq& s : cs) {
          std::vector<Var> r;
          for (const Var& z : prefix_reward_nodes(rm, s)) r.push_back(sigmoid(z));
          terms.push_back(l1_consistency_loss(r));
        }
        return add_all(terms);
      };
      f_l1.max_rel = std::max(f_l1.max_rel, grad_check(f, rm.params).max_rel_err);
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (const TokenSeq& s : cs) terms.push_back(sft_reg_loss(aux_gen_logprob_nodes(rm, s)));
        return add_all(terms);
      };
      f_aux.max_rel = std::max(f_aux.max_rel, grad_check(f, rm.params).max_rel_err);
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (const TokenSeq& s : cs) terms.push_back(sft_reg_loss(generator_logprob_nodes(g, s)));
        return add_all(terms);
      };
      f_sft.max_rel = std::max(f_sft.max_rel, grad_check(f, g.params).max_rel_err);
    }

    {
      auto f = [&] {
        std::vector<Var> terms;
        for (size_t i = 0; i < cs.size(); ++i) {
          terms.push_back(dpo_pair_loss(pol, g, cs[i], rs[i], ctx.cfg.train.dpo_beta));
        }
        return add_all(terms);
      };
      f_dpo.max_rel = std::max(f_dpo.max_rel, grad_check(f, pol.params).max_rel_err);
    }
  }

  double overall = 0.0;
  std::string body = "rmlab-grad-check v1\n";
  body += "seeds " + std::to_string(seeds) + " dim " + std::to_string(dim) + " eps 1e-05\n";
  for (const Family& f : fams) {
    body += "family=" + f.name + " max_rel_err=" + fmt_double(f.max_rel) + "\n";
    overall = std::max(overall, f.max_rel);
  }
  bool ok = overall < 1e-4;
  body += "overall max_rel_err=" + fmt_double(overall) + " threshold=0.0001 " + (ok ? "ok" : "fail") + "\n";
  if (!ctx.dir.empty()) ctx.write_output("grad_check.txt", body);
  ctx.finish();
  std::cout << body;
  return ok ? 0 : 2;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"desk-scale laboratory for prefix-consistent reward modeling"};
  app.require_subcommand(1);

  CommonOpts common;
  std::vector<std::string> seed_vals, mode_vals, alpha_vals, worlds_vals;
  std::string corpus, prefs, labeled, gen, rmp, evalp, prompt, response;
  int gc_seeds = 3;

  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config_path, "flat key=value config file");
    sub->add_option("--set", common.sets, "override one config key (key=value, later wins)");
    auto* out = sub->add_option("--out", common.out_dir, "output directory; every artifact lands here");
    if (out_required) out->required();
    sub->add_option("--seed", seed_vals, "run seed (applied last, as --set train.seed=N)");
    return sub;
  };

  auto* c_gen = add_common(app.add_subcommand("gen-data", "write synthetic corpus, preference, and labeled sets"),
                           true);
  auto* c_sft = add_common(app.add_subcommand("sft", "train the generator by mean next-token NLL"), true);
  c_sft->add_option("--corpus", corpus, "corpus file from gen-data")->required();
  auto* c_trm = add_common(app.add_subcommand("train-rm", "train a reward model (bt, icrm, l1, disc, e2e)"), true);
  c_trm->add_option("--prefs", prefs, "preference pairs (modes bt, icrm, l1, e2e)");
  c_trm->add_option("--labeled", labeled, "labeled records (mode disc)");
  c_trm->add_option("--gen", gen, "generator checkpoint for the mutual weights (modes bt, icrm)");
  c_trm->add_option("--eval", evalp, "held-out preference pairs for the per-epoch metric");
  c_trm->add_option("--mode", mode_vals, "shorthand for --set train.mode=NAME");
  c_trm->add_option("--alpha", alpha_vals, "shorthand for --set train.alpha=X");
  auto* c_eval = add_common(app.add_subcommand("eval-rm", "pairwise preference accuracy of a reward model"), true);
  c_eval->add_option("--rm", rmp, "reward model checkpoint")->required();
  c_eval->add_option("--prefs", prefs, "preference pairs to score")->required();
  auto* c_bon = add_common(app.add_subcommand("bon", "best-of-N candidate selection against the gold scorer"), true);
  c_bon->add_option("--rm", rmp, "reward model checkpoint")->required();
  c_bon->add_option("--gen", gen, "generator checkpoint sampling the candidates")->required();
  auto* c_dpo = add_common(app.add_subcommand("dpo", "align a generator on reward-model best-worst pairs"), true);
  c_dpo->add_option("--rm", rmp, "reward model scoring the samples")->required();
  c_dpo->add_option("--gen", gen, "base generator checkpoint")->required();
  auto* c_heat = add_common(app.add_subcommand("heatmap", "per-token reward table and image for one response"), true);
  c_heat->add_option("--rm", rmp, "reward model checkpoint")->required();
  c_heat->add_option("--prompt", prompt, "comma-separated prompt token ids")->required();
  c_heat->add_option("--response", response, "comma-separated response token ids")->required();
  auto* c_ver = add_common(app.add_subcommand("verify-decomp", "check the prefix-reward decomposition on random worlds"),
                           false);
  c_ver->add_option("--worlds", worlds_vals, "shorthand for --set world.count=N");
  auto* c_gc = add_common(app.add_subcommand("grad-check", "finite-difference check of every loss family"), false);
  c_gc->add_option("--seeds", gc_seeds, "random instances per loss family");
  (void)c_gen;

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // help and version requests exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n";
    std::cerr << app.help() << "\n";
    std::cerr << config_schema();
    return 1;
  }

  // dedicated flags are sugar applied after the --set list
  if (!mode_vals.empty()) common.sets.push_back("train.mode=" + mode_vals.back());
  if (!alpha_vals.empty()) common.sets.push_back("train.alpha=" + alpha_vals.back());
  if (!worlds_vals.empty()) common.sets.push_back("world.count=" + worlds_vals.back());
  if (!seed_vals.empty()) common.sets.push_back("train.seed=" + seed_vals.back());

  std::string cmd = app.get_subcommands().front()->get_name();
  try {
    RunContext ctx = make_context(cmd, common);
    if (cmd == "gen-data") return cmd_gen_data(ctx);
    if (cmd == "sft") return cmd_sft(ctx, corpus);
    if (cmd == "train-rm") return cmd_train_rm(ctx, prefs, labeled, gen, evalp);
    if (cmd == "eval-rm") return cmd_eval_rm(ctx, rmp, prefs);
    if (cmd == "bon") return cmd_bon(ctx, rmp, gen);
    if (cmd == "dpo") return cmd_dpo(ctx, rmp, gen);
    if (cmd == "heatmap") return cmd_heatmap(ctx, rmp, prompt, response);
    if (cmd == "verify-decomp") return cmd_verify_decomp(ctx);
    if (cmd == "grad-check") return cmd_grad_check(ctx, gc_seeds);
    std::cerr << "usage error: unknown subcommand " << cmd << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n";
    std::cerr << config_schema();
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace rmlab::cli
