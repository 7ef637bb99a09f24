#include "rmlab/verify.hpp"

#include <cmath>
#include <fstream>

#include "rmlab/errors.hpp"
#include "rmlab/textio.hpp"

namespace rmlab {

void AggregationConfig::validate() const {
  if (!(decay >= 0.0 && decay <= 1.0)) {
    throw ConfigError("aggregation decay must lie in [0, 1], got " + fmt_double(decay));
  }
}

Aggregation parse_aggregation(const std::string& name) {
  if (name == "last-token") return Aggregation::last_token;
  if (name == "ema") return Aggregation::ema;
  throw ConfigError("unknown aggregation '" + name + "' (expected last-token or ema)");
}

std::string aggregation_name(Aggregation kind) {
  return kind == Aggregation::last_token ? "last-token" : "ema";
}

double ema_aggregate(const std::vector<double>& rewards, double decay, bool normalized) {
  if (rewards.empty()) throw InvalidInputError("ema_aggregate needs at least one reward");
  if (!(decay >= 0.0 && decay <= 1.0)) {
    throw InvalidInputError("ema_aggregate decay must lie in [0, 1], got " + fmt_double(decay));
  }
  // Weights decay backward from the last prefix: the last gets decay^0 = 1
  // (also when decay is 0), the first gets decay^(m-1).
  double acc = 0.0;
  double wsum = 0.0;
  double w = 1.0;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc += w * rewards[i];
    wsum += w;
    w *= decay;
  }
  return normalized ? acc / wsum : acc;
}

double aggregate(const std::vector<double>& rewards, const AggregationConfig& cfg) {
  cfg.validate();
  if (rewards.empty()) throw InvalidInputError("aggregate needs at least one reward");
  if (cfg.kind == Aggregation::last_token) return rewards.back();
  return ema_aggregate(rewards, cfg.decay, cfg.normalized);
}

double aggregate_response(const RewardModel& rm, const TokenSeq& seq, const AggregationConfig& cfg) {
  return aggregate(prefix_rewards(rm, seq), cfg);
}

BonResult bon_select_scores(const std::vector<double>& scores, const std::vector<double>* gold_scores) {
  if (scores.empty()) throw InvalidInputError("bon_select needs at least one candidate");
  BonResult out;
  out.scores = scores;
  out.selected = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[out.selected]) out.selected = static_cast<int>(i);
  }
  if (gold_scores != nullptr) {
    if (gold_scores->size() != scores.size()) {
      throw InvalidInputError("gold score list does not match the candidate list");
    }
    out.gold_best = 0;
    for (size_t i = 1; i < gold_scores->size(); ++i) {
      if ((*gold_scores)[i] > (*gold_scores)[out.gold_best]) out.gold_best = static_cast<int>(i);
    }
    out.gold_correct = (*gold_scores)[out.selected] >= (*gold_scores)[out.gold_best];
  }
  return out;
}

BonResult bon_select(const RewardModel& rm, const std::vector<int>& prompt,
                     const std::vector<std::vector<int>>& candidates, const AggregationConfig& cfg,
                     const SeqScorer* gold) {
  if (candidates.empty()) throw InvalidInputError("bon_select needs at least one candidate");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& resp : candidates) {
    scores.push_back(aggregate_response(rm, TokenSeq{prompt, resp}, cfg));
  }
  if (gold == nullptr) return bon_select_scores(scores);
  std::vector<double> gold_scores;
  gold_scores.reserve(candidates.size());
  for (const auto& resp : candidates) gold_scores.push_back((*gold)(TokenSeq{prompt, resp}));
  return bon_select_scores(scores, &gold_scores);
}

namespace {

double accuracy_from_scores(const std::vector<double>& chosen, const std::vector<double>& rejected) {
  double credit = 0.0;
  for (size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i] > rejected[i]) {
      credit += 1.0;
    } else if (chosen[i] == rejected[i]) {
      credit += 0.5;
    }
  }
  return credit / static_cast<double>(chosen.size());
}

}  // namespace

double pairwise_accuracy(const RewardModel& rm, const std::vector<PreferenceRecord>& data,
                         const AggregationConfig& cfg) {
  if (data.empty()) throw InvalidInputError("pairwise_accuracy needs a non-empty eval set");
  std::vector<double> c, r;
  c.reserve(data.size());
  r.reserve(data.size());
  for (const auto& rec : data) {
    c.push_back(aggregate_response(rm, TokenSeq{rec.prompt, rec.chosen}, cfg));
    r.push_back(aggregate_response(rm, TokenSeq{rec.prompt, rec.rejected}, cfg));
  }
  return accuracy_from_scores(c, r);
}

double pairwise_accuracy(const SeqScorer& scorer, const std::vector<PreferenceRecord>& data) {
  if (data.empty()) throw InvalidInputError("pairwise_accuracy needs a non-empty eval set");
  std::vector<double> c, r;
  c.reserve(data.size());
  r.reserve(data.size());
  for (const auto& rec : data) {
    c.push_back(scorer(TokenSeq{rec.prompt, rec.chosen}));
    r.push_back(scorer(TokenSeq{rec.prompt, rec.rejected}));
  }
  return accuracy_from_scores(c, r);
}

WinTieLose win_tie_lose_scores(const std::vector<double>& a, const std::vector<double>& b, double tie_eps) {
  if (a.size() != b.size()) throw InvalidInputError("win_tie_lose score lists are misaligned");
  if (a.empty()) throw InvalidInputError("win_tie_lose needs at least one prompt");
  if (tie_eps < 0.0) throw InvalidInputError("tie_eps must be nonnegative");
  long win = 0, tie = 0, lose = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (std::fabs(d) <= tie_eps) {
      ++tie;
    } else if (d > 0.0) {
      ++win;
    } else {
      ++lose;
    }
  }
  double n = static_cast<double>(a.size());
  return WinTieLose{win / n, tie / n, lose / n};
}

WinTieLose win_tie_lose(const std::vector<std::vector<int>>& prompts,
                        const std::vector<std::vector<int>>& responses_a,
                        const std::vector<std::vector<int>>& responses_b, const SeqScorer& gold,
                        double tie_eps) {
  if (prompts.size() != responses_a.size() || prompts.size() != responses_b.size()) {
    throw InvalidInputError("win_tie_lose response lists are misaligned with the prompts");
  }
  std::vector<double> a, b;
  a.reserve(prompts.size());
  b.reserve(prompts.size());
  for (size_t i = 0; i < prompts.size(); ++i) {
    a.push_back(gold(TokenSeq{prompts[i], responses_a[i]}));
    b.push_back(gold(TokenSeq{prompts[i], responses_b[i]}));
  }
  return win_tie_lose_scores(a, b, tie_eps);
}

std::vector<HeatmapRow> heatmap_rows(const RewardModel& rm, const TokenSeq& seq) {
  std::vector<int> resp = effective_response(rm.vocab, seq);
  PrefixRewardVector logits = prefix_rewards(rm, seq);
  std::vector<HeatmapRow> rows;
  rows.reserve(resp.size());
  for (size_t k = 0; k < resp.size(); ++k) {
    HeatmapRow row;
    row.position = static_cast<int>(k) + 1;
    row.token = resp[k];
    row.name = rm.vocab.token_name(resp[k]);
    row.reward = 1.0 / (1.0 + std::exp(-logits[k]));
    rows.push_back(row);
  }
  return rows;
}

void heatmap_export(const RewardModel& rm, const TokenSeq& seq, const std::string& path) {
  std::vector<HeatmapRow> rows = heatmap_rows(rm, seq);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open heatmap file for writing: " + path);
  out << "rmlab-heatmap v1\n";
  out << "prompt=" << fmt_ids(seq.prompt) << " tokens=" << rows.size() << "\n";
  for (const auto& row : rows) {
    out << "k=" << row.position << " id=" << row.token << " name=" << row.name
        << " reward=" << fmt_double(row.reward) << "\n";
  }
  out.flush();
  if (!out) throw IoError("failed writing heatmap file: " + path);

  // Cosmetic companion: one column per token, red (reward 0) to green (1).
  const int cell = 12;
  const int height = 16;
  std::string img_path = path + ".ppm";
  std::ofstream img(img_path);
  if (!img) throw IoError("cannot open heatmap image for writing: " + img_path);
  img << "P3\n" << rows.size() * cell << " " << height << "\n255\n";
  for (int y = 0; y < height; ++y) {
    for (const auto& row : rows) {
      int green = static_cast<int>(std::lround(row.reward * 255.0));
      int red = 255 - green;
      for (int x = 0; x < cell; ++x) img << red << " " << green << " 0 ";
    }
    img << "\n";
  }
  img.flush();
  if (!img) throw IoError("failed writing heatmap image: " + img_path);
}

}  // namespace rmlab
