#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <vector>

#include "rmlab/errors.hpp"
#include "rmlab/synth.hpp"

using namespace rmlab;

namespace {

bool close(double a, double b, double tol = 1e-12) { return std::fabs(a - b) < tol; }

std::string tmp_path(const std::string& name) { return std::string("/tmp/rmlab_synth_") + name; }

bool same_record(const PreferenceRecord& a, const PreferenceRecord& b) {
  return a.prompt == b.prompt && a.chosen == b.chosen && a.rejected == b.rejected && a.gold_chosen == b.gold_chosen &&
         a.gold_rejected == b.gold_rejected && a.seed == b.seed && a.flipped == b.flipped;
}

size_t content_len(const std::vector<int>& response) {
  size_t n = response.size();
  if (n > 0 && response.back() == 2) --n;
  return n;
}

// Dyadic hand world: every probability and terminal value is a power-of-two
// fraction, so the expected rewards below are exact in doubles.
//   r({0}) = 0.5*0 + 0.5*1                = 0.5
//   r({1}) = 0.125*0.25 + 0.875*0.5       = 0.46875
//   r({})  = 0.25*0.5 + 0.75*0.46875      = 0.4765625
MicroWorld hand_world() {
  MicroWorld w;
  w.alphabet = 2;
  w.horizon = 2;
  w.transitions[{}] = {0.25, 0.75};
  w.transitions[{0}] = {0.5, 0.5};
  w.transitions[{1}] = {0.125, 0.875};
  w.terminal[{0, 0}] = 0.0;
  w.terminal[{0, 1}] = 1.0;
  w.terminal[{1, 0}] = 0.25;
  w.terminal[{1, 1}] = 0.5;
  return w;
}

}  // namespace

TEST_CASE("task spec validation") {
  TaskSpec spec;
  spec.validate();

  TaskSpec overlap = spec;
  overlap.bad_tokens.push_back(3);
  CHECK_THROWS_AS(overlap.validate(), ConfigError);

  TaskSpec reserved = spec;
  reserved.good_tokens.push_back(2);
  CHECK_THROWS_AS(reserved.validate(), ConfigError);

  TaskSpec short_resp = spec;
  short_resp.max_response_len = 1;
  CHECK_THROWS_AS(short_resp.validate(), ConfigError);

  TaskSpec bad_cont = spec;
  bad_cont.continue_prob = 1.0;
  CHECK_THROWS_AS(bad_cont.validate(), ConfigError);

  TaskSpec bad_noise = spec;
  bad_noise.label_noise = 0.6;
  CHECK_THROWS_AS(bad_noise.validate(), ConfigError);
}

TEST_CASE("gold score matches hand computations") {
  TaskSpec spec;
  CHECK(close(gold_score(spec, {3, 3, 2}), 0.9525741268224334));   // mean 1, streak bonus 0.5
  CHECK(gold_score(spec, {3, 7, 2}) == 0.5);                        // contributions cancel, no streak
  CHECK(close(gold_score(spec, {7, 2}), 0.11920292202211755));     // single bad token
  CHECK(gold_score(spec, {2}) == 0.5);                              // empty content
  CHECK(close(gold_score(spec, {3, 11, 3}), 0.791391472673955));   // neutral token breaks the streak
  CHECK(close(gold_score(spec, {3, 4, 7, 2}), 0.7625419716560974));
  // trailing EOS is cosmetic
  CHECK(gold_score(spec, {3, 4, 7}) == gold_score(spec, {3, 4, 7, 2}));
  CHECK_THROWS_AS(gold_score(spec, {3, 1, 4}), TokenError);

  // diluting a good streak with neutral tokens lowers the score: length alone
  // never pays
  CHECK(gold_score(spec, {3, 11, 3, 11, 2}) < gold_score(spec, {3, 3, 2}));
}

TEST_CASE("corpus generation is deterministic and in-vocabulary") {
  TaskSpec spec;
  auto a = build_corpus(spec, 50, 9);
  auto b = build_corpus(spec, 50, 9);
  auto c = build_corpus(spec, 50, 10);
  REQUIRE(a.size() == 50);
  bool all_same = true, any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) {
    all_same = all_same && a[i].prompt == b[i].prompt && a[i].response == b[i].response;
    any_diff = any_diff || a[i].prompt != c[i].prompt || a[i].response != c[i].response;
  }
  CHECK(all_same);
  CHECK(any_diff);
  Vocab v = spec.vocab();
  for (const TokenSeq& rec : a) {
    CHECK(!rec.prompt.empty());
    CHECK(rec.prompt.size() <= static_cast<size_t>(spec.max_prompt_len));
    CHECK(!rec.response.empty());
    CHECK(rec.response.size() <= static_cast<size_t>(spec.max_response_len));
    for (int t : rec.prompt) CHECK(!v.reserved(t));
    for (size_t i = 0; i < rec.response.size(); ++i) {
      if (i + 1 == rec.response.size()) CHECK((rec.response[i] == v.eos || !v.reserved(rec.response[i])));
      else CHECK(!v.reserved(rec.response[i]));
    }
  }
  CHECK_THROWS_AS(build_corpus(spec, 0, 1), ConfigError);
}

TEST_CASE("first response tokens follow the spec mixture within 3 sigma") {
  TaskSpec spec;
  const int n = 10000;
  auto corpus = build_corpus(spec, n, 123);

  // expected marginal, recomputed from the spec fields: a half/half blend of
  // softmax(+bias * contrib) and softmax(-bias * contrib) over content tokens
  std::vector<int> ids;
  for (int t = 3; t < spec.vocab_size; ++t) ids.push_back(t);
  auto soft = [&](double scale) {
    std::map<int, double> p;
    double z = 0.0;
    for (int t : ids) {
      double c = 0.0;
      for (int g : spec.good_tokens)
        if (g == t) c = 1.0;
      for (int b : spec.bad_tokens)
        if (b == t) c = -1.0;
      p[t] = std::exp(scale * c);
      z += p[t];
    }
    for (auto& [t, x] : p) x /= z;
    return p;
  };
  auto pg = soft(spec.good_bias);
  auto pb = soft(-spec.good_bias);

  std::map<int, int> counts;
  int usable = 0;
  for (const TokenSeq& rec : corpus) {
    if (rec.response[0] == 2) continue;  // immediate EOS carries no content draw
    ++counts[rec.response[0]];
    ++usable;
  }
  CHECK(usable > n / 2);
  for (int t : ids) {
    double p = spec.good_mix * pg[t] + (1.0 - spec.good_mix) * pb[t];
    double mean = usable * p;
    double sd = std::sqrt(usable * p * (1.0 - p));
    CHECK(std::fabs(counts[t] - mean) <= 3.0 * sd);
  }
}

TEST_CASE("preference pairs are strictly ordered when the knobs are off") {
  TaskSpec spec;
  auto prefs = build_preferences(spec, 300, 5);
  REQUIRE(prefs.size() == 300);
  for (const PreferenceRecord& r : prefs) {
    CHECK(r.gold_chosen > r.gold_rejected);
    CHECK(!r.flipped);
    CHECK(r.chosen != r.rejected);
    CHECK(close(gold_score(spec, r.chosen), r.gold_chosen));
    CHECK(close(gold_score(spec, r.rejected), r.gold_rejected));
  }
  auto again = build_preferences(spec, 300, 5);
  for (size_t i = 0; i < prefs.size(); ++i) CHECK(same_record(prefs[i], again[i]));
  CHECK_THROWS_AS(build_preferences(spec, 0, 1), ConfigError);
}

TEST_CASE("length bias plants a spurious longer-is-better correlation") {
  TaskSpec biased;
  biased.length_bias = 3.0;
  auto prefs = build_preferences(biased, 1000, 77);
  double len_c = 0.0, len_r = 0.0;
  int flips = 0;
  for (const PreferenceRecord& r : prefs) {
    len_c += static_cast<double>(content_len(r.chosen));
    len_r += static_cast<double>(content_len(r.rejected));
    flips += r.flipped ? 1 : 0;
  }
  CHECK(len_c / 1000.0 > len_r / 1000.0 + 1.0);  // clearly longer on average
  CHECK(flips > 0);                              // some choices now contradict the gold score

  TaskSpec neutral;
  auto base = build_preferences(neutral, 1000, 77);
  double blc = 0.0, blr = 0.0;
  for (const PreferenceRecord& r : base) {
    blc += static_cast<double>(content_len(r.chosen));
    blr += static_cast<double>(content_len(r.rejected));
  }
  // without the knob the gap is small; with it, large
  CHECK(std::fabs(blc - blr) / 1000.0 < (len_c - len_r) / 2000.0);
}

TEST_CASE("label noise flips roughly its share of pairs") {
  TaskSpec spec;
  spec.label_noise = 0.3;
  auto prefs = build_preferences(spec, 1000, 11);
  int flips = 0;
  for (const PreferenceRecord& r : prefs) flips += r.flipped ? 1 : 0;
  double sd = std::sqrt(1000 * 0.3 * 0.7);
  CHECK(std::fabs(flips - 300.0) <= 3.0 * sd);
  for (const PreferenceRecord& r : prefs)
    if (r.flipped) CHECK(r.gold_chosen < r.gold_rejected);
}

TEST_CASE("labeled records unfold each pair into two rows") {
  TaskSpec spec;
  auto prefs = build_preferences(spec, 20, 3);
  auto rows = to_labeled(prefs);
  REQUIRE(rows.size() == 40);
  for (size_t i = 0; i < prefs.size(); ++i) {
    CHECK(rows[2 * i].label == 1);
    CHECK(rows[2 * i].response == prefs[i].chosen);
    CHECK(rows[2 * i].gold == prefs[i].gold_chosen);
    CHECK(rows[2 * i + 1].label == 0);
    CHECK(rows[2 * i + 1].response == prefs[i].rejected);
    CHECK(rows[2 * i + 1].gold == prefs[i].gold_rejected);
  }
}

TEST_CASE("dataset files round-trip losslessly") {
  TaskSpec spec;
  std::string cp = tmp_path("corpus.txt"), pp = tmp_path("prefs.txt"), lp = tmp_path("labeled.txt");

  auto corpus = build_corpus(spec, 200, 1);
  write_corpus(cp, spec, corpus);
  int vocab = 0;
  auto corpus2 = read_corpus(cp, &vocab);
  CHECK(vocab == spec.vocab_size);
  REQUIRE(corpus2.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(corpus[i].prompt == corpus2[i].prompt);
    CHECK(corpus[i].response == corpus2[i].response);
  }

  auto prefs = build_preferences(spec, 1000, 2);
  write_preferences(pp, spec, prefs);
  auto prefs2 = read_preferences(pp);
  REQUIRE(prefs2.size() == prefs.size());
  for (size_t i = 0; i < prefs.size(); ++i) CHECK(same_record(prefs[i], prefs2[i]));

  auto rows = to_labeled(prefs);
  write_labeled(lp, spec, rows);
  auto rows2 = read_labeled(lp);
  REQUIRE(rows2.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].prompt == rows2[i].prompt);
    CHECK(rows[i].response == rows2[i].response);
    CHECK(rows[i].label == rows2[i].label);
    CHECK(rows[i].gold == rows2[i].gold);
  }

  // empty list still writes a parseable header
  write_preferences(pp, spec, {});
  CHECK(read_preferences(pp).empty());

  std::remove(cp.c_str());
  std::remove(pp.c_str());
  std::remove(lp.c_str());
}

TEST_CASE("malformed dataset files fail with located errors") {
  std::string p = tmp_path("bad.txt");
  {
    std::ofstream f(p);
    f << "rmlab-prefs v1\ncount=2 vocab=16\n";
    f << "prompt=3 chosen=4,2 rejected=5,2 gold_chosen=0.9 gold_rejected=0.2 seed=1 flipped=0\n";
  }
  try {
    read_preferences(p);
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }

  {
    std::ofstream f(p);
    f << "rmlab-prefs v2\ncount=0 vocab=16\n";
  }
  CHECK_THROWS_AS(read_preferences(p), VersionError);

  {
    std::ofstream f(p);
    f << "rmlab-prefs v1\ncount=1 vocab=16\n";
    f << "prompt=3 chosen=4,2 rejected=5,2 gold_chosen=zzz gold_rejected=0.2 seed=1 flipped=0\n";
  }
  try {
    read_preferences(p);
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(read_corpus(tmp_path("nope.txt")), IoError);
  std::remove(p.c_str());
}

TEST_CASE("hand-built world rewards match exact expectations") {
  MicroWorld w = hand_world();
  w.validate();
  CHECK(true_prefix_reward(w, {0}) == 0.5);
  CHECK(true_prefix_reward(w, {1}) == 0.46875);
  CHECK(true_prefix_reward(w, {}) == 0.4765625);
  CHECK(prefix_reward_flat(w, {0}) == 0.5);
  CHECK(prefix_reward_flat(w, {1}) == 0.46875);
  CHECK(prefix_reward_flat(w, {}) == 0.4765625);
  // a complete sequence scores its terminal entry
  CHECK(true_prefix_reward(w, {0, 1}) == 1.0);
  CHECK(prefix_reward_flat(w, {1, 0}) == 0.25);
  CHECK_THROWS_AS(true_prefix_reward(w, {0, 1, 0}), DomainError);
  CHECK_THROWS_AS(true_prefix_reward(w, {5}), DomainError);
}

TEST_CASE("deterministic world collapses to the single reachable terminal") {
  MicroWorld w;
  w.alphabet = 2;
  w.horizon = 2;
  w.transitions[{}] = {1.0, 0.0};
  w.transitions[{0}] = {1.0, 0.0};
  w.transitions[{1}] = {0.0, 1.0};
  w.terminal[{0, 0}] = 0.8125;
  w.terminal[{0, 1}] = 0.1;
  w.terminal[{1, 0}] = 0.2;
  w.terminal[{1, 1}] = 0.3;
  CHECK(true_prefix_reward(w, {}) == 0.8125);
  CHECK(true_prefix_reward(w, {0}) == 0.8125);
  DecompReport rep = verify_decomposition(w, 1, 2);
  CHECK(rep.max_residual == 0.0);
  CHECK(rep.max_bound_slack <= 0.0);
}

TEST_CASE("uniform terminal scores make every prefix reward constant") {
  MicroWorld w = MicroWorld::random(4, 3, 3);
  for (auto& [k, v] : w.terminal) v = 0.6875;
  for (int m = 0; m <= 2; ++m) {
    for (const auto& [prefix, row] : w.transitions) {
      if (static_cast<int>(prefix.size()) != m) continue;
      CHECK(close(true_prefix_reward(w, prefix), 0.6875));
      (void)row;
    }
  }
}

TEST_CASE("random worlds satisfy the decomposition at every prefix split") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    MicroWorld w = MicroWorld::random(seed);
    DecompReport rep = verify_decomposition(w);
    CHECK(rep.max_residual < 1e-12);
    CHECK(rep.max_oracle_gap < 1e-12);
    CHECK(rep.max_bound_slack <= 1e-12);
    CHECK(rep.prefixes_checked > 0);
  }
  // the per-pair form counts exactly the prefixes of length m
  MicroWorld w = MicroWorld::random(3, 3, 4);
  DecompReport rep = verify_decomposition(w, 2, 4);
  CHECK(rep.prefixes_checked == 9);
  CHECK_THROWS_AS(verify_decomposition(w, 0, 2), InvalidInputError);
  CHECK_THROWS_AS(verify_decomposition(w, 2, 2), InvalidInputError);
  CHECK_THROWS_AS(verify_decomposition(w, 1, 5), InvalidInputError);
}

TEST_CASE("generated worlds are structurally valid and seed-deterministic") {
  MicroWorld a = MicroWorld::random(8);
  MicroWorld b = MicroWorld::random(8);
  a.validate();
  CHECK(a.alphabet == b.alphabet);
  CHECK(a.horizon == b.horizon);
  CHECK(a.transitions == b.transitions);
  CHECK(a.terminal == b.terminal);
  for (const auto& [prefix, row] : a.transitions) {
    double sum = 0.0;
    for (double p : row) sum += p;
    CHECK(sum == 1.0);  // last entry is the exact complement
    (void)prefix;
  }
  CHECK_THROWS_AS(MicroWorld::random(1, 1, 2), ConfigError);
  CHECK_THROWS_AS(MicroWorld::random(1, 2, 9), ConfigError);
}
