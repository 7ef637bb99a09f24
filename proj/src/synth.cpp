#include "rmlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "rmlab/errors.hpp"
#include "rmlab/textio.hpp"

namespace rmlab {

namespace {

constexpr std::uint64_t kCorpusSalt = 0xC0DEull;
constexpr std::uint64_t kPrefsSalt = 0xFACEull;
constexpr std::uint64_t kWorldSalt = 0xAB1Eull;
constexpr int kMaxPairAttempts = 1000;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Content tokens of a response: everything before a single trailing EOS.
std::vector<int> content_tokens(const TaskSpec& spec, const std::vector<int>& response) {
  Vocab v = spec.vocab();
  std::vector<int> content = response;
  if (!content.empty() && content.back() == v.eos) content.pop_back();
  for (int t : content) {
    if (t < 0 || t >= v.size) throw TokenError("token id " + std::to_string(t) + " out of range");
    if (v.reserved(t)) throw TokenError("reserved token " + std::to_string(t) + " inside response content");
  }
  return content;
}

std::vector<int> content_ids(const TaskSpec& spec) {
  Vocab v = spec.vocab();
  std::vector<int> ids;
  for (int t = 0; t < v.size; ++t)
    if (!v.reserved(t)) ids.push_back(t);
  return ids;
}

int draw_from(const std::vector<double>& probs, const std::vector<int>& ids, Rng& rng) {
  double u = rng.uniform01();
  double cum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return ids[i];
  }
  return ids.back();
}

}  // namespace

Vocab TaskSpec::vocab() const {
  Vocab v;
  v.size = vocab_size;
  return v;
}

void TaskSpec::validate() const {
  Vocab v = vocab();
  v.validate();
  if (vocab_size < 4) throw ConfigError("vocab_size must leave room for at least one content token");
  if (max_prompt_len < 1) throw ConfigError("max_prompt_len must be >= 1");
  if (max_response_len < 2) throw ConfigError("max_response_len must be >= 2 so adjacent prefixes exist");
  std::set<int> good(good_tokens.begin(), good_tokens.end());
  for (int t : good_tokens)
    if (t < 0 || t >= vocab_size || v.reserved(t)) throw ConfigError("good token " + std::to_string(t) + " is not a content token");
  for (int t : bad_tokens) {
    if (t < 0 || t >= vocab_size || v.reserved(t)) throw ConfigError("bad token " + std::to_string(t) + " is not a content token");
    if (good.count(t)) throw ConfigError("token " + std::to_string(t) + " is both good and bad");
  }
  if (good_weight < 0 || bad_weight < 0) throw ConfigError("token weights must be >= 0");
  if (continue_prob <= 0.0 || continue_prob >= 1.0) throw ConfigError("continue_prob must be in (0,1)");
  if (good_mix < 0.0 || good_mix > 1.0) throw ConfigError("good_mix must be in [0,1]");
  if (length_bias < 0.0) throw ConfigError("length_bias must be >= 0");
  if (label_noise < 0.0 || label_noise > 0.5) throw ConfigError("label_noise must be in [0,0.5]");
  if (squash_scale <= 0.0) throw ConfigError("squash_scale must be > 0");
}

double token_contrib(const TaskSpec& spec, int token) {
  for (int t : spec.good_tokens)
    if (t == token) return spec.good_weight;
  for (int t : spec.bad_tokens)
    if (t == token) return -spec.bad_weight;
  return 0.0;
}

double gold_score(const TaskSpec& spec, const std::vector<int>& response) {
  std::vector<int> content = content_tokens(spec, response);
  if (content.empty()) return 0.5;
  double sum = 0.0;
  for (int t : content) sum += token_contrib(spec, t);
  double raw = sum / static_cast<double>(content.size());
  if (content.size() >= 2) {
    std::set<int> good(spec.good_tokens.begin(), spec.good_tokens.end());
    int adj = 0;
    for (size_t i = 0; i + 1 < content.size(); ++i)
      if (good.count(content[i]) && good.count(content[i + 1])) ++adj;
    raw += spec.context_bonus * adj / static_cast<double>(content.size() - 1);
  }
  return sigmoid(spec.squash_scale * raw);
}

std::vector<int> sample_prompt(const TaskSpec& spec, Rng& rng) {
  std::vector<int> ids = content_ids(spec);
  int len = 1 + rng.uniform_int(spec.max_prompt_len);
  std::vector<int> prompt(len);
  for (int i = 0; i < len; ++i) prompt[i] = ids[rng.uniform_int(static_cast<int>(ids.size()))];
  return prompt;
}

std::vector<int> sample_task_response(const TaskSpec& spec, bool good_mode, Rng& rng) {
  std::vector<int> ids = content_ids(spec);
  double scale = good_mode ? spec.good_bias : -spec.good_bias;
  std::vector<double> probs(ids.size());
  double mx = -1e300;
  for (size_t i = 0; i < ids.size(); ++i) {
    probs[i] = scale * token_contrib(spec, ids[i]);
    mx = std::max(mx, probs[i]);
  }
  double z = 0.0;
  for (double& p : probs) {
    p = std::exp(p - mx);
    z += p;
  }
  for (double& p : probs) p /= z;

  Vocab v = spec.vocab();
  std::vector<int> response;
  while (static_cast<int>(response.size()) < spec.max_response_len) {
    if (!rng.bernoulli(spec.continue_prob)) {
      response.push_back(v.eos);
      break;
    }
    response.push_back(draw_from(probs, ids, rng));
  }
  return response;
}

std::vector<TokenSeq> build_corpus(const TaskSpec& spec, int count, std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw ConfigError("corpus count must be >= 1");
  std::vector<TokenSeq> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(mix64(mix64(seed, kCorpusSalt), static_cast<std::uint64_t>(i)));
    TokenSeq rec;
    rec.prompt = sample_prompt(spec, rng);
    rec.response = sample_task_response(spec, rng.bernoulli(spec.good_mix), rng);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PreferenceRecord> build_preferences(const TaskSpec& spec, int count, std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw ConfigError("preference count must be >= 1");
  std::vector<PreferenceRecord> out;
  out.reserve(count);
  double p_len = 1.0 - std::exp(-spec.length_bias);
  for (int i = 0; i < count; ++i) {
    PreferenceRecord rec;
    rec.seed = mix64(mix64(seed, kPrefsSalt), static_cast<std::uint64_t>(i));
    Rng rng(rec.seed);
    rec.prompt = sample_prompt(spec, rng);
    bool found = false;
    for (int attempt = 0; attempt < kMaxPairAttempts && !found; ++attempt) {
      std::vector<int> a = sample_task_response(spec, rng.bernoulli(spec.good_mix), rng);
      std::vector<int> b = sample_task_response(spec, rng.bernoulli(spec.good_mix), rng);
      if (a == b) continue;
      double ga = gold_score(spec, a);
      double gb = gold_score(spec, b);
      if (std::fabs(ga - gb) < 1e-9) continue;  // ties carry no preference signal; redraw
      if (ga >= gb) {
        rec.chosen = std::move(a);
        rec.rejected = std::move(b);
        rec.gold_chosen = ga;
        rec.gold_rejected = gb;
      } else {
        rec.chosen = std::move(b);
        rec.rejected = std::move(a);
        rec.gold_chosen = gb;
        rec.gold_rejected = ga;
      }
      found = true;
    }
    if (!found) throw InvalidInputError("could not sample a distinct preference pair; task is too degenerate");
    size_t len_c = content_tokens(spec, rec.chosen).size();
    size_t len_r = content_tokens(spec, rec.rejected).size();
    if (p_len > 0.0 && len_c != len_r && rng.bernoulli(p_len) && len_r > len_c) {
      std::swap(rec.chosen, rec.rejected);
      std::swap(rec.gold_chosen, rec.gold_rejected);
    }
    if (spec.label_noise > 0.0 && rng.bernoulli(spec.label_noise)) {
      std::swap(rec.chosen, rec.rejected);
      std::swap(rec.gold_chosen, rec.gold_rejected);
    }
    rec.flipped = rec.gold_chosen < rec.gold_rejected;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<LabeledRecord> to_labeled(const std::vector<PreferenceRecord>& prefs) {
  std::vector<LabeledRecord> out;
  out.reserve(prefs.size() * 2);
  for (const PreferenceRecord& p : prefs) {
    out.push_back({p.prompt, p.chosen, 1, p.gold_chosen});
    out.push_back({p.prompt, p.rejected, 0, p.gold_rejected});
  }
  return out;
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  return f;
}

struct LineReader {
  std::ifstream f;
  int line_no = 0;
  explicit LineReader(const std::string& path) : f(path) {
    if (!f) throw IoError("cannot open " + path + " for reading");
  }
  bool next(std::string& line) {
    if (!std::getline(f, line)) return false;
    ++line_no;
    return true;
  }
  std::string expect_line(const std::string& what) {
    std::string line;
    if (!next(line)) throw ParseError("missing " + what, line_no + 1);
    return line;
  }
};

void expect_header(LineReader& r, const std::string& magic) {
  std::string line = r.expect_line("header");
  if (line != magic) throw VersionError("expected header '" + magic + "', got '" + line + "'");
}

// Parses "count=N vocab=V" and returns {count, vocab}.
std::pair<int, int> read_meta(LineReader& r) {
  std::string line = r.expect_line("meta line");
  auto kvs = split_kv_line(line, r.line_no);
  int count = -1, vocab = -1;
  for (auto& [k, v] : kvs) {
    if (k == "count") count = static_cast<int>(parse_long(v, r.line_no));
    else if (k == "vocab") vocab = static_cast<int>(parse_long(v, r.line_no));
    else throw ParseError("unknown meta key '" + k + "'", r.line_no);
  }
  if (count < 0 || vocab < 0) throw ParseError("meta line must carry count= and vocab=", r.line_no);
  return {count, vocab};
}

// Returns field values for exactly the expected keys, in their given order.
std::vector<std::string> read_fields(LineReader& r, const std::vector<std::string>& keys) {
  std::string line = r.expect_line("record");
  auto kvs = split_kv_line(line, r.line_no);
  if (kvs.size() != keys.size()) throw ParseError("expected " + std::to_string(keys.size()) + " fields, got " + std::to_string(kvs.size()), r.line_no);
  std::vector<std::string> vals(keys.size());
  for (size_t i = 0; i < keys.size(); ++i) {
    if (kvs[i].first != keys[i]) throw ParseError("expected field '" + keys[i] + "', got '" + kvs[i].first + "'", r.line_no);
    vals[i] = kvs[i].second;
  }
  return vals;
}

std::uint64_t parse_u64(const std::string& s, int line) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad unsigned integer '" + s + "'", line);
  return v;
}

}  // namespace

void write_corpus(const std::string& path, const TaskSpec& spec, const std::vector<TokenSeq>& recs) {
  std::ofstream f = open_out(path);
  f << "rmlab-corpus v1\n";
  f << "count=" << recs.size() << " vocab=" << spec.vocab_size << "\n";
  for (const TokenSeq& r : recs) f << "prompt=" << fmt_ids(r.prompt) << " response=" << fmt_ids(r.response) << "\n";
  if (!f) throw IoError("write failed for " + path);
}

std::vector<TokenSeq> read_corpus(const std::string& path, int* vocab_size) {
  LineReader r(path);
  expect_header(r, "rmlab-corpus v1");
  auto [count, vocab] = read_meta(r);
  if (vocab_size) *vocab_size = vocab;
  std::vector<TokenSeq> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto vals = read_fields(r, {"prompt", "response"});
    out.push_back({parse_ids(vals[0], r.line_no), parse_ids(vals[1], r.line_no)});
  }
  return out;
}

void write_preferences(const std::string& path, const TaskSpec& spec, const std::vector<PreferenceRecord>& recs) {
  std::ofstream f = open_out(path);
  f << "rmlab-prefs v1\n";
  f << "count=" << recs.size() << " vocab=" << spec.vocab_size << "\n";
  for (const PreferenceRecord& r : recs) {
    f << "prompt=" << fmt_ids(r.prompt) << " chosen=" << fmt_ids(r.chosen) << " rejected=" << fmt_ids(r.rejected)
      << " gold_chosen=" << fmt_double(r.gold_chosen) << " gold_rejected=" << fmt_double(r.gold_rejected)
      << " seed=" << r.seed << " flipped=" << (r.flipped ? 1 : 0) << "\n";
  }
  if (!f) throw IoError("write failed for " + path);
}

std::vector<PreferenceRecord> read_preferences(const std::string& path, int* vocab_size) {
  LineReader r(path);
  expect_header(r, "rmlab-prefs v1");
  auto [count, vocab] = read_meta(r);
  if (vocab_size) *vocab_size = vocab;
  std::vector<PreferenceRecord> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto vals = read_fields(r, {"prompt", "chosen", "rejected", "gold_chosen", "gold_rejected", "seed", "flipped"});
    PreferenceRecord rec;
    rec.prompt = parse_ids(vals[0], r.line_no);
    rec.chosen = parse_ids(vals[1], r.line_no);
    rec.rejected = parse_ids(vals[2], r.line_no);
    rec.gold_chosen = parse_double(vals[3], r.line_no);
    rec.gold_rejected = parse_double(vals[4], r.line_no);
    rec.seed = parse_u64(vals[5], r.line_no);
    long flip = parse_long(vals[6], r.line_no);
    if (flip != 0 && flip != 1) throw ParseError("flipped must be 0 or 1", r.line_no);
    rec.flipped = flip == 1;
    out.push_back(std::move(rec));
  }
  return out;
}

void write_labeled(const std::string& path, const TaskSpec& spec, const std::vector<LabeledRecord>& recs) {
  std::ofstream f = open_out(path);
  f << "rmlab-labeled v1\n";
  f << "count=" << recs.size() << " vocab=" << spec.vocab_size << "\n";
  for (const LabeledRecord& r : recs)
    f << "prompt=" << fmt_ids(r.prompt) << " response=" << fmt_ids(r.response) << " label=" << r.label
      << " gold=" << fmt_double(r.gold) << "\n";
  if (!f) throw IoError("write failed for " + path);
}

std::vector<LabeledRecord> read_labeled(const std::string& path, int* vocab_size) {
  LineReader r(path);
  expect_header(r, "rmlab-labeled v1");
  auto [count, vocab] = read_meta(r);
  if (vocab_size) *vocab_size = vocab;
  std::vector<LabeledRecord> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto vals = read_fields(r, {"prompt", "response", "label", "gold"});
    LabeledRecord rec;
    rec.prompt = parse_ids(vals[0], r.line_no);
    rec.response = parse_ids(vals[1], r.line_no);
    long label = parse_long(vals[2], r.line_no);
    if (label != 0 && label != 1) throw ParseError("label must be 0 or 1", r.line_no);
    rec.label = static_cast<int>(label);
    rec.gold = parse_double(vals[3], r.line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

MicroWorld MicroWorld::random(std::uint64_t seed) {
  Rng pick(mix64(seed, kWorldSalt));
  int alphabet = 2 + pick.uniform_int(3);
  int horizon = 2 + pick.uniform_int(3);
  return random(seed, alphabet, horizon);
}

MicroWorld MicroWorld::random(std::uint64_t seed, int alphabet, int horizon) {
  if (alphabet < 2 || alphabet > 4) throw ConfigError("alphabet must be in [2,4]");
  if (horizon < 2 || horizon > 4) throw ConfigError("horizon must be in [2,4]");
  MicroWorld w;
  w.alphabet = alphabet;
  w.horizon = horizon;
  Rng rng(mix64(mix64(seed, kWorldSalt), 1));

  std::vector<std::vector<int>> level = {{}};
  for (int depth = 0; depth < horizon; ++depth) {
    std::vector<std::vector<int>> next;
    for (const std::vector<int>& prefix : level) {
      std::vector<double> row(alphabet);
      double sum = 0.0;
      for (double& x : row) {
        x = rng.uniform(0.05, 1.0);  // bounded away from zero so every branch matters
        sum += x;
      }
      double partial = 0.0;
      for (int a = 0; a + 1 < alphabet; ++a) {
        row[a] /= sum;
        partial += row[a];
      }
      row[alphabet - 1] = 1.0 - partial;  // exact complement, row sums to 1 in doubles
      w.transitions[prefix] = row;
      for (int a = 0; a < alphabet; ++a) {
        std::vector<int> child = prefix;
        child.push_back(a);
        next.push_back(std::move(child));
      }
    }
    level = std::move(next);
  }
  for (const std::vector<int>& full : level) w.terminal[full] = rng.uniform01();
  return w;
}

void MicroWorld::validate() const {
  if (alphabet < 2) throw ConfigError("alphabet must be >= 2");
  if (horizon < 2) throw ConfigError("horizon must be >= 2");
  std::size_t want_trans = 0, width = 1;
  for (int d = 0; d < horizon; ++d) {
    want_trans += width;
    width *= alphabet;
  }
  if (transitions.size() != want_trans) throw InvalidInputError("transition table has wrong size");
  if (terminal.size() != width) throw InvalidInputError("terminal table has wrong size");
  for (const auto& [prefix, row] : transitions) {
    if (static_cast<int>(row.size()) != alphabet) throw InvalidInputError("transition row has wrong width");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("transition probability out of [0,1]");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-12) throw InvalidInputError("transition row does not sum to 1");
    (void)prefix;
  }
  for (const auto& [full, r] : terminal) {
    if (static_cast<int>(full.size()) != horizon) throw InvalidInputError("terminal key has wrong length");
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidInputError("terminal score out of [0,1]");
  }
}

double true_prefix_reward(const MicroWorld& w, const std::vector<int>& prefix) {
  if (static_cast<int>(prefix.size()) > w.horizon) throw DomainError("prefix longer than horizon");
  if (static_cast<int>(prefix.size()) == w.horizon) {
    auto it = w.terminal.find(prefix);
    if (it == w.terminal.end()) throw DomainError("unknown terminal sequence");
    return it->second;
  }
  auto it = w.transitions.find(prefix);
  if (it == w.transitions.end()) throw DomainError("unknown prefix");
  const std::vector<double>& row = it->second;
  double total = 0.0;
  std::vector<int> child = prefix;
  child.push_back(0);
  for (int a = 0; a < w.alphabet; ++a) {
    child.back() = a;
    total += row[a] * true_prefix_reward(w, child);
  }
  return total;
}

double prefix_reward_flat(const MicroWorld& w, const std::vector<int>& prefix) {
  int len = static_cast<int>(prefix.size());
  if (len > w.horizon) throw DomainError("prefix longer than horizon");
  int tail = w.horizon - len;
  if (tail == 0) {
    auto it = w.terminal.find(prefix);
    if (it == w.terminal.end()) throw DomainError("unknown terminal sequence");
    return it->second;
  }
  std::vector<int> digits(tail, 0);
  double total = 0.0;
  for (;;) {
    std::vector<int> seq = prefix;
    double p = 1.0;
    for (int j = 0; j < tail; ++j) {
      auto it = w.transitions.find(seq);
      if (it == w.transitions.end()) throw DomainError("unknown prefix");
      p *= it->second[digits[j]];
      seq.push_back(digits[j]);
    }
    auto t = w.terminal.find(seq);
    if (t == w.terminal.end()) throw DomainError("unknown terminal sequence");
    total += p * t->second;
    int j = tail - 1;
    while (j >= 0 && digits[j] == w.alphabet - 1) digits[j--] = 0;
    if (j < 0) break;
    ++digits[j];
  }
  return total;
}

namespace {

// All strings of a given length over the world's alphabet.
std::vector<std::vector<int>> all_strings(const MicroWorld& w, int length) {
  std::vector<std::vector<int>> out = {{}};
  for (int d = 0; d < length; ++d) {
    std::vector<std::vector<int>> next;
    next.reserve(out.size() * static_cast<size_t>(w.alphabet));
    for (const auto& s : out) {
      for (int a = 0; a < w.alphabet; ++a) {
        std::vector<int> t = s;
        t.push_back(a);
        next.push_back(std::move(t));
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

DecompReport verify_decomposition(const MicroWorld& w, int m, int n) {
  w.validate();
  if (!(1 <= m && m < n && n <= w.horizon)) throw InvalidInputError("need 1 <= m < n <= horizon");
  DecompReport rep;
  auto tails = all_strings(w, n - m);
  for (const std::vector<int>& prefix : all_strings(w, m)) {
    // Left side from the recursive oracle, right side assembled from the flat
    // oracle: agreement is a statement about two independent computations,
    // not an identity of one implementation with itself.
    double parent_rec = true_prefix_reward(w, prefix);
    double parent_flat = prefix_reward_flat(w, prefix);
    rep.max_oracle_gap = std::max(rep.max_oracle_gap, std::fabs(parent_rec - parent_flat));

    double expect = 0.0;
    for (const std::vector<int>& tail : tails) {
      std::vector<int> seq = prefix;
      double p = 1.0;
      for (int tok : tail) {
        p *= w.transitions.at(seq)[static_cast<size_t>(tok)];
        seq.push_back(tok);
      }
      double child_r = prefix_reward_flat(w, seq);
      expect += p * child_r;
      // Terminal scores live in [0,1], so shifting probability mass p onto one
      // continuation can move the expectation by at most 1 - p.
      double slack = std::fabs(child_r - parent_rec) - (1.0 - p);
      rep.max_bound_slack = std::max(rep.max_bound_slack, slack);
    }
    rep.max_residual = std::max(rep.max_residual, std::fabs(parent_rec - expect));
    ++rep.prefixes_checked;
  }
  return rep;
}

DecompReport verify_decomposition(const MicroWorld& w) {
  DecompReport rep;
  for (int m = 1; m < w.horizon; ++m) {
    for (int n = m + 1; n <= w.horizon; ++n) {
      DecompReport one = verify_decomposition(w, m, n);
      rep.max_residual = std::max(rep.max_residual, one.max_residual);
      rep.max_oracle_gap = std::max(rep.max_oracle_gap, one.max_oracle_gap);
      rep.max_bound_slack = std::max(rep.max_bound_slack, one.max_bound_slack);
      rep.prefixes_checked += one.prefixes_checked;
    }
  }
  return rep;
}

}  // namespace rmlab
