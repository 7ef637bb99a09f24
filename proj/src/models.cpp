#include "rmlab/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rmlab/errors.hpp"
#include "rmlab/rng.hpp"

namespace rmlab {

namespace {

constexpr double kInitStd = 0.08;

Array randn(Shape s, Rng& rng, double std) {
  Array a(std::move(s));
  for (std::int64_t i = 0; i < a.size(); ++i) a[i] = rng.normal(0.0, std);
  return a;
}

// tanh assembled from the primitive set: 2*sigmoid(2x) - 1.
Var tanh_node(const Var& x) {
  return sub(mul(constant(2.0), sigmoid(mul(constant(2.0), x))), constant(1.0));
}

Var onehot_row(int id, int v) {
  Array a(Shape{1, v});
  a[id] = 1.0;
  return constant(std::move(a));
}

Var onehot_col(int id, int v) {
  Array a(Shape{v, 1});
  a[id] = 1.0;
  return constant(std::move(a));
}

struct BackboneRefs {
  Var embed, wz, uz, bz, wr, ur, br, wh, uh, bh;
  int dim;
  int vocab;
};

BackboneRefs backbone_refs(const ParameterSet& p, int dim, int vocab) {
  return BackboneRefs{p.at("embed"),  p.at("gru_wz"), p.at("gru_uz"), p.at("gru_bz"), p.at("gru_wr"),
                      p.at("gru_ur"), p.at("gru_br"), p.at("gru_wh"), p.at("gru_uh"), p.at("gru_bh"),
                      dim,            vocab};
}

Var gru_step(const BackboneRefs& b, const Var& h, const Var& x) {
  Var z = sigmoid(add(add(matmul(x, b.wz), matmul(h, b.uz)), b.bz));
  Var r = sigmoid(add(add(matmul(x, b.wr), matmul(h, b.ur)), b.br));
  Var hc = tanh_node(add(add(matmul(x, b.wh), matmul(mul(r, h), b.uh)), b.bh));
  return add(mul(sub(constant(1.0), z), h), mul(z, hc));
}

// h_i = state after consuming stream[i]; stream[0] is BOS.
std::vector<Var> backbone_states(const BackboneRefs& b, const std::vector<int>& stream) {
  std::vector<Var> states;
  states.reserve(stream.size());
  Var h = constant(Array(Shape{1, b.dim}));
  for (int tok : stream) {
    Var x = matmul(onehot_row(tok, b.vocab), b.embed);
    h = gru_step(b, h, x);
    states.push_back(h);
  }
  return states;
}

std::vector<int> full_stream(const Vocab& v, const std::vector<int>& prompt, const std::vector<int>& response) {
  std::vector<int> stream;
  stream.reserve(1 + prompt.size() + response.size());
  stream.push_back(v.bos);
  stream.insert(stream.end(), prompt.begin(), prompt.end());
  stream.insert(stream.end(), response.begin(), response.end());
  return stream;
}

void init_backbone(ParameterSet& p, const Vocab& v, int dim, Rng& rng) {
  p.add("embed", parameter(randn({v.size, dim}, rng, kInitStd)));
  p.add("gru_wz", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_uz", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_bz", parameter(Array(Shape{1, dim})));
  p.add("gru_wr", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_ur", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_br", parameter(Array(Shape{1, dim})));
  p.add("gru_wh", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_uh", parameter(randn({dim, dim}, rng, kInitStd)));
  p.add("gru_bh", parameter(Array(Shape{1, dim})));
}

// Deterministic inverted-dropout mask for one position.
Var dropout_mask(int dim, double rate, std::uint64_t seed, int position) {
  Rng rng(mix64(seed, static_cast<std::uint64_t>(position) + 0x5eedu));
  Array m(Shape{1, dim});
  double scale = 1.0 / (1.0 - rate);
  for (int i = 0; i < dim; ++i) m[i] = rng.uniform01() < rate ? 0.0 : scale;
  return constant(std::move(m));
}

Var pick_logprob(const Var& state, const Var& w, const Var& b, int token, int vocab) {
  Var logits = add(matmul(state, w), b);
  Var ls = log_softmax(logits, 1);
  return sum(matmul(ls, onehot_col(token, vocab)));
}

Var head_logit(const Var& state, const Var& w, const Var& b) { return sum(add(matmul(state, w), b)); }

void write_double_hex(std::string& out, double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
  out.append(buf, res.ptr);
}

double read_double_hex(const std::string& tok, int line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError("bad hex float '" + tok + "'", line);
  return v;
}

}  // namespace

void Vocab::validate() const {
  if (size < 3) throw ConfigError("vocab size must be >= 3, have " + std::to_string(size));
  auto in_range = [&](int id) { return id >= 0 && id < size; };
  if (!in_range(pad) || !in_range(bos) || !in_range(eos))
    throw ConfigError("reserved token ids must lie inside [0, size)");
  if (pad == bos || pad == eos || bos == eos) throw ConfigError("reserved token ids must be distinct");
}

std::string Vocab::token_name(int id) const {
  if (id == pad) return "<pad>";
  if (id == bos) return "<bos>";
  if (id == eos) return "<eos>";
  if (id < 0 || id >= size) throw TokenError("token id " + std::to_string(id) + " outside vocab");
  // compact letter names for content tokens: a, b, c, ...
  int k = id;
  std::string name;
  name.push_back(static_cast<char>('a' + k % 26));
  if (k >= 26) name += std::to_string(k / 26);
  return name;
}

std::vector<int> effective_response(const Vocab& v, const TokenSeq& seq) {
  for (int id : seq.prompt) {
    if (id < 0 || id >= v.size) throw TokenError("prompt token id " + std::to_string(id) + " outside vocab");
    if (id == v.pad) throw TokenError("PAD inside prompt");
  }
  size_t end = seq.response.size();
  while (end > 0 && seq.response[end - 1] == v.pad) --end;
  if (end == 0) throw TokenError("empty response");
  std::vector<int> out(seq.response.begin(), seq.response.begin() + static_cast<long>(end));
  for (int id : out) {
    if (id < 0 || id >= v.size) throw TokenError("response token id " + std::to_string(id) + " outside vocab");
    if (id == v.pad) throw TokenError("PAD interior to response");
  }
  return out;
}

GeneratorModel GeneratorModel::init(const Vocab& vocab, int dim, std::uint64_t seed) {
  vocab.validate();
  if (dim < 1) throw ConfigError("model dim must be positive");
  GeneratorModel g;
  g.vocab = vocab;
  g.dim = dim;
  Rng rng(mix64(seed, 0x6e0));
  init_backbone(g.params, vocab, dim, rng);
  g.params.add("out_w", parameter(randn({dim, vocab.size}, rng, kInitStd)));
  g.params.add("out_b", parameter(Array(Shape{1, vocab.size})));
  return g;
}

RewardModel RewardModel::init(const Vocab& vocab, int dim, double dropout, bool gen_head, std::uint64_t seed) {
  vocab.validate();
  if (dim < 1) throw ConfigError("model dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
  RewardModel r;
  r.vocab = vocab;
  r.dim = dim;
  r.dropout = dropout;
  r.has_gen_head = gen_head;
  Rng rng(mix64(seed, 0x4e0));
  init_backbone(r.params, vocab, dim, rng);
  r.params.add("head_w", parameter(randn({dim, 1}, rng, kInitStd)));
  r.params.add("head_b", parameter(Array(Shape{1, 1})));
  if (gen_head) {
    r.params.add("gen_w", parameter(randn({dim, vocab.size}, rng, kInitStd)));
    r.params.add("gen_b", parameter(Array(Shape{1, vocab.size})));
  }
  return r;
}

std::vector<Var> generator_logprob_nodes(const GeneratorModel& g, const TokenSeq& seq) {
  auto resp = effective_response(g.vocab, seq);
  auto refs = backbone_refs(g.params, g.dim, g.vocab.size);
  auto states = backbone_states(refs, full_stream(g.vocab, seq.prompt, resp));
  const size_t p = seq.prompt.size();
  const Var& w = g.params.at("out_w");
  const Var& b = g.params.at("out_b");
  std::vector<Var> out;
  out.reserve(resp.size());
  for (size_t k = 1; k <= resp.size(); ++k)
    out.push_back(pick_logprob(states[p + k - 1], w, b, resp[k - 1], g.vocab.size));
  return out;
}

StepLogProbs generator_step_logprobs(const GeneratorModel& g, const TokenSeq& seq) {
  auto nodes = generator_logprob_nodes(g, seq);
  StepLogProbs out;
  out.reserve(nodes.size());
  for (const auto& n : nodes) out.push_back(n->item());
  return out;
}

std::vector<Array> generator_step_distributions(const GeneratorModel& g, const TokenSeq& seq) {
  auto resp = effective_response(g.vocab, seq);
  auto refs = backbone_refs(g.params, g.dim, g.vocab.size);
  auto states = backbone_states(refs, full_stream(g.vocab, seq.prompt, resp));
  const size_t p = seq.prompt.size();
  const Var& w = g.params.at("out_w");
  const Var& b = g.params.at("out_b");
  std::vector<Array> rows;
  rows.reserve(resp.size());
  for (size_t k = 1; k <= resp.size(); ++k)
    rows.push_back(log_softmax(add(matmul(states[p + k - 1], w), b), 1)->value);
  return rows;
}

TokenSeq sample_response(const GeneratorModel& g, const std::vector<int>& prompt, double temperature, double top_p,
                         int max_len, std::uint64_t seed) {
  if (temperature < 0.0) throw InvalidInputError("temperature must be >= 0 (0 selects greedy decoding)");
  if (top_p <= 0.0 || top_p > 1.0) throw InvalidInputError("top_p must lie in (0, 1]");
  if (max_len < 1) throw InvalidInputError("max_len must be >= 1");

  auto refs = backbone_refs(g.params, g.dim, g.vocab.size);
  const Var& w = g.params.at("out_w");
  const Var& b = g.params.at("out_b");
  const int v = g.vocab.size;

  Rng rng(mix64(seed, 0x5a3));
  TokenSeq out;
  out.prompt = prompt;

  Var h = constant(Array(Shape{1, refs.dim}));
  auto consume = [&](int tok) { h = stop_gradient(gru_step(refs, h, matmul(onehot_row(tok, v), refs.embed))); };
  consume(g.vocab.bos);
  for (int tok : prompt) consume(tok);

  while (static_cast<int>(out.response.size()) < max_len) {
    Array logits = add(matmul(h, w), b)->value;
    int chosen;
    if (temperature == 0.0) {
      // greedy over allowed ids, ties to lowest id
      chosen = -1;
      for (int i = 0; i < v; ++i) {
        if (i == g.vocab.pad || i == g.vocab.bos) continue;
        if (chosen < 0 || logits[i] > logits[chosen]) chosen = i;
      }
    } else {
      double mx = -1e300;
      for (int i = 0; i < v; ++i)
        if (i != g.vocab.pad && i != g.vocab.bos) mx = std::max(mx, logits[i]);
      std::vector<double> p(static_cast<size_t>(v), 0.0);
      double z = 0.0;
      for (int i = 0; i < v; ++i) {
        if (i == g.vocab.pad || i == g.vocab.bos) continue;
        p[static_cast<size_t>(i)] = std::exp((logits[i] - mx) / temperature);
        z += p[static_cast<size_t>(i)];
      }
      for (auto& x : p) x /= z;
      // nucleus: smallest prefix of the sorted distribution reaching top_p
      std::vector<int> ids;
      for (int i = 0; i < v; ++i)
        if (p[static_cast<size_t>(i)] > 0.0) ids.push_back(i);
      std::sort(ids.begin(), ids.end(), [&](int x, int y) {
        if (p[static_cast<size_t>(x)] != p[static_cast<size_t>(y)]) return p[static_cast<size_t>(x)] > p[static_cast<size_t>(y)];
        return x < y;
      });
      double cum = 0.0;
      size_t keep = ids.size();
      for (size_t i = 0; i < ids.size(); ++i) {
        cum += p[static_cast<size_t>(ids[i])];
        if (cum >= top_p - 1e-12) {
          keep = i + 1;
          break;
        }
      }
      ids.resize(keep);
      double zk = 0.0;
      for (int id : ids) zk += p[static_cast<size_t>(id)];
      double u = rng.uniform01() * zk;
      chosen = ids.back();
      double acc = 0.0;
      for (int id : ids) {
        acc += p[static_cast<size_t>(id)];
        if (u < acc) {
          chosen = id;
          break;
        }
      }
    }
    out.response.push_back(chosen);
    if (chosen == g.vocab.eos) break;
    consume(chosen);
  }
  return out;
}

std::vector<Var> prefix_reward_nodes(const RewardModel& r, const TokenSeq& seq, bool train_mode, std::uint64_t seed) {
  auto resp = effective_response(r.vocab, seq);
  auto refs = backbone_refs(r.params, r.dim, r.vocab.size);
  auto states = backbone_states(refs, full_stream(r.vocab, seq.prompt, resp));
  const size_t p = seq.prompt.size();
  const Var& w = r.params.at("head_w");
  const Var& b = r.params.at("head_b");
  std::vector<Var> out;
  out.reserve(resp.size());
  for (size_t k = 1; k <= resp.size(); ++k) {
    Var h = states[p + k];
    if (train_mode && r.dropout > 0.0) h = mul(h, dropout_mask(r.dim, r.dropout, seed, static_cast<int>(k)));
    out.push_back(head_logit(h, w, b));
  }
  return out;
}

PrefixRewardVector prefix_rewards(const RewardModel& r, const TokenSeq& seq, bool train_mode, std::uint64_t seed) {
  auto nodes = prefix_reward_nodes(r, seq, train_mode, seed);
  PrefixRewardVector out;
  out.reserve(nodes.size());
  for (const auto& n : nodes) out.push_back(n->item());
  return out;
}

double outcome_reward(const RewardModel& r, const TokenSeq& seq) { return prefix_rewards(r, seq).back(); }

SharedForward shared_backbone_forward(const RewardModel& r, const TokenSeq& seq, bool train_mode, std::uint64_t seed) {
  if (!r.has_gen_head) throw InvalidInputError("shared_backbone_forward requires a generation head");
  auto resp = effective_response(r.vocab, seq);
  auto refs = backbone_refs(r.params, r.dim, r.vocab.size);
  auto states = backbone_states(refs, full_stream(r.vocab, seq.prompt, resp));
  const size_t p = seq.prompt.size();
  const Var& hw = r.params.at("head_w");
  const Var& hb = r.params.at("head_b");
  const Var& gw = r.params.at("gen_w");
  const Var& gb = r.params.at("gen_b");

  SharedForward out;
  out.step_logprobs.reserve(resp.size());
  out.prefix_rewards.reserve(resp.size());
  for (size_t k = 1; k <= resp.size(); ++k) {
    out.step_logprobs.push_back(
        pick_logprob(stop_gradient(states[p + k - 1]), gw, gb, resp[k - 1], r.vocab.size));
    Var h = states[p + k];
    if (train_mode && r.dropout > 0.0) h = mul(h, dropout_mask(r.dim, r.dropout, seed, static_cast<int>(k)));
    out.prefix_rewards.push_back(head_logit(h, hw, hb));
  }
  return out;
}

std::vector<Var> aux_gen_logprob_nodes(const RewardModel& r, const TokenSeq& seq) {
  if (!r.has_gen_head) throw InvalidInputError("aux_gen_logprob_nodes requires a generation head");
  auto resp = effective_response(r.vocab, seq);
  auto refs = backbone_refs(r.params, r.dim, r.vocab.size);
  auto states = backbone_states(refs, full_stream(r.vocab, seq.prompt, resp));
  const size_t p = seq.prompt.size();
  const Var& gw = r.params.at("gen_w");
  const Var& gb = r.params.at("gen_b");
  std::vector<Var> out;
  out.reserve(resp.size());
  for (size_t k = 1; k <= resp.size(); ++k)
    out.push_back(pick_logprob(states[p + k - 1], gw, gb, resp[k - 1], r.vocab.size));
  return out;
}

namespace {

void write_params(std::ostream& os, const ParameterSet& params) {
  os << "params " << params.size() << "\n";
  for (const auto& [name, var] : params) {
    const Array& a = var->value;
    os << "param " << name << " " << a.rank();
    for (int d : a.shape()) os << " " << d;
    os << "\n";
    std::string line;
    for (std::int64_t i = 0; i < a.size(); ++i) {
      if (i) line.push_back(' ');
      write_double_hex(line, a[i]);
    }
    os << line << "\n";
  }
}

struct CkptReader {
  std::ifstream in;
  int line_no = 0;
  explicit CkptReader(const std::string& path) : in(path) {
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  }
  std::string next_line() {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("unexpected end of checkpoint", line_no + 1);
    ++line_no;
    return line;
  }
};

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

int parse_ckpt_int(const std::string& tok, int line) {
  int v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError("bad integer '" + tok + "'", line);
  return v;
}

void read_params(CkptReader& r, ParameterSet& params, size_t expected) {
  auto head = split_ws(r.next_line());
  if (head.size() != 2 || head[0] != "params") throw ParseError("expected 'params <n>'", r.line_no);
  size_t n = static_cast<size_t>(parse_ckpt_int(head[1], r.line_no));
  if (n != expected) throw ParseError("parameter count mismatch", r.line_no);
  for (size_t i = 0; i < n; ++i) {
    auto meta = split_ws(r.next_line());
    if (meta.size() < 3 || meta[0] != "param") throw ParseError("expected 'param <name> <rank> <dims...>'", r.line_no);
    const std::string& name = meta[1];
    int rank = parse_ckpt_int(meta[2], r.line_no);
    if (rank < 0 || static_cast<int>(meta.size()) != 3 + rank) throw ParseError("bad shape for '" + name + "'", r.line_no);
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(parse_ckpt_int(meta[3 + static_cast<size_t>(d)], r.line_no));
    auto vals = split_ws(r.next_line());
    if (static_cast<std::int64_t>(vals.size()) != numel(shape))
      throw ParseError("value count mismatch for '" + name + "'", r.line_no);
    if (!params.contains(name)) throw ParseError("unknown parameter '" + name + "'", r.line_no);
    const Var& var = params.at(name);
    if (var->value.shape() != shape) throw ParseError("shape mismatch for '" + name + "'", r.line_no);
    for (std::int64_t j = 0; j < var->value.size(); ++j)
      var->value[j] = read_double_hex(vals[static_cast<size_t>(j)], r.line_no);
  }
}

void check_header(CkptReader& r) {
  std::string header = r.next_line();
  if (header.rfind("rmlab-ckpt", 0) != 0) throw ParseError("not a checkpoint file", r.line_no);
  if (header != "rmlab-ckpt v1") throw VersionError("unsupported checkpoint version '" + header + "'");
}

Vocab read_vocab_line(CkptReader& r) {
  auto toks = split_ws(r.next_line());
  if (toks.size() != 5 || toks[0] != "vocab") throw ParseError("expected 'vocab <size> <bos> <eos> <pad>'", r.line_no);
  Vocab v;
  v.size = parse_ckpt_int(toks[1], r.line_no);
  v.bos = parse_ckpt_int(toks[2], r.line_no);
  v.eos = parse_ckpt_int(toks[3], r.line_no);
  v.pad = parse_ckpt_int(toks[4], r.line_no);
  v.validate();
  return v;
}

int read_dim_line(CkptReader& r) {
  auto toks = split_ws(r.next_line());
  if (toks.size() != 2 || toks[0] != "dim") throw ParseError("expected 'dim <d>'", r.line_no);
  return parse_ckpt_int(toks[1], r.line_no);
}

}  // namespace

void save_checkpoint(const GeneratorModel& g, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os << "rmlab-ckpt v1\nkind generator\n";
  os << "vocab " << g.vocab.size << " " << g.vocab.bos << " " << g.vocab.eos << " " << g.vocab.pad << "\n";
  os << "dim " << g.dim << "\n";
  write_params(os, g.params);
}

void save_checkpoint(const RewardModel& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint '" + path + "'");
  os << "rmlab-ckpt v1\nkind reward\n";
  os << "vocab " << r.vocab.size << " " << r.vocab.bos << " " << r.vocab.eos << " " << r.vocab.pad << "\n";
  os << "dim " << r.dim << "\n";
  std::string drop;
  write_double_hex(drop, r.dropout);
  os << "dropout " << drop << "\n";
  os << "gen_head " << (r.has_gen_head ? 1 : 0) << "\n";
  write_params(os, r.params);
}

std::string checkpoint_kind(const std::string& path) {
  CkptReader r(path);
  check_header(r);
  auto toks = split_ws(r.next_line());
  if (toks.size() != 2 || toks[0] != "kind") throw ParseError("expected 'kind <generator|reward>'", r.line_no);
  return toks[1];
}

GeneratorModel load_generator(const std::string& path) {
  CkptReader r(path);
  check_header(r);
  auto kind = split_ws(r.next_line());
  if (kind.size() != 2 || kind[0] != "kind") throw ParseError("expected 'kind <generator|reward>'", r.line_no);
  if (kind[1] != "generator") throw InvalidInputError("checkpoint '" + path + "' is not a generator");
  Vocab v = read_vocab_line(r);
  int dim = read_dim_line(r);
  GeneratorModel g = GeneratorModel::init(v, dim, 0);
  read_params(r, g.params, g.params.size());
  return g;
}

RewardModel load_reward_model(const std::string& path) {
  CkptReader r(path);
  check_header(r);
  auto kind = split_ws(r.next_line());
  if (kind.size() != 2 || kind[0] != "kind") throw ParseError("expected 'kind <generator|reward>'", r.line_no);
  if (kind[1] != "reward") throw InvalidInputError("checkpoint '" + path + "' is not a reward model");
  Vocab v = read_vocab_line(r);
  int dim = read_dim_line(r);
  auto drop_toks = split_ws(r.next_line());
  if (drop_toks.size() != 2 || drop_toks[0] != "dropout") throw ParseError("expected 'dropout <v>'", r.line_no);
  double dropout = read_double_hex(drop_toks[1], r.line_no);
  auto gh_toks = split_ws(r.next_line());
  if (gh_toks.size() != 2 || gh_toks[0] != "gen_head") throw ParseError("expected 'gen_head <0|1>'", r.line_no);
  bool gen_head = gh_toks[1] == "1";
  RewardModel m = RewardModel::init(v, dim, dropout, gen_head, 0);
  read_params(r, m.params, m.params.size());
  return m;
}

std::string params_fingerprint(const ParameterSet& params) {
  std::string out;
  for (const auto& [name, var] : params) {
    out += name;
    out.push_back(':');
    for (std::int64_t i = 0; i < var->value.size(); ++i) {
      write_double_hex(out, var->value[i]);
      out.push_back(' ');
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace rmlab
