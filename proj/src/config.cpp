#include "rmlab/config.hpp"

#include <charconv>
#include <fstream>

#include "rmlab/errors.hpp"
#include "rmlab/textio.hpp"

namespace rmlab {

void LabConfig::validate() const {
  task.validate();
  train.validate();
  eval_agg.validate();
  if (model_dim < 1) throw ConfigError("model.dim must be at least 1");
  if (model_dropout < 0.0 || model_dropout >= 1.0) throw ConfigError("model.dropout must lie in [0, 1)");
  if (data_count < 1) throw ConfigError("data.count must be at least 1");
  if (data_eval_count < 1) throw ConfigError("data.eval_count must be at least 1");
  if (bon_candidates < 1) throw ConfigError("bon.candidates must be at least 1");
  if (bon_prompts < 1) throw ConfigError("bon.prompts must be at least 1");
  if (dpo_prompts < 1) throw ConfigError("dpo.prompts must be at least 1");
  if (world_count < 1) throw ConfigError("world.count must be at least 1");
}

namespace {

double as_double(const std::string& key, const std::string& value) {
  try {
    return parse_double(value, 0);
  } catch (const ParseError&) {
    throw ConfigError("bad numeric value for " + key + ": '" + value + "'");
  }
}

int as_int(const std::string& key, const std::string& value) {
  try {
    return static_cast<int>(parse_long(value, 0));
  } catch (const ParseError&) {
    throw ConfigError("bad integer value for " + key + ": '" + value + "'");
  }
}

std::uint64_t as_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("bad seed value for " + key + ": '" + value + "'");
  }
  return v;
}

bool as_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + value + "' (use 0/1/true/false)");
}

std::vector<int> as_ids(const std::string& key, const std::string& value) {
  try {
    return parse_ids(value, 0);
  } catch (const ParseError&) {
    throw ConfigError("bad id list for " + key + ": '" + value + "'");
  }
}

std::string fmt_bool(bool v) { return v ? "1" : "0"; }

}  // namespace

void apply_config_kv(LabConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "task.vocab_size") cfg.task.vocab_size = as_int(key, value);
  else if (key == "task.max_prompt_len") cfg.task.max_prompt_len = as_int(key, value);
  else if (key == "task.max_response_len") cfg.task.max_response_len = as_int(key, value);
  else if (key == "task.good_tokens") cfg.task.good_tokens = as_ids(key, value);
  else if (key == "task.bad_tokens") cfg.task.bad_tokens = as_ids(key, value);
  else if (key == "task.good_weight") cfg.task.good_weight = as_double(key, value);
  else if (key == "task.bad_weight") cfg.task.bad_weight = as_double(key, value);
  else if (key == "task.context_bonus") cfg.task.context_bonus = as_double(key, value);
  else if (key == "task.squash_scale") cfg.task.squash_scale = as_double(key, value);
  else if (key == "task.continue_prob") cfg.task.continue_prob = as_double(key, value);
  else if (key == "task.good_bias") cfg.task.good_bias = as_double(key, value);
  else if (key == "task.good_mix") cfg.task.good_mix = as_double(key, value);
  else if (key == "task.length_bias") cfg.task.length_bias = as_double(key, value);
  else if (key == "task.label_noise") cfg.task.label_noise = as_double(key, value);
  else if (key == "model.dim") cfg.model_dim = as_int(key, value);
  else if (key == "model.dropout") cfg.model_dropout = as_double(key, value);
  else if (key == "model.gen_head") cfg.model_gen_head = as_bool(key, value);
  else if (key == "train.mode") cfg.train.mode = parse_train_mode(value);
  else if (key == "train.alpha") cfg.train.alpha = as_double(key, value);
  else if (key == "train.lr") cfg.train.lr = as_double(key, value);
  else if (key == "train.epochs") cfg.train.epochs = as_int(key, value);
  else if (key == "train.batch_size") cfg.train.batch_size = as_int(key, value);
  else if (key == "train.seed") cfg.train.seed = as_u64(key, value);
  else if (key == "train.optimizer") cfg.train.optimizer = parse_optimizer(value);
  else if (key == "train.clip_norm") cfg.train.clip_norm = as_double(key, value);
  else if (key == "train.length_norm") cfg.train.length_norm = as_bool(key, value);
  else if (key == "train.aux_sft") cfg.train.aux_sft = as_bool(key, value);
  else if (key == "train.sft_weight") cfg.train.sft_weight = as_double(key, value);
  else if (key == "train.eval_decay") cfg.train.eval_decay = as_double(key, value);
  else if (key == "train.dpo_beta") cfg.train.dpo_beta = as_double(key, value);
  else if (key == "train.dpo_samples") cfg.train.dpo_samples = as_int(key, value);
  else if (key == "train.sample_temperature") cfg.train.sample_temperature = as_double(key, value);
  else if (key == "train.sample_top_p") cfg.train.sample_top_p = as_double(key, value);
  else if (key == "train.max_sample_len") cfg.train.max_sample_len = as_int(key, value);
  else if (key == "eval.aggregation") cfg.eval_agg.kind = parse_aggregation(value);
  else if (key == "eval.decay") cfg.eval_agg.decay = as_double(key, value);
  else if (key == "eval.normalized") cfg.eval_agg.normalized = as_bool(key, value);
  else if (key == "data.count") cfg.data_count = as_int(key, value);
  else if (key == "data.eval_count") cfg.data_eval_count = as_int(key, value);
  else if (key == "bon.candidates") cfg.bon_candidates = as_int(key, value);
  else if (key == "bon.prompts") cfg.bon_prompts = as_int(key, value);
  else if (key == "dpo.prompts") cfg.dpo_prompts = as_int(key, value);
  else if (key == "world.alphabet") cfg.world_alphabet = as_int(key, value);
  else if (key == "world.horizon") cfg.world_horizon = as_int(key, value);
  else if (key == "world.count") cfg.world_count = as_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void load_config_file(LabConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " has no '=': '" + t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    try {
      apply_config_kv(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (config line " + std::to_string(line_no) + ")");
    }
  }
}

std::string config_echo(const LabConfig& cfg) {
  std::string s;
  auto put = [&s](const std::string& key, const std::string& value) { s += key + " = " + value + "\n"; };
  put("task.vocab_size", std::to_string(cfg.task.vocab_size));
  put("task.max_prompt_len", std::to_string(cfg.task.max_prompt_len));
  put("task.max_response_len", std::to_string(cfg.task.max_response_len));
  put("task.good_tokens", fmt_ids(cfg.task.good_tokens));
  put("task.bad_tokens", fmt_ids(cfg.task.bad_tokens));
  put("task.good_weight", fmt_double(cfg.task.good_weight));
  put("task.bad_weight", fmt_double(cfg.task.bad_weight));
  put("task.context_bonus", fmt_double(cfg.task.context_bonus));
  put("task.squash_scale", fmt_double(cfg.task.squash_scale));
  put("task.continue_prob", fmt_double(cfg.task.continue_prob));
  put("task.good_bias", fmt_double(cfg.task.good_bias));
  put("task.good_mix", fmt_double(cfg.task.good_mix));
  put("task.length_bias", fmt_double(cfg.task.length_bias));
  put("task.label_noise", fmt_double(cfg.task.label_noise));
  put("model.dim", std::to_string(cfg.model_dim));
  put("model.dropout", fmt_double(cfg.model_dropout));
  put("model.gen_head", fmt_bool(cfg.model_gen_head));
  put("train.mode", train_mode_name(cfg.train.mode));
  put("train.alpha", fmt_double(cfg.train.alpha));
  put("train.lr", fmt_double(cfg.train.lr));
  put("train.epochs", std::to_string(cfg.train.epochs));
  put("train.batch_size", std::to_string(cfg.train.batch_size));
  put("train.seed", std::to_string(cfg.train.seed));
  put("train.optimizer", optimizer_name(cfg.train.optimizer));
  put("train.clip_norm", fmt_double(cfg.train.clip_norm));
  put("train.length_norm", fmt_bool(cfg.train.length_norm));
  put("train.aux_sft", fmt_bool(cfg.train.aux_sft));
  put("train.sft_weight", fmt_double(cfg.train.sft_weight));
  put("train.eval_decay", fmt_double(cfg.train.eval_decay));
  put("train.dpo_beta", fmt_double(cfg.train.dpo_beta));
  put("train.dpo_samples", std::to_string(cfg.train.dpo_samples));
  put("train.sample_temperature", fmt_double(cfg.train.sample_temperature));
  put("train.sample_top_p", fmt_double(cfg.train.sample_top_p));
  put("train.max_sample_len", std::to_string(cfg.train.max_sample_len));
  put("eval.aggregation", aggregation_name(cfg.eval_agg.kind));
  put("eval.decay", fmt_double(cfg.eval_agg.decay));
  put("eval.normalized", fmt_bool(cfg.eval_agg.normalized));
  put("data.count", std::to_string(cfg.data_count));
  put("data.eval_count", std::to_string(cfg.data_eval_count));
  put("bon.candidates", std::to_string(cfg.bon_candidates));
  put("bon.prompts", std::to_string(cfg.bon_prompts));
  put("dpo.prompts", std::to_string(cfg.dpo_prompts));
  put("world.alphabet", std::to_string(cfg.world_alphabet));
  put("world.horizon", std::to_string(cfg.world_horizon));
  put("world.count", std::to_string(cfg.world_count));
  return s;
}

std::string config_schema() {
  LabConfig defaults;
  return "config keys (flat key = value lines, '#' comments; --set key=value overrides, later wins):\n" +
         config_echo(defaults);
}

}  // namespace rmlab
