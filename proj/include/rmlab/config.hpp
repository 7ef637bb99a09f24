#pragma once

#include <string>
#include <vector>

#include "rmlab/synth.hpp"
#include "rmlab/train.hpp"
#include "rmlab/verify.hpp"

// Flat key=value configuration for the command-line tools. One file (plus
// later-wins --set overrides) covers the task spec, model shape, training
// hyperparameters, and evaluation settings. Unknown keys are rejected so a
// typo cannot silently fall back to a default.

namespace rmlab {

struct LabConfig {
  TaskSpec task;

  int model_dim = 16;
  double model_dropout = 0.1;
  bool model_gen_head = false;

  TrainConfig train;

  AggregationConfig eval_agg;

  int data_count = 256;       // training records per generated dataset
  int data_eval_count = 128;  // held-out records

  int bon_candidates = 8;
  int bon_prompts = 32;
  int dpo_prompts = 32;

  int world_alphabet = 3;
  int world_horizon = 3;
  int world_count = 100;

  void validate() const;  // delegates to the component validators
};

// Applies one key=value assignment. Unknown key or unparseable value is a
// ConfigError naming the key.
void apply_config_kv(LabConfig& cfg, const std::string& key, const std::string& value);

// Reads a flat key=value file ('#' comments and blank lines allowed) into an
// existing config, in file order.
void load_config_file(LabConfig& cfg, const std::string& path);

// Every known key with its current value, one per line, in schema order.
// Rerunning a command with this echo as its config file reproduces the run.
std::string config_echo(const LabConfig& cfg);

// Human-readable schema listing for usage errors.
std::string config_schema();

}  // namespace rmlab
