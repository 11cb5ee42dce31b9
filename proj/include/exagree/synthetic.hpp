#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exagree/data.hpp"

namespace exagree {

struct TriggerToken {
  std::string token;
  double weight = 0.0;
};

/// Generator spec for the controlled task with a known token ranking:
/// label = sign of the summed weights of the trigger tokens present, every
/// other position is a noise token with no effect on the label.
struct SyntheticTaskSpec {
  bool pair_task = false;
  int vocab_size = 54;  // trigger types + noise types
  std::vector<TriggerToken> triggers = {{"alpha", 4.0},  {"bravo", -3.2}, {"delta", 2.5},
                                        {"echo", -1.8},  {"gamma", 1.2},  {"kappa", -0.7}};
  double trigger_prob = 0.4;  // independent inclusion probability per trigger
  int min_len = 5;            // per sequence (per side for pair tasks)
  int max_len = 9;
  int train_size = 1200;
  int val_size = 300;
  int test_size = 600;
  bool allow_tied_weights = false;

  int noise_types() const { return vocab_size - static_cast<int>(triggers.size()); }
  void validate() const;
};

/// One generated instance with its reference importance scores: |weight| for
/// trigger positions, 0 for noise, which orders triggers by |weight|
/// descending with all noise tokens tied last.
struct SyntheticInstance {
  TokenSequence seq;
  std::vector<double> reference;
};

struct SyntheticDataset {
  std::vector<SyntheticInstance> train, val, test;
};

SyntheticDataset synth_generate(const SyntheticTaskSpec& spec, std::uint64_t seed);

std::vector<TokenSequence> strip_references(const std::vector<SyntheticInstance>& instances);

/// Writes train/val/test.jsonl plus ground_truth.jsonl (per-split reference
/// scores) into `dir`.
void write_synthetic_files(const SyntheticDataset& data, const std::string& dir);

/// Re-applies the label rule to a generated instance; used to verify emitted
/// files independently of the generator's bookkeeping.
int synthetic_label_of(const SyntheticTaskSpec& spec, const std::vector<std::string>& tokens);

}  // namespace exagree
