#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "exagree/agreement.hpp"
#include "exagree/attention_explain.hpp"
#include "exagree/attribution.hpp"
#include "exagree/model.hpp"
#include "exagree/synthetic.hpp"
#include "exagree/training.hpp"

namespace exagree {

struct DataPaths {
  std::string train, val, test;
};

struct ModelSpec {
  std::string kind = "transformer";
  TransformerConfig transformer;
  BiLstmConfig bilstm;
};

struct ExperimentConfig {
  bool pair_task = false;
  DataPaths data;
  ModelSpec model;
  TrainingConfig training;
  AttributionConfig attribution;
  AttentionExplainConfig attention;
  std::vector<std::string> methods = {"attn_rollout", "lime",      "int_grad",
                                      "deeplift",     "grad_shap", "deep_shap"};
  int explain_count = 500;
  int max_tokens = 240;
  AgreementOptions agreement;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "out";
  int heatmap_count = 3;
  bool include_specials = true;
  std::string target = "predicted";  // predicted | label
  unsigned threads = 0;              // 0 = hardware concurrency
  int vocab_min_count = 1;
  SyntheticTaskSpec synthetic;
  bool has_synthetic = false;

  /// Parses the JSON config document; unknown keys are rejected at every
  /// level.
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);
  std::string canonical_json() const;
  std::string config_hash() const;
  void validate() const;
};

/// Uniform sample of `n` distinct instance indices out of `split_size`,
/// fully determined by the seed; returned in ascending order.
std::vector<int> sample_instances(int split_size, int n, std::uint64_t seed);

std::unique_ptr<Model> build_model(const ExperimentConfig& cfg, const Vocabulary& vocab,
                                   std::uint64_t seed);

/// All method explanations for one instance. Stochastic methods receive
/// per-call seeds derived from (seed, instance id, method), so scheduling
/// cannot change results.
std::map<std::string, Explanation> explain_instance(const Model& model, const TokenSequence& seq,
                                                    const ExperimentConfig& cfg,
                                                    const BaselineSpec& deepshap_spec,
                                                    std::uint64_t seed, int instance_id);

/// Baseline sample set for deep_shap: the padding sequence plus
/// `deepshap_baselines` training instances drawn with the run seed.
BaselineSpec deepshap_baseline_spec(const Model& model, const std::vector<TokenSequence>& train_set,
                                    int n_baselines, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  History history;
  double test_accuracy = 0.0;
  std::vector<int> instance_ids;
  std::vector<std::map<std::string, Explanation>> explanations;  // aligned with instance_ids
};

struct ExperimentResult {
  AgreementMatrix matrix;
  std::vector<SeedOutcome> seeds;
  LoadStats train_stats, val_stats, test_stats;
  std::string output_dir;
};

struct LoadedData {
  std::vector<TokenSequence> train, val, test;
  LoadStats train_stats, val_stats, test_stats;
  Vocabulary vocab;
};

LoadedData load_experiment_data(const ExperimentConfig& cfg);

/// Trains one model per seed, explains sampled test instances with every
/// configured method, and aggregates per-instance correlations across all
/// seeds. Writes agreement_mean.csv, agreement_std.csv, explanations.jsonl,
/// manifest.json and heatmaps/ into the output directory; those files are
/// byte-identical across reruns with the same config and seeds.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct AblationResult {
  struct Variant {
    std::string activation;
    std::vector<double> accuracies;  // per seed
    double mean = 0.0;
    double stddev = 0.0;
  };
  std::string model_kind;
  Variant uniform, softmax;
};

/// Trains softmax- and uniform-attention variants per seed and reports mean
/// and std test accuracy (written to ablation.csv).
AblationResult ablate_experiment(const ExperimentConfig& cfg);

// Stage entry points shared with the CLI.
std::vector<SeedOutcome> explain_stage(const ExperimentConfig& cfg, const LoadedData& data,
                                       const std::vector<Model*>& models);
void write_explanations_jsonl(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& seeds,
                              const std::string& path);
std::vector<SeedOutcome> read_explanations_jsonl(const std::string& path);
AgreementMatrix aggregate_matrix(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& seeds);
void write_agreement_csvs(const AgreementMatrix& matrix, const std::string& dir);
void write_heatmaps(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& seeds,
                    const std::string& dir);

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace exagree
