#include "exagree/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "exagree/checkpoint.hpp"
#include "exagree/heatmap.hpp"
#include "exagree/rng.hpp"
#include "exagree/util.hpp"

namespace exagree {

using nlohmann::json;

namespace {

namespace fs = std::filesystem;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + ctx);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string> kKnownMethods = {"attn",      "attn_rollout", "attn_flow",
                                                "input_x_grad", "int_grad",  "deeplift",
                                                "grad_shap", "deep_shap",    "lime",
                                                "loo",       "shapley"};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("config is not a JSON object");
  check_keys(j,
             {"task", "data", "model", "training", "attribution", "attention", "methods",
              "explain_count", "max_tokens", "correlation", "topk", "magnitude", "seeds",
              "output_dir", "heatmap_count", "include_specials", "target", "threads",
              "vocab_min_count", "synthetic"},
             "config");

  ExperimentConfig cfg;
  if (j.contains("task")) {
    const std::string task = j.at("task").get<std::string>();
    if (task != "single" && task != "pair") throw ConfigError("task must be \"single\" or \"pair\"");
    cfg.pair_task = task == "pair";
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"train", "val", "test"}, "data");
    get_if(d, "train", cfg.data.train);
    get_if(d, "val", cfg.data.val);
    get_if(d, "test", cfg.data.test);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"kind", "layers", "heads", "model_dim", "ff_dim", "max_len", "num_classes",
                "hidden_dim", "embedding_dim"},
               "model");
    get_if(m, "kind", cfg.model.kind);
    if (cfg.model.kind != "transformer" && cfg.model.kind != "bilstm") {
      throw ConfigError("model.kind must be \"transformer\" or \"bilstm\"");
    }
    get_if(m, "layers", cfg.model.transformer.layers);
    get_if(m, "heads", cfg.model.transformer.heads);
    get_if(m, "model_dim", cfg.model.transformer.model_dim);
    get_if(m, "ff_dim", cfg.model.transformer.ff_dim);
    get_if(m, "max_len", cfg.model.transformer.max_len);
    get_if(m, "num_classes", cfg.model.transformer.num_classes);
    get_if(m, "hidden_dim", cfg.model.bilstm.hidden_dim);
    get_if(m, "embedding_dim", cfg.model.bilstm.embedding_dim);
    get_if(m, "num_classes", cfg.model.bilstm.num_classes);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    check_keys(t,
               {"max_epochs", "patience", "learning_rate", "batch_size", "amsgrad",
                "attention_activation"},
               "training");
    get_if(t, "max_epochs", cfg.training.max_epochs);
    get_if(t, "patience", cfg.training.patience);
    get_if(t, "learning_rate", cfg.training.learning_rate);
    get_if(t, "batch_size", cfg.training.batch_size);
    get_if(t, "amsgrad", cfg.training.amsgrad);
    if (t.contains("attention_activation")) {
      const std::string a = t.at("attention_activation").get<std::string>();
      if (a != "softmax" && a != "uniform") {
        throw ConfigError("attention_activation must be \"softmax\" or \"uniform\"");
      }
      cfg.training.attention_activation =
          a == "uniform" ? AttentionActivation::uniform : AttentionActivation::softmax;
    }
  }
  if (j.contains("attribution")) {
    const json& a = j.at("attribution");
    check_keys(a,
               {"ig_steps", "gradshap_samples", "deepshap_baselines", "lime_samples",
                "lime_ridge_lambda", "lime_kernel_width", "shapley_max_tokens"},
               "attribution");
    get_if(a, "ig_steps", cfg.attribution.ig_steps);
    get_if(a, "gradshap_samples", cfg.attribution.gradshap_samples);
    get_if(a, "deepshap_baselines", cfg.attribution.deepshap_baselines);
    get_if(a, "lime_samples", cfg.attribution.lime_samples);
    get_if(a, "lime_ridge_lambda", cfg.attribution.lime_ridge_lambda);
    get_if(a, "lime_kernel_width", cfg.attribution.lime_kernel_width);
    get_if(a, "shapley_max_tokens", cfg.attribution.shapley_max_tokens);
  }
  if (j.contains("attention")) {
    const json& a = j.at("attention");
    check_keys(a, {"residual_alpha", "flow_budget", "pair_rank_per_sequence"}, "attention");
    get_if(a, "residual_alpha", cfg.attention.residual_alpha);
    get_if(a, "flow_budget", cfg.attention.flow_budget);
    get_if(a, "pair_rank_per_sequence", cfg.attention.pair_rank_per_sequence);
  }
  get_if(j, "methods", cfg.methods);
  get_if(j, "explain_count", cfg.explain_count);
  get_if(j, "max_tokens", cfg.max_tokens);
  if (j.contains("correlation")) {
    cfg.agreement.correlation = correlation_from_string(j.at("correlation").get<std::string>());
  }
  if (j.contains("topk")) {
    const json& t = j.at("topk");
    check_keys(t, {"k", "fraction"}, "topk");
    get_if(t, "k", cfg.agreement.topk.k);
    get_if(t, "fraction", cfg.agreement.topk.fraction);
  }
  get_if(j, "magnitude", cfg.agreement.magnitude);
  get_if(j, "seeds", cfg.seeds);
  get_if(j, "output_dir", cfg.output_dir);
  get_if(j, "heatmap_count", cfg.heatmap_count);
  get_if(j, "include_specials", cfg.include_specials);
  get_if(j, "target", cfg.target);
  get_if(j, "threads", cfg.threads);
  get_if(j, "vocab_min_count", cfg.vocab_min_count);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    check_keys(s,
               {"pair", "vocab_size", "triggers", "trigger_prob", "min_len", "max_len",
                "train_size", "val_size", "test_size", "allow_tied_weights"},
               "synthetic");
    cfg.has_synthetic = true;
    get_if(s, "pair", cfg.synthetic.pair_task);
    get_if(s, "vocab_size", cfg.synthetic.vocab_size);
    if (s.contains("triggers")) {
      cfg.synthetic.triggers.clear();
      for (const json& t : s.at("triggers")) {
        check_keys(t, {"token", "weight"}, "synthetic.triggers entry");
        cfg.synthetic.triggers.push_back(
            {t.at("token").get<std::string>(), t.at("weight").get<double>()});
      }
    }
    get_if(s, "trigger_prob", cfg.synthetic.trigger_prob);
    get_if(s, "min_len", cfg.synthetic.min_len);
    get_if(s, "max_len", cfg.synthetic.max_len);
    get_if(s, "train_size", cfg.synthetic.train_size);
    get_if(s, "val_size", cfg.synthetic.val_size);
    get_if(s, "test_size", cfg.synthetic.test_size);
    get_if(s, "allow_tied_weights", cfg.synthetic.allow_tied_weights);
  }
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["task"] = pair_task ? "pair" : "single";
  j["data"] = {{"train", data.train}, {"val", data.val}, {"test", data.test}};
  if (model.kind == "transformer") {
    j["model"] = {{"kind", model.kind},
                  {"layers", model.transformer.layers},
                  {"heads", model.transformer.heads},
                  {"model_dim", model.transformer.model_dim},
                  {"ff_dim", model.transformer.ff_dim},
                  {"max_len", model.transformer.max_len},
                  {"num_classes", model.transformer.num_classes}};
  } else {
    j["model"] = {{"kind", model.kind},
                  {"hidden_dim", model.bilstm.hidden_dim},
                  {"embedding_dim", model.bilstm.embedding_dim},
                  {"num_classes", model.bilstm.num_classes}};
  }
  j["training"] = {{"max_epochs", training.max_epochs},
                   {"patience", training.patience},
                   {"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"amsgrad", training.amsgrad},
                   {"attention_activation",
                    training.attention_activation == AttentionActivation::uniform ? "uniform"
                                                                                  : "softmax"}};
  j["attribution"] = {{"ig_steps", attribution.ig_steps},
                      {"gradshap_samples", attribution.gradshap_samples},
                      {"deepshap_baselines", attribution.deepshap_baselines},
                      {"lime_samples", attribution.lime_samples},
                      {"lime_ridge_lambda", attribution.lime_ridge_lambda},
                      {"lime_kernel_width", attribution.lime_kernel_width},
                      {"shapley_max_tokens", attribution.shapley_max_tokens}};
  j["attention"] = {{"residual_alpha", attention.residual_alpha},
                    {"flow_budget", attention.flow_budget},
                    {"pair_rank_per_sequence", attention.pair_rank_per_sequence}};
  j["methods"] = methods;
  j["explain_count"] = explain_count;
  j["max_tokens"] = max_tokens;
  j["correlation"] = correlation_to_string(agreement.correlation);
  j["topk"] = {{"k", agreement.topk.k}, {"fraction", agreement.topk.fraction}};
  j["magnitude"] = agreement.magnitude;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  j["heatmap_count"] = heatmap_count;
  j["include_specials"] = include_specials;
  j["target"] = target;
  j["vocab_min_count"] = vocab_min_count;
  if (has_synthetic) {
    json triggers = json::array();
    for (const TriggerToken& t : synthetic.triggers) {
      triggers.push_back({{"token", t.token}, {"weight", t.weight}});
    }
    j["synthetic"] = {{"pair", synthetic.pair_task},
                      {"vocab_size", synthetic.vocab_size},
                      {"triggers", triggers},
                      {"trigger_prob", synthetic.trigger_prob},
                      {"min_len", synthetic.min_len},
                      {"max_len", synthetic.max_len},
                      {"train_size", synthetic.train_size},
                      {"val_size", synthetic.val_size},
                      {"test_size", synthetic.test_size}};
  }
  return j.dump();
}

std::string ExperimentConfig::config_hash() const { return hex64(fnv1a(canonical_json())); }

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("methods must be nonempty");
  for (const std::string& m : methods) {
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) == kKnownMethods.end()) {
      throw ConfigError("unknown method \"" + m + "\"");
    }
    if (m == "attn" && model.kind != "bilstm") {
      throw ConfigError("method \"attn\" requires the bilstm model");
    }
    if ((m == "attn_rollout" || m == "attn_flow") && model.kind != "transformer") {
      throw ConfigError("method \"" + m + "\" requires the transformer model");
    }
  }
  if (std::set<std::string>(methods.begin(), methods.end()).size() != methods.size()) {
    throw ConfigError("methods list contains duplicates");
  }
  if (explain_count < 1) throw ConfigError("explain_count must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (heatmap_count < 0) throw ConfigError("heatmap_count must be >= 0");
  if (target != "predicted" && target != "label") {
    throw ConfigError("target must be \"predicted\" or \"label\"");
  }
  if (vocab_min_count < 1) throw ConfigError("vocab_min_count must be >= 1");
  training.validate();
  attribution.validate();
}

std::vector<int> sample_instances(int split_size, int n, std::uint64_t seed) {
  if (n > split_size) {
    throw ConfigError("cannot sample " + std::to_string(n) + " instances from a split of " +
                      std::to_string(split_size));
  }
  if (n < 1) throw ConfigError("sample size must be >= 1");
  Rng rng(derive_seed(seed, 0x5a3f1eULL));
  std::vector<int> ids = rng.sample_without_replacement(split_size, n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::unique_ptr<Model> build_model(const ExperimentConfig& cfg, const Vocabulary& vocab,
                                   std::uint64_t seed) {
  if (cfg.model.kind == "transformer") {
    TransformerConfig tc = cfg.model.transformer;
    tc.vocab_size = vocab.size();
    return std::make_unique<TransformerModel>(tc, vocab, derive_seed(seed, fnv1a("transformer")));
  }
  BiLstmConfig bc = cfg.model.bilstm;
  bc.vocab_size = vocab.size();
  bc.pair_input = cfg.pair_task;
  return std::make_unique<BiLstmModel>(bc, vocab, derive_seed(seed, fnv1a("bilstm")));
}

BaselineSpec deepshap_baseline_spec(const Model& model, const std::vector<TokenSequence>& train_set,
                                    int n_baselines, std::uint64_t seed) {
  std::vector<std::vector<int>> samples;
  samples.emplace_back();  // the padding sequence (all-pad ids fill in materialization)
  if (!train_set.empty() && n_baselines > 0) {
    Rng rng(derive_seed(seed, fnv1a("deep_shap_baselines")));
    const int k = std::min<int>(n_baselines, static_cast<int>(train_set.size()));
    for (const int idx : rng.sample_without_replacement(static_cast<int>(train_set.size()), k)) {
      std::vector<int> ids;
      for (const std::string& tok : train_set[static_cast<std::size_t>(idx)].tokens) {
        ids.push_back(model.vocab().lookup(tok));
      }
      samples.push_back(std::move(ids));
    }
  }
  return BaselineSpec::from_samples(std::move(samples));
}

std::map<std::string, Explanation> explain_instance(const Model& model, const TokenSequence& seq,
                                                    const ExperimentConfig& cfg,
                                                    const BaselineSpec& deepshap_spec,
                                                    std::uint64_t seed, int instance_id) {
  const Encoded enc = model.encode(seq, cfg.include_specials);
  AttentionRecord record;
  const Prediction pred = model.predict(enc, &record);
  const int target = cfg.target == "label" ? seq.label : pred.predicted;
  const Matrix padding = model.baseline_embeddings(enc);
  const BaselineSpec padding_spec = BaselineSpec::padding_only();

  std::map<std::string, Explanation> out;
  for (const std::string& method : cfg.methods) {
    const std::uint64_t call_seed =
        derive_seed(derive_seed(seed, static_cast<std::uint64_t>(instance_id)), fnv1a(method));
    if (method == "attn") {
      out[method] = raw_attention(record, enc, pred, cfg.attention);
    } else if (method == "attn_rollout") {
      out[method] = rollout(record, enc, pred, cfg.attention);
    } else if (method == "attn_flow") {
      out[method] = attention_flow(record, enc, pred, cfg.attention);
    } else if (method == "input_x_grad") {
      out[method] = input_x_gradient(model, enc, target);
    } else if (method == "int_grad") {
      out[method] = integrated_gradients(model, enc, target, padding, cfg.attribution.ig_steps);
    } else if (method == "deeplift") {
      out[method] = deeplift(model, enc, target, padding);
    } else if (method == "grad_shap") {
      out[method] = grad_shap(model, enc, target, padding_spec, cfg.attribution.gradshap_samples,
                              call_seed);
    } else if (method == "deep_shap") {
      out[method] = deep_shap(model, enc, target, deepshap_spec);
    } else if (method == "lime") {
      out[method] = lime(model, enc, target, cfg.attribution, call_seed);
    } else if (method == "loo") {
      out[method] = leave_one_out(model, enc, target);
    } else if (method == "shapley") {
      out[method] = exact_shapley(model, enc, target, cfg.attribution.shapley_max_tokens);
    } else {
      throw ConfigError("unknown method \"" + method + "\"");
    }
  }
  return out;
}

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.data.train.empty() || cfg.data.val.empty() || cfg.data.test.empty()) {
    throw ConfigError("data.train, data.val and data.test paths are required");
  }
  LoadedData d;
  d.train = load_dataset(cfg.data.train, cfg.pair_task, cfg.max_tokens, &d.train_stats);
  d.val = load_dataset(cfg.data.val, cfg.pair_task, cfg.max_tokens, &d.val_stats);
  d.test = load_dataset(cfg.data.test, cfg.pair_task, cfg.max_tokens, &d.test_stats);
  if (d.train.empty() || d.val.empty() || d.test.empty()) {
    throw ConfigError("a data split is empty after the length filter");
  }
  d.vocab = Vocabulary::build(d.train, cfg.vocab_min_count);
  return d;
}

std::vector<SeedOutcome> explain_stage(const ExperimentConfig& cfg, const LoadedData& data,
                                       const std::vector<Model*>& models) {
  if (models.size() != cfg.seeds.size()) {
    throw ContractError("explain_stage: one model per seed is required");
  }
  std::vector<SeedOutcome> out(cfg.seeds.size());
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    const Model& model = *models[si];
    SeedOutcome& res = out[si];
    res.seed = seed;
    res.instance_ids =
        sample_instances(static_cast<int>(data.test.size()), cfg.explain_count, seed);
    const BaselineSpec deepshap_spec =
        deepshap_baseline_spec(model, data.train, cfg.attribution.deepshap_baselines, seed);
    res.explanations.resize(res.instance_ids.size());
    parallel_for(
        res.instance_ids.size(),
        [&](std::size_t i) {
          const int id = res.instance_ids[i];
          res.explanations[i] = explain_instance(model, data.test[static_cast<std::size_t>(id)],
                                                 cfg, deepshap_spec, seed, id);
        },
        cfg.threads);
  }
  return out;
}

void write_explanations_jsonl(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& seeds,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string hash = cfg.config_hash();
  for (const SeedOutcome& s : seeds) {
    for (std::size_t i = 0; i < s.instance_ids.size(); ++i) {
      for (const std::string& method : cfg.methods) {
        const Explanation& e = s.explanations[i].at(method);
        json rec;
        rec["seed"] = s.seed;
        rec["instance"] = s.instance_ids[i];
        rec["method"] = e.method;
        rec["tokens"] = e.tokens;
        rec["scores"] = e.scores;
        rec["target_class"] = e.target_class;
        rec["prediction_prob"] = e.prediction_prob;
        rec["config_hash"] = hash;
        out << rec.dump() << '\n';
      }
    }
  }
}

std::vector<SeedOutcome> read_explanations_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<SeedOutcome> seeds;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw ParseError("invalid JSON record", line_no);
    const auto seed = rec.at("seed").get<std::uint64_t>();
    const int instance = rec.at("instance").get<int>();
    Explanation e;
    e.method = rec.at("method").get<std::string>();
    e.tokens = rec.at("tokens").get<std::vector<std::string>>();
    e.scores = rec.at("scores").get<std::vector<double>>();
    e.target_class = rec.at("target_class").get<int>();
    e.prediction_prob = rec.at("prediction_prob").get<double>();

    if (seeds.empty() || seeds.back().seed != seed) {
      seeds.push_back({});
      seeds.back().seed = seed;
    }
    SeedOutcome& s = seeds.back();
    if (s.instance_ids.empty() || s.instance_ids.back() != instance) {
      s.instance_ids.push_back(instance);
      s.explanations.emplace_back();
    }
    s.explanations.back()[e.method] = std::move(e);
  }
  return seeds;
}

AgreementMatrix aggregate_matrix(const ExperimentConfig& cfg,
                                 const std::vector<SeedOutcome>& seeds) {
  std::vector<std::map<std::string, Explanation>> pooled;
  for (const SeedOutcome& s : seeds) {
    pooled.insert(pooled.end(), s.explanations.begin(), s.explanations.end());
  }
  return agreement_matrix(pooled, cfg.methods, cfg.agreement);
}

void write_agreement_csvs(const AgreementMatrix& matrix, const std::string& dir) {
  const auto dump = [&](const std::string& name, bool std_dev) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << agreement_csv(matrix, std_dev);
  };
  dump("agreement_mean.csv", false);
  dump("agreement_std.csv", true);
}

void write_heatmaps(const ExperimentConfig& cfg, const std::vector<SeedOutcome>& seeds,
                    const std::string& dir) {
  if (cfg.heatmap_count == 0) return;
  fs::create_directories(dir);
  for (const SeedOutcome& s : seeds) {
    const std::size_t count =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.heatmap_count), s.explanations.size());
    for (std::size_t i = 0; i < count; ++i) {
      const std::string path = dir + "/seed" + std::to_string(s.seed) + "_instance" +
                               std::to_string(s.instance_ids[i]) + ".html";
      write_heatmap(s.explanations[i], path, cfg.agreement);
    }
  }
}

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir + "/model_seed" + std::to_string(seed) + ".json";
}

namespace {

json history_json(const History& h) {
  json epochs = json::array();
  for (const EpochStats& e : h.epochs) {
    epochs.push_back({{"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"best_val_accuracy", h.best_val_accuracy}};
}

json stats_json(const LoadStats& s) {
  return {{"total", s.total},
          {"retained", s.retained},
          {"filtered", s.filtered},
          {"retention", s.retention()}};
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  LoadedData data = load_experiment_data(cfg);
  fs::create_directories(cfg.output_dir);

  std::vector<std::unique_ptr<Model>> models(cfg.seeds.size());
  std::vector<History> histories(cfg.seeds.size());
  parallel_for(
      cfg.seeds.size(),
      [&](std::size_t si) {
        const std::uint64_t seed = cfg.seeds[si];
        models[si] = build_model(cfg, data.vocab, seed);
        TrainingConfig tc = cfg.training;
        tc.seed = seed;
        histories[si] = train(*models[si], data.train, data.val, tc);
      },
      cfg.threads);
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    save_checkpoint(*models[si], checkpoint_path(cfg, cfg.seeds[si]));
  }
  const double train_time = seconds_since(t0);

  std::vector<Model*> raw;
  raw.reserve(models.size());
  for (const auto& m : models) raw.push_back(m.get());
  std::vector<SeedOutcome> seeds = explain_stage(cfg, data, raw);
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    seeds[si].history = histories[si];
    seeds[si].test_accuracy = evaluate_accuracy(*models[si], data.test);
  }
  const double explain_time = seconds_since(t0) - train_time;

  ExperimentResult result;
  result.output_dir = cfg.output_dir;
  result.seeds = seeds;
  result.train_stats = data.train_stats;
  result.val_stats = data.val_stats;
  result.test_stats = data.test_stats;
  result.matrix = aggregate_matrix(cfg, seeds);

  write_explanations_jsonl(cfg, seeds, cfg.output_dir + "/explanations.jsonl");
  write_agreement_csvs(result.matrix, cfg.output_dir);
  write_heatmaps(cfg, seeds, cfg.output_dir + "/heatmaps");

  json manifest;
  manifest["format"] = "exagree-manifest";
  manifest["config"] = json::parse(cfg.canonical_json());
  manifest["config_hash"] = cfg.config_hash();
  manifest["retention"] = {{"train", stats_json(data.train_stats)},
                           {"val", stats_json(data.val_stats)},
                           {"test", stats_json(data.test_stats)}};
  json seed_entries = json::array();
  for (const SeedOutcome& s : seeds) {
    seed_entries.push_back({{"seed", s.seed},
                            {"history", history_json(s.history)},
                            {"test_accuracy", s.test_accuracy},
                            {"explained", s.instance_ids.size()}});
  }
  manifest["seeds"] = seed_entries;
  json used = json::array(), excluded = json::array();
  for (int i = 0; i < result.matrix.used.rows(); ++i) {
    json urow = json::array(), erow = json::array();
    for (int k = 0; k < result.matrix.used.cols(); ++k) {
      urow.push_back(result.matrix.used(i, k));
      erow.push_back(result.matrix.excluded(i, k));
    }
    used.push_back(urow);
    excluded.push_back(erow);
  }
  manifest["cells_used"] = used;
  manifest["cells_excluded"] = excluded;
  manifest["timings_sec"] = {{"train", train_time},
                             {"explain", explain_time},
                             {"total", seconds_since(t0)}};
  std::ofstream mf(cfg.output_dir + "/manifest.json", std::ios::binary);
  if (!mf) throw IoError("cannot write manifest.json");
  mf << manifest.dump(2) << '\n';
  return result;
}

AblationResult ablate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  LoadedData data = load_experiment_data(cfg);
  fs::create_directories(cfg.output_dir);

  AblationResult result;
  result.model_kind = cfg.model.kind;
  result.uniform.activation = "uniform";
  result.softmax.activation = "softmax";
  result.uniform.accuracies.resize(cfg.seeds.size());
  result.softmax.accuracies.resize(cfg.seeds.size());

  struct Job {
    std::size_t seed_index;
    bool uniform;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    jobs.push_back({si, false});
    jobs.push_back({si, true});
  }
  parallel_for(
      jobs.size(),
      [&](std::size_t ji) {
        const Job& job = jobs[ji];
        const std::uint64_t seed = cfg.seeds[job.seed_index];
        auto model = build_model(cfg, data.vocab, seed);
        TrainingConfig tc = cfg.training;
        tc.seed = seed;
        tc.attention_activation =
            job.uniform ? AttentionActivation::uniform : AttentionActivation::softmax;
        train(*model, data.train, data.val, tc);
        // uniform variants must actually produce all-equal attention rows
        if (job.uniform) {
          AttentionRecord record;
          model->predict(model->encode(data.test.front()), &record);
          if (record.kind == AttentionRecord::Kind::bilstm) {
            for (const Eigen::VectorXd& v : record.vectors) {
              if (std::fabs(v.maxCoeff() - v.minCoeff()) > 1e-12) {
                throw ContractError("uniform ablation produced non-uniform attention");
              }
            }
          } else {
            for (const auto& heads : record.layers) {
              for (const Matrix& a : heads) {
                for (Eigen::Index r = 0; r < a.rows(); ++r) {
                  if (std::fabs(a.row(r).maxCoeff() - a.row(r).minCoeff()) > 1e-12) {
                    throw ContractError("uniform ablation produced non-uniform attention");
                  }
                }
              }
            }
          }
        }
        const double acc = evaluate_accuracy(*model, data.test);
        (job.uniform ? result.uniform : result.softmax).accuracies[job.seed_index] = acc;
      },
      cfg.threads);

  const auto finish = [](AblationResult::Variant& v) {
    const double n = static_cast<double>(v.accuracies.size());
    v.mean = std::accumulate(v.accuracies.begin(), v.accuracies.end(), 0.0) / n;
    double var = 0.0;
    for (const double a : v.accuracies) var += (a - v.mean) * (a - v.mean);
    v.stddev = std::sqrt(var / n);
  };
  finish(result.uniform);
  finish(result.softmax);

  std::ofstream out(cfg.output_dir + "/ablation.csv", std::ios::binary);
  if (!out) throw IoError("cannot write ablation.csv");
  out << "model,uniform_mean,uniform_std,softmax_mean,softmax_std\n";
  out << result.model_kind << "," << format_double(result.uniform.mean) << ","
      << format_double(result.uniform.stddev) << "," << format_double(result.softmax.mean) << ","
      << format_double(result.softmax.stddev) << "\n";
  return result;
}

}  // namespace exagree
