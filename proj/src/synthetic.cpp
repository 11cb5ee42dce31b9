#include "exagree/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "exagree/rng.hpp"

namespace exagree {

void SyntheticTaskSpec::validate() const {
  if (triggers.empty()) throw ConfigError("synthetic spec: at least one trigger is required");
  if (noise_types() < 1) {
    throw ConfigError("synthetic spec: vocab_size must exceed the trigger count");
  }
  if (trigger_prob <= 0.0 || trigger_prob > 1.0) {
    throw ConfigError("synthetic spec: trigger_prob must lie in (0, 1]");
  }
  if (min_len < 1 || max_len < min_len) throw ConfigError("synthetic spec: bad length range");
  if (train_size < 1 || val_size < 1 || test_size < 1) {
    throw ConfigError("synthetic spec: split sizes must be >= 1");
  }
  for (std::size_t i = 0; i < triggers.size(); ++i) {
    if (triggers[i].weight == 0.0) {
      throw ConfigError("synthetic spec: trigger " + triggers[i].token + " has zero weight");
    }
    if (!allow_tied_weights) {
      for (std::size_t j = i + 1; j < triggers.size(); ++j) {
        if (std::fabs(triggers[i].weight) == std::fabs(triggers[j].weight)) {
          throw ConfigError("synthetic spec: triggers " + triggers[i].token + " and " +
                            triggers[j].token + " share a weight magnitude; the reference ranking "
                            "would not be strict");
        }
      }
    }
  }
}

namespace {

std::string noise_token(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03d", i);
  return buf;
}

struct Side {
  std::vector<std::string> tokens;
  std::vector<double> reference;
};

Side fill_side(const SyntheticTaskSpec& spec, const std::vector<int>& trigger_idx, Rng& rng) {
  const int needed = static_cast<int>(trigger_idx.size());
  int len = spec.min_len + static_cast<int>(rng.below(
                               static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1)));
  len = std::max(len, needed);
  Side side;
  side.tokens.assign(static_cast<std::size_t>(len), {});
  side.reference.assign(static_cast<std::size_t>(len), 0.0);
  std::vector<int> slots = rng.sample_without_replacement(len, needed);
  for (int k = 0; k < needed; ++k) {
    const TriggerToken& t = spec.triggers[static_cast<std::size_t>(trigger_idx[static_cast<std::size_t>(k)])];
    side.tokens[static_cast<std::size_t>(slots[static_cast<std::size_t>(k)])] = t.token;
    side.reference[static_cast<std::size_t>(slots[static_cast<std::size_t>(k)])] = std::fabs(t.weight);
  }
  for (std::size_t i = 0; i < side.tokens.size(); ++i) {
    if (side.tokens[i].empty()) {
      side.tokens[i] = noise_token(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.noise_types()))));
    }
  }
  return side;
}

SyntheticInstance generate_instance(const SyntheticTaskSpec& spec, Rng& rng) {
  constexpr int kMaxRetries = 200;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<int> chosen;
    double total = 0.0;
    for (std::size_t i = 0; i < spec.triggers.size(); ++i) {
      if (rng.bernoulli(spec.trigger_prob)) {
        chosen.push_back(static_cast<int>(i));
        total += spec.triggers[i].weight;
      }
    }
    if (total == 0.0) continue;  // label would be ambiguous

    SyntheticInstance inst;
    inst.seq.label = total > 0.0 ? 1 : 0;
    if (!spec.pair_task) {
      Side side = fill_side(spec, chosen, rng);
      inst.seq.tokens = std::move(side.tokens);
      inst.reference = std::move(side.reference);
    } else {
      // each chosen trigger lands on exactly one side
      std::vector<int> first, second;
      for (const int idx : chosen) {
        (rng.bernoulli(0.5) ? first : second).push_back(idx);
      }
      Side a = fill_side(spec, first, rng);
      Side b = fill_side(spec, second, rng);
      inst.seq.tokens = a.tokens;
      inst.seq.tokens.insert(inst.seq.tokens.end(), b.tokens.begin(), b.tokens.end());
      inst.seq.pair_boundary = static_cast<int>(a.tokens.size());
      inst.reference = a.reference;
      inst.reference.insert(inst.reference.end(), b.reference.begin(), b.reference.end());
    }
    return inst;
  }
  throw ConfigError("synthetic spec: could not draw an unambiguous instance after " +
                    std::to_string(kMaxRetries) + " attempts (weight sums keep cancelling)");
}

}  // namespace

int synthetic_label_of(const SyntheticTaskSpec& spec, const std::vector<std::string>& tokens) {
  std::map<std::string, double> weights;
  for (const TriggerToken& t : spec.triggers) weights[t.token] = t.weight;
  double total = 0.0;
  for (const std::string& tok : tokens) {
    const auto it = weights.find(tok);
    if (it != weights.end()) total += it->second;
  }
  if (total == 0.0) throw ContractError("synthetic instance with ambiguous label (weight sum 0)");
  return total > 0.0 ? 1 : 0;
}

SyntheticDataset synth_generate(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset out;
  Rng rng(derive_seed(seed, 0x575e7ecULL));
  const auto fill = [&](std::vector<SyntheticInstance>& split, int size) {
    split.reserve(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) split.push_back(generate_instance(spec, rng));
  };
  fill(out.train, spec.train_size);
  fill(out.val, spec.val_size);
  fill(out.test, spec.test_size);
  return out;
}

std::vector<TokenSequence> strip_references(const std::vector<SyntheticInstance>& instances) {
  std::vector<TokenSequence> out;
  out.reserve(instances.size());
  for (const SyntheticInstance& i : instances) out.push_back(i.seq);
  return out;
}

namespace {

void write_split(const std::vector<SyntheticInstance>& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const SyntheticInstance& inst : split) {
    nlohmann::json rec;
    if (inst.seq.is_pair()) {
      std::string first, second;
      for (int i = 0; i < inst.seq.length(); ++i) {
        std::string& dst = i < inst.seq.pair_boundary ? first : second;
        if (!dst.empty()) dst += ' ';
        dst += inst.seq.tokens[static_cast<std::size_t>(i)];
      }
      rec["text"] = first;
      rec["text_pair"] = second;
    } else {
      std::string text;
      for (const std::string& tok : inst.seq.tokens) {
        if (!text.empty()) text += ' ';
        text += tok;
      }
      rec["text"] = text;
    }
    rec["label"] = inst.seq.label;
    out << rec.dump() << '\n';
  }
}

}  // namespace

void write_synthetic_files(const SyntheticDataset& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_split(data.train, dir + "/train.jsonl");
  write_split(data.val, dir + "/val.jsonl");
  write_split(data.test, dir + "/test.jsonl");
  std::ofstream gt(dir + "/ground_truth.jsonl", std::ios::binary);
  if (!gt) throw IoError("cannot write " + dir + "/ground_truth.jsonl");
  const auto dump_refs = [&](const std::vector<SyntheticInstance>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      nlohmann::json rec;
      rec["split"] = name;
      rec["index"] = i;
      rec["reference"] = split[i].reference;
      gt << rec.dump() << '\n';
    }
  };
  dump_refs(data.train, "train");
  dump_refs(data.val, "val");
  dump_refs(data.test, "test");
}

}  // namespace exagree
