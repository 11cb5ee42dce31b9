#include "exagree/attribution.hpp"

#include <bit>
#include <cmath>

#include "exagree/rng.hpp"

namespace exagree {

namespace {

std::vector<double> row_sums(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m.row(i).sum();
  return out;
}

Explanation make_explanation(const Model& model, const Encoded& in, int target, const char* method,
                             std::vector<double> scores) {
  Explanation e;
  e.method = method;
  e.tokens = in.scored_tokens();
  e.scores = std::move(scores);
  e.target_class = target;
  e.prediction_prob = model.predict(in).probs(target);
  return e;
}

void check_target(const Model& model, int target) {
  if (target < 0 || target >= model.num_classes()) {
    throw ContractError("target class " + std::to_string(target) + " outside " +
                        std::to_string(model.num_classes()) + " classes");
  }
}

void check_baseline(const Encoded& in, const Matrix& baseline, const Matrix& x) {
  if (baseline.rows() != static_cast<Eigen::Index>(in.scored.size()) || baseline.cols() != x.cols()) {
    throw ShapeError("baseline " + shape_str(baseline) + " does not match scored embeddings " +
                     shape_str(x));
  }
}

double target_value(const Model& model, const Encoded& in, const std::vector<std::uint8_t>& keep,
                    int target, TargetValue value) {
  const Prediction p = model.predict_masked(in, keep);
  return value == TargetValue::probability ? p.probs(target) : p.logits(target);
}

}  // namespace

BaselineSpec BaselineSpec::from_samples(std::vector<std::vector<int>> s) {
  if (s.empty()) throw ConfigError("baseline sample set must be nonempty");
  BaselineSpec spec;
  spec.kind = Kind::sample_set;
  spec.samples = std::move(s);
  return spec;
}

void AttributionConfig::validate() const {
  if (ig_steps < 1 || gradshap_samples < 1 || deepshap_baselines < 1 || lime_samples < 1 ||
      shapley_max_tokens < 1) {
    throw ConfigError("attribution config: all counts must be >= 1");
  }
  if (lime_ridge_lambda <= 0.0) throw ConfigError("attribution config: lime_ridge_lambda must be > 0");
  if (lime_kernel_width < 0.0) throw ConfigError("attribution config: lime_kernel_width must be >= 0");
}

Matrix logit_gradient(const Model& model, const Encoded& in, int target, const Matrix& point,
                      double* logit_out) {
  check_target(model, target);
  Tape tape;
  Tensor emb = tape.leaf(point, true);
  Tensor logits = model.logits_from_embeddings(tape, emb, in);
  Tensor t = slice(logits, 1, target, 1);
  if (logit_out) *logit_out = t.value()(0, 0);
  tape.backward(t);
  return emb.grad();
}

std::vector<Matrix> materialize_baselines(const Model& model, const Encoded& in,
                                          const BaselineSpec& spec) {
  if (spec.kind == BaselineSpec::Kind::padding) return {model.baseline_embeddings(in)};
  if (spec.samples.empty()) throw ConfigError("baseline sample set is empty");
  const std::size_t n = in.scored.size();
  const int pad = model.vocab().pad_id();
  std::vector<Matrix> out;
  out.reserve(spec.samples.size());
  for (const std::vector<int>& sample : spec.samples) {
    std::vector<int> ids(n, pad);
    for (std::size_t i = 0; i < n && i < sample.size(); ++i) ids[i] = sample[i];
    out.push_back(model.embed_tokens(ids));
  }
  return out;
}

Explanation input_x_gradient(const Model& model, const Encoded& in, int target,
                             const Matrix* baseline) {
  const Matrix x = model.scored_embeddings(in);
  if (baseline) check_baseline(in, *baseline, x);
  const Matrix g = logit_gradient(model, in, target, x);
  const Matrix ref = baseline ? Matrix(x - *baseline) : x;
  return make_explanation(model, in, target, "input_x_grad",
                          row_sums((ref.array() * g.array()).matrix()));
}

Explanation integrated_gradients(const Model& model, const Encoded& in, int target,
                                 const Matrix& baseline, int steps) {
  if (steps < 1) throw ConfigError("integrated_gradients: steps must be >= 1");
  const Matrix x = model.scored_embeddings(in);
  check_baseline(in, baseline, x);
  const Matrix diff = x - baseline;
  Matrix accum = Matrix::Zero(x.rows(), x.cols());
  for (int k = 0; k < steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    accum += logit_gradient(model, in, target, baseline + alpha * diff);
  }
  accum /= static_cast<double>(steps);
  return make_explanation(model, in, target, "int_grad",
                          row_sums((diff.array() * accum.array()).matrix()));
}

namespace {

std::vector<double> deeplift_scores(const Model& model, const Encoded& in, int target,
                                    const Matrix& baseline) {
  const Matrix x = model.scored_embeddings(in);
  check_baseline(in, baseline, x);
  Tape tape;
  Tensor emb = tape.dual_leaf(x, baseline, true);
  Tensor logits = model.logits_from_embeddings(tape, emb, in);
  Tensor t = slice(logits, 1, target, 1);
  tape.backward_rescale(t);
  const Matrix mult = emb.grad();
  return row_sums(((x - baseline).array() * mult.array()).matrix());
}

}  // namespace

Explanation deeplift(const Model& model, const Encoded& in, int target, const Matrix& baseline) {
  check_target(model, target);
  return make_explanation(model, in, target, "deeplift", deeplift_scores(model, in, target, baseline));
}

Explanation grad_shap(const Model& model, const Encoded& in, int target, const BaselineSpec& spec,
                      int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("grad_shap: n_samples must be >= 1");
  const std::vector<Matrix> baselines = materialize_baselines(model, in, spec);
  const Matrix x = model.scored_embeddings(in);
  Rng rng(seed);
  Matrix accum = Matrix::Zero(x.rows(), x.cols());
  for (int s = 0; s < n_samples; ++s) {
    const Matrix& b = baselines[rng.below(baselines.size())];
    const double u = rng.uniform();
    const Matrix diff = x - b;
    const Matrix g = logit_gradient(model, in, target, b + u * diff);
    accum += (diff.array() * g.array()).matrix();
  }
  accum /= static_cast<double>(n_samples);
  return make_explanation(model, in, target, "grad_shap", row_sums(accum));
}

Explanation deep_shap(const Model& model, const Encoded& in, int target, const BaselineSpec& spec) {
  check_target(model, target);
  const std::vector<Matrix> baselines = materialize_baselines(model, in, spec);
  std::vector<double> mean(in.scored.size(), 0.0);
  for (const Matrix& b : baselines) {
    const std::vector<double> s = deeplift_scores(model, in, target, b);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
  }
  for (double& v : mean) v /= static_cast<double>(baselines.size());
  return make_explanation(model, in, target, "deep_shap", std::move(mean));
}

Explanation lime(const Model& model, const Encoded& in, int target, const AttributionConfig& cfg,
                 std::uint64_t seed) {
  cfg.validate();
  check_target(model, target);
  const int n = static_cast<int>(in.scored.size());
  if (n < 1) throw ContractError("lime: no scored tokens");
  const double width = cfg.lime_kernel_width > 0.0 ? cfg.lime_kernel_width
                                                   : 0.25 * std::sqrt(static_cast<double>(n));
  Rng rng(seed);

  const int dim = n + 1;  // intercept + one coefficient per token
  Matrix normal = Matrix::Zero(dim, dim);
  Eigen::VectorXd moment = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd feat(dim);

  for (int s = 0; s < cfg.lime_samples; ++s) {
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 1);
    if (s > 0) {  // sample 0 is the unperturbed instance
      for (auto& k : keep) k = rng.bernoulli(0.5) ? 1 : 0;
    }
    int kept = 0;
    for (const auto k : keep) kept += k;
    const double y = model.predict_masked(in, keep).probs(target);
    const double dist =
        kept == 0 ? 1.0 : 1.0 - std::sqrt(static_cast<double>(kept) / static_cast<double>(n));
    const double w = std::exp(-dist * dist / (width * width));
    feat(0) = 1.0;
    for (int i = 0; i < n; ++i) feat(i + 1) = keep[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    normal.selfadjointView<Eigen::Lower>().rankUpdate(feat, w);
    moment += w * y * feat;
  }
  Matrix a = normal.selfadjointView<Eigen::Lower>();
  for (int i = 1; i < dim; ++i) a(i, i) += cfg.lime_ridge_lambda;  // intercept unpenalized

  const Eigen::LDLT<Matrix> solver(a);
  if (solver.info() != Eigen::Success) {
    throw NumericError("lime: ridge system could not be factorized");
  }
  const Eigen::VectorXd beta = solver.solve(moment);
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = beta(i + 1);
  return make_explanation(model, in, target, "lime", std::move(scores));
}

Explanation leave_one_out(const Model& model, const Encoded& in, int target, TargetValue value) {
  check_target(model, target);
  const int n = static_cast<int>(in.scored.size());
  if (n < 1) throw ContractError("leave_one_out: no scored tokens");
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(n), 1);
  const double full = target_value(model, in, keep, target, value);
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    keep[static_cast<std::size_t>(i)] = 0;
    scores[static_cast<std::size_t>(i)] = full - target_value(model, in, keep, target, value);
    keep[static_cast<std::size_t>(i)] = 1;
  }
  return make_explanation(model, in, target, "loo", std::move(scores));
}

Explanation exact_shapley(const Model& model, const Encoded& in, int target, int max_tokens,
                          TargetValue value) {
  check_target(model, target);
  const int n = static_cast<int>(in.scored.size());
  if (n < 1) throw ContractError("exact_shapley: no scored tokens");
  if (n > max_tokens) {
    throw CapabilityError("exact_shapley: " + std::to_string(n) + " tokens exceed the limit of " +
                          std::to_string(max_tokens) + " (2^n coalitions)");
  }

  const std::uint32_t n_masks = 1u << n;
  std::vector<double> v(n_masks);
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(n));
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    for (int i = 0; i < n; ++i) keep[static_cast<std::size_t>(i)] = (mask >> i) & 1u;
    v[mask] = target_value(model, in, keep, target, value);
  }

  std::vector<double> factorial(static_cast<std::size_t>(n) + 1, 1.0);
  for (int i = 1; i <= n; ++i) {
    factorial[static_cast<std::size_t>(i)] = factorial[static_cast<std::size_t>(i - 1)] * i;
  }
  std::vector<double> weight(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    weight[static_cast<std::size_t>(s)] = factorial[static_cast<std::size_t>(s)] *
                                          factorial[static_cast<std::size_t>(n - s - 1)] /
                                          factorial[static_cast<std::size_t>(n)];
  }

  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
    const int size = std::popcount(mask);
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) continue;
      scores[static_cast<std::size_t>(i)] +=
          weight[static_cast<std::size_t>(size)] * (v[mask | (1u << i)] - v[mask]);
    }
  }
  return make_explanation(model, in, target, "shapley", std::move(scores));
}

}  // namespace exagree
