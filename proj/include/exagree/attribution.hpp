#pragma once

#include <cstdint>
#include <vector>

#include "exagree/explanation.hpp"
#include "exagree/model.hpp"

namespace exagree {

/// Reference input for baseline-relative methods. `padding` replaces every
/// scored token's embedding with the padding-token embedding (length
/// preserved); `sample_set` draws reference embeddings from token-id
/// sequences, truncated or padded to the explained length.
struct BaselineSpec {
  enum class Kind { padding, sample_set };
  Kind kind = Kind::padding;
  std::vector<std::vector<int>> samples;

  static BaselineSpec padding_only() { return {}; }
  static BaselineSpec from_samples(std::vector<std::vector<int>> s);
};

struct AttributionConfig {
  int ig_steps = 64;
  int gradshap_samples = 32;
  int deepshap_baselines = 8;
  int lime_samples = 1000;
  double lime_ridge_lambda = 1.0;
  double lime_kernel_width = 0.0;  // 0 = 0.25 * sqrt(n)
  int shapley_max_tokens = 12;
  void validate() const;
};

/// Scalar explained by the perturbation methods' value function.
enum class TargetValue { probability, logit };

/// Gradient of logit[target] with respect to the scored-token embeddings,
/// evaluated with the embeddings set to `point`.
Matrix logit_gradient(const Model& model, const Encoded& in, int target, const Matrix& point,
                      double* logit_out = nullptr);

/// Materializes the baseline embedding matrices for one instance.
std::vector<Matrix> materialize_baselines(const Model& model, const Encoded& in,
                                          const BaselineSpec& spec);

/// score(i) = sum over embedding dims of e_i * d logit_target / d e_i.
/// With a baseline, (e_i - b_i) replaces e_i in the product.
Explanation input_x_gradient(const Model& model, const Encoded& in, int target,
                             const Matrix* baseline = nullptr);

/// Midpoint-rule path integral of gradients from `baseline` to the input;
/// satisfies completeness against logit(x) - logit(baseline).
Explanation integrated_gradients(const Model& model, const Encoded& in, int target,
                                 const Matrix& baseline, int steps);

/// Rescale-rule attribution: gradients with every elementwise nonlinearity's
/// slope replaced by its finite difference between input and baseline
/// activations.
Explanation deeplift(const Model& model, const Encoded& in, int target, const Matrix& baseline);

/// Expected-gradients estimator: per sample, draw a baseline and a point on
/// the straight-line path, and average (x - b) * grad there.
Explanation grad_shap(const Model& model, const Encoded& in, int target, const BaselineSpec& spec,
                      int n_samples, std::uint64_t seed);

/// Mean of deeplift attributions over all baselines in the spec.
Explanation deep_shap(const Model& model, const Encoded& in, int target, const BaselineSpec& spec);

/// Mask-based local surrogate: binary keep-masks, masked tokens replaced by
/// padding, exponential cosine-distance kernel, weighted ridge fit.
Explanation lime(const Model& model, const Encoded& in, int target, const AttributionConfig& cfg,
                 std::uint64_t seed);

/// score(i) = value(x) - value(x with token i padded).
Explanation leave_one_out(const Model& model, const Encoded& in, int target,
                          TargetValue value = TargetValue::probability);

/// Shapley values of the coalition game v(S) = value with tokens outside S
/// padded, by full enumeration over 2^n subsets. n above `max_tokens` is
/// refused (exponential blowup).
Explanation exact_shapley(const Model& model, const Encoded& in, int target, int max_tokens = 12,
                          TargetValue value = TargetValue::probability);

}  // namespace exagree
