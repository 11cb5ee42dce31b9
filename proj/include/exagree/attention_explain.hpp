#pragma once

#include <vector>

#include "exagree/explanation.hpp"
#include "exagree/model.hpp"

namespace exagree {

struct AttentionExplainConfig {
  /// Weight on the identity in the residual mixing A_hat = (1-a)*A + a*I.
  double residual_alpha = 0.5;
  /// attention_flow refuses instances with positions * layers above this.
  long flow_budget = 4096;
  /// BiLSTM pair tasks: replace each sequence's weights by within-sequence
  /// average ranks before concatenating (alternative ranking convention).
  bool pair_rank_per_sequence = false;
};

/// Raw BiLSTM attention weights as importance scores. Pair tasks concatenate
/// the two per-sequence vectors (each sums to 1; the ranking is scale-free).
Explanation raw_attention(const AttentionRecord& record, const Encoded& in, const Prediction& pred,
                          const AttentionExplainConfig& cfg = {});

/// Head-averaged, residual-mixed attention matrices multiplied across layers;
/// scores are the [CLS] row of the product. Padding positions are removed and
/// rows renormalized before mixing.
Explanation rollout(const AttentionRecord& record, const Encoded& in, const Prediction& pred,
                    const AttentionExplainConfig& cfg = {});

/// Max-flow from the top-layer [CLS] node to each input-token node in the
/// layered attention capacity graph (same matrices as rollout). Flows are
/// computed independently per token.
Explanation attention_flow(const AttentionRecord& record, const Encoded& in,
                           const Prediction& pred, const AttentionExplainConfig& cfg = {});

/// The per-layer matrices rollout and attention_flow operate on: padding
/// removed, rows renormalized, heads averaged, residual mixed. Returned with
/// the kept wrapped positions.
struct LayeredAttentionGraph {
  std::vector<int> positions;    // wrapped indices kept (non-padding)
  std::vector<Matrix> matrices;  // one row-stochastic matrix per layer
  int cls_row = -1;              // index of [CLS] within positions
};
LayeredAttentionGraph build_attention_graph(const AttentionRecord& record,
                                            const AttentionExplainConfig& cfg = {});

struct FlowGraph {
  struct Edge {
    int from = 0, to = 0;
    double capacity = 0.0;
  };
  int num_nodes = 0;
  std::vector<Edge> edges;
};

/// Exact max-flow via BFS augmenting paths on capacities quantized to 1e-9.
double max_flow(const FlowGraph& graph, int source, int sink);

}  // namespace exagree
