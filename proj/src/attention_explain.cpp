#include "exagree/attention_explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>

#include "exagree/agreement.hpp"

namespace exagree {

namespace {

Explanation base_explanation(const char* method, const Encoded& in, const Prediction& pred,
                             const std::vector<int>& positions, std::vector<double> scores) {
  Explanation e;
  e.method = method;
  e.scores = std::move(scores);
  e.tokens.reserve(positions.size());
  for (const int p : positions) e.tokens.push_back(in.tokens[static_cast<std::size_t>(p)]);
  e.target_class = pred.predicted;
  e.prediction_prob = pred.probs(pred.predicted);
  return e;
}

}  // namespace

Explanation raw_attention(const AttentionRecord& record, const Encoded& in, const Prediction& pred,
                          const AttentionExplainConfig& cfg) {
  if (record.kind != AttentionRecord::Kind::bilstm) {
    throw ContractError("raw_attention expects a bilstm record");
  }
  if (record.vectors.empty()) throw ContractError("raw_attention: record holds no weight vectors");

  std::vector<double> all;
  for (const Eigen::VectorXd& alpha : record.vectors) {
    std::vector<double> seg(alpha.data(), alpha.data() + alpha.size());
    if (cfg.pair_rank_per_sequence && record.vectors.size() > 1) seg = average_ranks(seg);
    all.insert(all.end(), seg.begin(), seg.end());
  }
  if (all.size() != record.pad_mask.size()) {
    throw ContractError("raw_attention: weight vectors do not cover the sequence");
  }

  std::vector<int> positions;
  std::vector<double> scores;
  for (const int p : record.scored) {
    if (record.pad_mask[static_cast<std::size_t>(p)]) continue;
    positions.push_back(p);
    scores.push_back(all[static_cast<std::size_t>(p)]);
  }
  return base_explanation("attn", in, pred, positions, std::move(scores));
}

LayeredAttentionGraph build_attention_graph(const AttentionRecord& record,
                                            const AttentionExplainConfig& cfg) {
  if (record.kind != AttentionRecord::Kind::transformer) {
    throw ContractError("attention graph requires a transformer record");
  }
  if (record.layers.empty()) throw ContractError("attention record has no layers");
  if (cfg.residual_alpha < 0.0 || cfg.residual_alpha > 1.0) {
    throw ConfigError("residual_alpha must lie in [0, 1]");
  }

  LayeredAttentionGraph g;
  const std::size_t n = record.pad_mask.size();
  for (std::size_t p = 0; p < n; ++p) {
    if (!record.pad_mask[p]) g.positions.push_back(static_cast<int>(p));
  }
  if (g.positions.empty()) throw ContractError("attention record is all padding");
  const auto it = std::find(g.positions.begin(), g.positions.end(), record.cls_index);
  if (it == g.positions.end()) throw ContractError("[CLS] position is padded out");
  g.cls_row = static_cast<int>(it - g.positions.begin());

  const Eigen::Index m = static_cast<Eigen::Index>(g.positions.size());
  for (const auto& heads : record.layers) {
    if (heads.empty()) throw ContractError("attention layer with no heads");
    Matrix avg = Matrix::Zero(m, m);
    for (const Matrix& a : heads) {
      if (a.rows() != static_cast<Eigen::Index>(n) || a.cols() != static_cast<Eigen::Index>(n)) {
        throw ShapeError("attention matrix " + shape_str(a) + " does not cover " +
                         std::to_string(n) + " positions");
      }
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double rs = a.row(r).sum();
        if (std::fabs(rs - 1.0) > 1e-6) {
          throw ContractError("attention row " + std::to_string(r) + " sums to " +
                              std::to_string(rs) + ", expected 1");
        }
      }
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index c = 0; c < m; ++c) {
          avg(r, c) += a(g.positions[static_cast<std::size_t>(r)],
                         g.positions[static_cast<std::size_t>(c)]);
        }
      }
    }
    avg /= static_cast<double>(heads.size());
    // renormalize after dropping padding columns, then mix in the residual
    for (Eigen::Index r = 0; r < m; ++r) {
      const double rs = avg.row(r).sum();
      if (rs > 0.0) avg.row(r) /= rs;
    }
    Matrix mixed = (1.0 - cfg.residual_alpha) * avg +
                   cfg.residual_alpha * Matrix::Identity(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double rs = mixed.row(r).sum();
      if (rs > 0.0) mixed.row(r) /= rs;
    }
    g.matrices.push_back(std::move(mixed));
  }
  return g;
}

Explanation rollout(const AttentionRecord& record, const Encoded& in, const Prediction& pred,
                    const AttentionExplainConfig& cfg) {
  const LayeredAttentionGraph g = build_attention_graph(record, cfg);
  const Eigen::Index m = static_cast<Eigen::Index>(g.positions.size());
  Matrix r = Matrix::Identity(m, m);
  for (const Matrix& a : g.matrices) r = a * r;  // R = A_L * ... * A_1

  std::vector<int> positions;
  std::vector<double> scores;
  for (const int p : record.scored) {
    const auto it = std::find(g.positions.begin(), g.positions.end(), p);
    if (it == g.positions.end()) continue;  // padded out
    positions.push_back(p);
    scores.push_back(r(g.cls_row, it - g.positions.begin()));
  }
  return base_explanation("attn_rollout", in, pred, positions, std::move(scores));
}

// ---- max flow ----------------------------------------------------------------

namespace {

constexpr double kCapacityScale = 1e9;

struct ResidualGraph {
  struct Arc {
    int to;
    std::int64_t cap;
    std::size_t rev;  // index of the reverse arc in adj[to]
  };
  std::vector<std::vector<Arc>> adj;

  explicit ResidualGraph(int n) : adj(static_cast<std::size_t>(n)) {}

  void add_edge(int from, int to, std::int64_t cap) {
    adj[static_cast<std::size_t>(from)].push_back({to, cap, adj[static_cast<std::size_t>(to)].size()});
    adj[static_cast<std::size_t>(to)].push_back({from, 0, adj[static_cast<std::size_t>(from)].size() - 1});
  }
};

}  // namespace

double max_flow(const FlowGraph& graph, int source, int sink) {
  if (source == sink) throw ContractError("max_flow: source equals sink");
  if (source < 0 || source >= graph.num_nodes || sink < 0 || sink >= graph.num_nodes) {
    throw ContractError("max_flow: source or sink outside the graph");
  }
  ResidualGraph rg(graph.num_nodes);
  for (const FlowGraph::Edge& e : graph.edges) {
    if (e.capacity < 0.0) throw ContractError("max_flow: negative capacity");
    if (e.from < 0 || e.from >= graph.num_nodes || e.to < 0 || e.to >= graph.num_nodes) {
      throw ContractError("max_flow: edge endpoint outside the graph");
    }
    rg.add_edge(e.from, e.to, static_cast<std::int64_t>(std::llround(e.capacity * kCapacityScale)));
  }

  std::int64_t total = 0;
  std::vector<int> prev_node(static_cast<std::size_t>(graph.num_nodes));
  std::vector<std::size_t> prev_arc(static_cast<std::size_t>(graph.num_nodes));
  while (true) {
    std::fill(prev_node.begin(), prev_node.end(), -1);
    prev_node[static_cast<std::size_t>(source)] = source;
    std::deque<int> queue{source};
    while (!queue.empty() && prev_node[static_cast<std::size_t>(sink)] < 0) {
      const int u = queue.front();
      queue.pop_front();
      for (std::size_t k = 0; k < rg.adj[static_cast<std::size_t>(u)].size(); ++k) {
        const auto& arc = rg.adj[static_cast<std::size_t>(u)][k];
        if (arc.cap > 0 && prev_node[static_cast<std::size_t>(arc.to)] < 0) {
          prev_node[static_cast<std::size_t>(arc.to)] = u;
          prev_arc[static_cast<std::size_t>(arc.to)] = k;
          queue.push_back(arc.to);
        }
      }
    }
    if (prev_node[static_cast<std::size_t>(sink)] < 0) break;

    std::int64_t bottleneck = INT64_MAX;
    for (int v = sink; v != source; v = prev_node[static_cast<std::size_t>(v)]) {
      const int u = prev_node[static_cast<std::size_t>(v)];
      bottleneck = std::min(bottleneck,
                            rg.adj[static_cast<std::size_t>(u)][prev_arc[static_cast<std::size_t>(v)]].cap);
    }
    if (bottleneck <= 0) break;
    for (int v = sink; v != source; v = prev_node[static_cast<std::size_t>(v)]) {
      const int u = prev_node[static_cast<std::size_t>(v)];
      auto& arc = rg.adj[static_cast<std::size_t>(u)][prev_arc[static_cast<std::size_t>(v)]];
      arc.cap -= bottleneck;
      rg.adj[static_cast<std::size_t>(arc.to)][arc.rev].cap += bottleneck;
    }
    total += bottleneck;
  }
  return static_cast<double>(total) / kCapacityScale;
}

Explanation attention_flow(const AttentionRecord& record, const Encoded& in,
                           const Prediction& pred, const AttentionExplainConfig& cfg) {
  const LayeredAttentionGraph g = build_attention_graph(record, cfg);
  const int m = static_cast<int>(g.positions.size());
  const int layers = static_cast<int>(g.matrices.size());
  if (static_cast<long>(m) * layers > cfg.flow_budget) {
    throw CapabilityError("attention_flow: " + std::to_string(m) + " positions x " +
                          std::to_string(layers) + " layers exceeds the flow budget of " +
                          std::to_string(cfg.flow_budget) + "; use rollout instead");
  }

  // node (l, i) -> l * m + i, for layer boundaries l = 0..layers
  FlowGraph fg;
  fg.num_nodes = (layers + 1) * m;
  for (int l = 0; l < layers; ++l) {
    const Matrix& a = g.matrices[static_cast<std::size_t>(l)];
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (a(i, j) <= 0.0) continue;
        fg.edges.push_back({(l + 1) * m + i, l * m + j, a(i, j)});
      }
    }
  }
  const int source = layers * m + g.cls_row;

  std::vector<int> positions;
  std::vector<double> scores;
  for (const int p : record.scored) {
    const auto it = std::find(g.positions.begin(), g.positions.end(), p);
    if (it == g.positions.end()) continue;
    positions.push_back(p);
    scores.push_back(max_flow(fg, source, static_cast<int>(it - g.positions.begin())));
  }
  return base_explanation("attn_flow", in, pred, positions, std::move(scores));
}

}  // namespace exagree
