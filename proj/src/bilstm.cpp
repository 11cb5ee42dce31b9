#include <cmath>

#include "exagree/model.hpp"
#include "param_init.hpp"

namespace exagree {

namespace {
constexpr double kMaskValue = -1e9;
}

struct BiLstmModel::Bound {
  Tensor emb, w_ih_f, w_hh_f, b_f, w_ih_b, w_hh_b, b_b, att_w, att_v, cls_w, cls_b;
  std::vector<Tensor> all;
};

BiLstmModel::BiLstmModel(BiLstmConfig cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.vocab_size == 0) cfg_.vocab_size = vocab_.size();
  cfg_.validate();
  if (cfg_.vocab_size != vocab_.size()) {
    throw ConfigError("bilstm config vocab_size " + std::to_string(cfg_.vocab_size) +
                      " != vocabulary size " + std::to_string(vocab_.size()));
  }
  Rng rng(seed);
  const int e = cfg_.embedding_dim;
  const int h = cfg_.hidden_dim;
  emb_ = init_normal(cfg_.vocab_size, e, rng, 0.1);
  w_ih_f_ = init_xavier(e, 4 * h, rng);
  w_hh_f_ = init_xavier(h, 4 * h, rng);
  w_ih_b_ = init_xavier(e, 4 * h, rng);
  w_hh_b_ = init_xavier(h, 4 * h, rng);
  b_f_ = Matrix::Zero(1, 4 * h);
  b_b_ = Matrix::Zero(1, 4 * h);
  b_f_.middleCols(h, h).setConstant(1.0);  // forget-gate bias
  b_b_.middleCols(h, h).setConstant(1.0);
  att_w_ = init_xavier(2 * h, h, rng);
  att_v_ = init_xavier(h, 1, rng);
  const int feat = cfg_.pair_input ? 8 * h : 2 * h;
  cls_w_ = Matrix::Zero(feat, cfg_.num_classes);
  cls_b_ = Matrix::Zero(1, cfg_.num_classes);
}

Encoded BiLstmModel::encode(const TokenSequence& seq, bool /*include_specials*/) const {
  if (seq.tokens.empty()) throw LengthError("bilstm: empty sequence");
  if (seq.is_pair() != cfg_.pair_input) {
    throw ContractError(std::string("bilstm configured for ") +
                        (cfg_.pair_input ? "pair" : "single") + " input, got the opposite");
  }
  if (seq.is_pair() && (seq.pair_boundary <= 0 || seq.pair_boundary >= seq.length())) {
    throw ContractError("pair_boundary " + std::to_string(seq.pair_boundary) +
                        " outside (0, " + std::to_string(seq.length()) + ")");
  }
  Encoded out;
  out.label = seq.label;
  out.pair_boundary = seq.pair_boundary;
  out.tokens = seq.tokens;
  out.ids.reserve(seq.tokens.size());
  for (const std::string& tok : seq.tokens) out.ids.push_back(vocab_.lookup(tok));
  out.scored.resize(out.ids.size());
  for (std::size_t i = 0; i < out.ids.size(); ++i) out.scored[i] = static_cast<int>(i);
  return out;
}

Matrix BiLstmModel::scored_embeddings(const Encoded& in) const {
  Matrix e(static_cast<Eigen::Index>(in.ids.size()), cfg_.embedding_dim);
  for (std::size_t i = 0; i < in.ids.size(); ++i) {
    e.row(static_cast<Eigen::Index>(i)) = emb_.row(in.ids[i]);
  }
  return e;
}

Matrix BiLstmModel::baseline_embeddings(const Encoded& in) const {
  Matrix e(static_cast<Eigen::Index>(in.ids.size()), cfg_.embedding_dim);
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) = emb_.row(cfg_.pad_id);
  return e;
}

Matrix BiLstmModel::embed_tokens(const std::vector<int>& ids) const {
  Matrix e(static_cast<Eigen::Index>(ids.size()), cfg_.embedding_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg_.vocab_size) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    e.row(static_cast<Eigen::Index>(i)) = emb_.row(ids[i]);
  }
  return e;
}

BiLstmModel::Bound BiLstmModel::bind(Tape& tape, bool requires_grad) const {
  Bound b;
  const auto mk = [&](const Matrix& m) {
    Tensor t = tape.leaf(m, requires_grad);
    b.all.push_back(t);
    return t;
  };
  b.emb = mk(emb_);
  b.w_ih_f = mk(w_ih_f_);
  b.w_hh_f = mk(w_hh_f_);
  b.b_f = mk(b_f_);
  b.w_ih_b = mk(w_ih_b_);
  b.w_hh_b = mk(w_hh_b_);
  b.b_b = mk(b_b_);
  b.att_w = mk(att_w_);
  b.att_v = mk(att_v_);
  b.cls_w = mk(cls_w_);
  b.cls_b = mk(cls_b_);
  return b;
}

std::vector<std::pair<std::string, Matrix*>> BiLstmModel::parameters() {
  return {{"emb", &emb_},     {"w_ih_f", &w_ih_f_}, {"w_hh_f", &w_hh_f_}, {"b_f", &b_f_},
          {"w_ih_b", &w_ih_b_}, {"w_hh_b", &w_hh_b_}, {"b_b", &b_b_},       {"att_w", &att_w_},
          {"att_v", &att_v_},   {"cls_w", &cls_w_},   {"cls_b", &cls_b_}};
}

// One direction of the recurrence; returns the per-step hidden states.
static std::vector<Tensor> lstm_direction(Tape& tape, const Tensor& emb, const Tensor& w_ih,
                                          const Tensor& w_hh, const Tensor& bias, int hidden,
                                          bool reverse) {
  const Eigen::Index n = emb.rows();
  Tensor h = tape.leaf(Matrix::Zero(1, hidden));
  Tensor c = tape.leaf(Matrix::Zero(1, hidden));
  std::vector<Tensor> states(static_cast<std::size_t>(n));
  for (Eigen::Index step = 0; step < n; ++step) {
    const Eigen::Index t = reverse ? n - 1 - step : step;
    Tensor x = slice(emb, 0, t, 1);
    Tensor gates = add(add(matmul(x, w_ih), matmul(h, w_hh)), bias);
    Tensor ig = sigmoid(slice(gates, 1, 0, hidden));
    Tensor fg = sigmoid(slice(gates, 1, hidden, hidden));
    Tensor gg = exagree::tanh(slice(gates, 1, 2 * hidden, hidden));
    Tensor og = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    c = add(mul(fg, c), mul(ig, gg));
    h = mul(og, exagree::tanh(c));
    states[static_cast<std::size_t>(t)] = h;
  }
  return states;
}

std::pair<Tensor, Tensor> BiLstmModel::encode_segment(Tape& tape, const Bound& p, const Tensor& emb,
                                                      const std::vector<int>& ids) const {
  const int h = cfg_.hidden_dim;
  const Eigen::Index n = emb.rows();
  std::vector<Tensor> fwd = lstm_direction(tape, emb, p.w_ih_f, p.w_hh_f, p.b_f, h, false);
  std::vector<Tensor> bwd = lstm_direction(tape, emb, p.w_ih_b, p.w_hh_b, p.b_b, h, true);
  std::vector<Tensor> rows(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) {
    rows[static_cast<std::size_t>(t)] =
        concat({fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]}, 1);
  }
  Tensor states = concat(rows, 0);  // n x 2h

  Eigen::Index n_nonpad = 0;
  Matrix mask_row = Matrix::Zero(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ids[static_cast<std::size_t>(i)] == cfg_.pad_id) {
      mask_row(0, i) = kMaskValue;
    } else {
      ++n_nonpad;
    }
  }

  Tensor alpha;
  if (activation_ == AttentionActivation::uniform) {
    Matrix u = Matrix::Zero(1, n);
    const double w = 1.0 / static_cast<double>(n_nonpad > 0 ? n_nonpad : n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (n_nonpad == 0 || mask_row(0, i) == 0.0) u(0, i) = w;
    }
    alpha = tape.leaf(u);
  } else {
    Tensor scores = transpose(matmul(exagree::tanh(matmul(states, p.att_w)), p.att_v));
    alpha = softmax(add(scores, tape.leaf(mask_row)), 1);
  }
  return {matmul(alpha, states), alpha};
}

Tensor BiLstmModel::forward_core(Tape& tape, const Bound& p, const Encoded& in,
                                 const Tensor* scored_emb, AttentionRecord* attn) const {
  Tensor emb_all = scored_emb ? *scored_emb : gather_rows(p.emb, in.ids);
  if (emb_all.rows() != static_cast<Eigen::Index>(in.ids.size()) ||
      emb_all.cols() != cfg_.embedding_dim) {
    throw ShapeError("embedding tensor " + shape_str(emb_all.value()) + " does not match [" +
                     std::to_string(in.ids.size()) + " x " + std::to_string(cfg_.embedding_dim) + "]");
  }
  if (attn) {
    attn->kind = AttentionRecord::Kind::bilstm;
    attn->scored = in.scored;
    attn->pad_mask.assign(in.ids.size(), 0);
    for (std::size_t i = 0; i < in.ids.size(); ++i) {
      if (in.ids[i] == cfg_.pad_id) attn->pad_mask[i] = 1;
    }
  }

  Tensor feats;
  if (!cfg_.pair_input) {
    auto [ctx, alpha] = encode_segment(tape, p, emb_all, in.ids);
    if (attn) attn->vectors.push_back(alpha.value().row(0).transpose());
    feats = ctx;
  } else {
    const int b = in.pair_boundary;
    const int n = in.length();
    std::vector<int> ids1(in.ids.begin(), in.ids.begin() + b);
    std::vector<int> ids2(in.ids.begin() + b, in.ids.end());
    auto [c1, a1] = encode_segment(tape, p, slice(emb_all, 0, 0, b), ids1);
    auto [c2, a2] = encode_segment(tape, p, slice(emb_all, 0, b, n - b), ids2);
    if (attn) {
      attn->vectors.push_back(a1.value().row(0).transpose());
      attn->vectors.push_back(a2.value().row(0).transpose());
    }
    feats = concat({c1, c2, exagree::abs(sub(c1, c2)), mul(c1, c2)}, 1);
  }
  return add(matmul(feats, p.cls_w), p.cls_b);
}

Prediction BiLstmModel::predict(const Encoded& in, AttentionRecord* attn) const {
  Tape tape(false);
  Bound p = bind(tape, false);
  Tensor logits = forward_core(tape, p, in, nullptr, attn);
  return prediction_from_logits(logits.value().row(0).transpose());
}

Tensor BiLstmModel::logits_from_embeddings(Tape& tape, const Tensor& scored_emb,
                                           const Encoded& in) const {
  Bound p = bind(tape, false);
  return forward_core(tape, p, in, &scored_emb, nullptr);
}

Tensor BiLstmModel::batch_loss_on_tape(Tape& tape, const std::vector<const Encoded*>& batch,
                                       std::vector<Tensor>* bound_params) {
  if (batch.empty()) throw ContractError("batch_loss_on_tape: empty batch");
  Bound p = bind(tape, true);
  if (bound_params) *bound_params = p.all;
  Tensor total;
  for (const Encoded* in : batch) {
    Tensor loss = cross_entropy(forward_core(tape, p, *in, nullptr, nullptr), in->label);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scalar_mul(1.0 / static_cast<double>(batch.size()), total);
}

Matrix BiLstmModel::hidden_states(const std::vector<int>& ids) const {
  if (ids.empty()) throw LengthError("bilstm: empty sequence");
  Tape tape(false);
  Bound p = bind(tape, false);
  Tensor emb = gather_rows(p.emb, ids);
  const int h = cfg_.hidden_dim;
  std::vector<Tensor> fwd = lstm_direction(tape, emb, p.w_ih_f, p.w_hh_f, p.b_f, h, false);
  std::vector<Tensor> bwd = lstm_direction(tape, emb, p.w_ih_b, p.w_hh_b, p.b_b, h, true);
  Matrix out(static_cast<Eigen::Index>(ids.size()), 2 * h);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    out.row(static_cast<Eigen::Index>(t)) << fwd[t].value(), bwd[t].value();
  }
  return out;
}

}  // namespace exagree
