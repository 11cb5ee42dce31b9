#include <cmath>
#include <numeric>

#include "exagree/model.hpp"
#include "param_init.hpp"

namespace exagree {

namespace {
constexpr double kMaskValue = -1e9;
}

struct TransformerModel::Bound {
  Tensor tok_emb, pos_emb, pool_w, pool_b, cls_w, cls_b;
  struct Layer {
    Tensor wq, wk, wv, wo, bo, w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  std::vector<Tensor> all;  // parameters() order
};

TransformerModel::TransformerModel(TransformerConfig cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  if (cfg_.vocab_size == 0) cfg_.vocab_size = vocab_.size();
  cfg_.validate();
  if (cfg_.vocab_size != vocab_.size()) {
    throw ConfigError("transformer config vocab_size " + std::to_string(cfg_.vocab_size) +
                      " != vocabulary size " + std::to_string(vocab_.size()));
  }
  Rng rng(seed);
  const int d = cfg_.model_dim;
  tok_emb_ = init_normal(cfg_.vocab_size, d, rng, 0.02);
  pos_emb_ = init_normal(cfg_.max_len, d, rng, 0.02);
  layers_.resize(static_cast<std::size_t>(cfg_.layers));
  for (auto& l : layers_) {
    l.wq = init_xavier(d, d, rng);
    l.wk = init_xavier(d, d, rng);
    l.wv = init_xavier(d, d, rng);
    l.wo = init_xavier(d, d, rng);
    l.bo = Matrix::Zero(1, d);
    l.w1 = init_xavier(d, cfg_.ff_dim, rng);
    l.b1 = Matrix::Zero(1, cfg_.ff_dim);
    l.w2 = init_xavier(cfg_.ff_dim, d, rng);
    l.b2 = Matrix::Zero(1, d);
  }
  pool_w_ = init_xavier(d, d, rng);
  pool_b_ = Matrix::Zero(1, d);
  cls_w_ = Matrix::Zero(d, cfg_.num_classes);  // zero output layer: untrained logits are all equal
  cls_b_ = Matrix::Zero(1, cfg_.num_classes);
}

Encoded TransformerModel::encode(const TokenSequence& seq, bool include_specials) const {
  if (seq.tokens.empty()) throw LengthError("transformer: empty sequence");
  if (seq.is_pair() && (seq.pair_boundary <= 0 || seq.pair_boundary >= seq.length())) {
    throw ContractError("pair_boundary " + std::to_string(seq.pair_boundary) +
                        " outside (0, " + std::to_string(seq.length()) + ")");
  }
  Encoded out;
  out.label = seq.label;
  out.ids.push_back(cfg_.cls_id);
  out.tokens.push_back(Vocabulary::kCls);
  for (int i = 0; i < seq.length(); ++i) {
    if (seq.is_pair() && i == seq.pair_boundary) {
      out.pair_boundary = static_cast<int>(out.ids.size());
      out.ids.push_back(cfg_.sep_id);
      out.tokens.push_back(Vocabulary::kSep);
    }
    out.ids.push_back(vocab_.lookup(seq.tokens[static_cast<std::size_t>(i)]));
    out.tokens.push_back(seq.tokens[static_cast<std::size_t>(i)]);
  }
  if (out.length() > cfg_.max_len) {
    throw LengthError("wrapped sequence length " + std::to_string(out.length()) +
                      " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  for (int p = 0; p < out.length(); ++p) {
    const bool special = p == 0 || (out.pair_boundary >= 0 && p == out.pair_boundary);
    if (include_specials || !special) out.scored.push_back(p);
  }
  return out;
}

Matrix TransformerModel::scored_embeddings(const Encoded& in) const {
  Matrix e(static_cast<Eigen::Index>(in.scored.size()), cfg_.model_dim);
  for (std::size_t i = 0; i < in.scored.size(); ++i) {
    e.row(static_cast<Eigen::Index>(i)) = tok_emb_.row(in.ids[static_cast<std::size_t>(in.scored[i])]);
  }
  return e;
}

Matrix TransformerModel::baseline_embeddings(const Encoded& in) const {
  Matrix e(static_cast<Eigen::Index>(in.scored.size()), cfg_.model_dim);
  for (Eigen::Index i = 0; i < e.rows(); ++i) e.row(i) = tok_emb_.row(cfg_.pad_id);
  return e;
}

Matrix TransformerModel::embed_tokens(const std::vector<int>& ids) const {
  Matrix e(static_cast<Eigen::Index>(ids.size()), cfg_.model_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= cfg_.vocab_size) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary");
    }
    e.row(static_cast<Eigen::Index>(i)) = tok_emb_.row(ids[i]);
  }
  return e;
}

TransformerModel::Bound TransformerModel::bind(Tape& tape, bool requires_grad) const {
  Bound b;
  const auto mk = [&](const Matrix& m) {
    Tensor t = tape.leaf(m, requires_grad);
    b.all.push_back(t);
    return t;
  };
  b.tok_emb = mk(tok_emb_);
  b.pos_emb = mk(pos_emb_);
  b.layers.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerParams& l = layers_[i];
    Bound::Layer& bl = b.layers[i];
    bl.wq = mk(l.wq);
    bl.wk = mk(l.wk);
    bl.wv = mk(l.wv);
    bl.wo = mk(l.wo);
    bl.bo = mk(l.bo);
    bl.w1 = mk(l.w1);
    bl.b1 = mk(l.b1);
    bl.w2 = mk(l.w2);
    bl.b2 = mk(l.b2);
  }
  b.pool_w = mk(pool_w_);
  b.pool_b = mk(pool_b_);
  b.cls_w = mk(cls_w_);
  b.cls_b = mk(cls_b_);
  return b;
}

std::vector<std::pair<std::string, Matrix*>> TransformerModel::parameters() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("tok_emb", &tok_emb_);
  out.emplace_back("pos_emb", &pos_emb_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerParams& l = layers_[i];
    out.emplace_back(p + "wq", &l.wq);
    out.emplace_back(p + "wk", &l.wk);
    out.emplace_back(p + "wv", &l.wv);
    out.emplace_back(p + "wo", &l.wo);
    out.emplace_back(p + "bo", &l.bo);
    out.emplace_back(p + "w1", &l.w1);
    out.emplace_back(p + "b1", &l.b1);
    out.emplace_back(p + "w2", &l.w2);
    out.emplace_back(p + "b2", &l.b2);
  }
  out.emplace_back("pool_w", &pool_w_);
  out.emplace_back("pool_b", &pool_b_);
  out.emplace_back("cls_w", &cls_w_);
  out.emplace_back("cls_b", &cls_b_);
  return out;
}

Tensor TransformerModel::forward_core(Tape& tape, const Bound& p, const Encoded& in,
                                      const Tensor* scored_emb, AttentionRecord* attn) const {
  const Eigen::Index m = in.length();
  const int heads = cfg_.heads;
  const Eigen::Index dh = cfg_.model_dim / heads;

  Tensor x_tok;
  if (scored_emb == nullptr) {
    x_tok = gather_rows(p.tok_emb, in.ids);
  } else if (static_cast<Eigen::Index>(in.scored.size()) == m) {
    if (scored_emb->rows() != m || scored_emb->cols() != cfg_.model_dim) {
      throw ShapeError("scored embeddings " + shape_str(scored_emb->value()) + " do not match [" +
                       std::to_string(m) + " x " + std::to_string(cfg_.model_dim) + "]");
    }
    x_tok = *scored_emb;
  } else {
    // specials excluded from scoring: their embeddings stay constant
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(m));
    std::size_t k = 0;
    for (Eigen::Index pos = 0; pos < m; ++pos) {
      if (k < in.scored.size() && in.scored[k] == pos) {
        rows.push_back(slice(*scored_emb, 0, static_cast<Eigen::Index>(k), 1));
        ++k;
      } else {
        rows.push_back(gather_rows(p.tok_emb, {in.ids[static_cast<std::size_t>(pos)]}));
      }
    }
    x_tok = concat(rows, 0);
  }

  std::vector<int> positions(static_cast<std::size_t>(m));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(x_tok, gather_rows(p.pos_emb, positions));

  std::vector<std::uint8_t> pad_mask(static_cast<std::size_t>(m), 0);
  Eigen::Index n_nonpad = 0;
  Matrix mask_row = Matrix::Zero(1, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (in.ids[static_cast<std::size_t>(i)] == cfg_.pad_id) {
      pad_mask[static_cast<std::size_t>(i)] = 1;
      mask_row(0, i) = kMaskValue;
    } else {
      ++n_nonpad;
    }
  }

  const bool uniform = activation_ == AttentionActivation::uniform;
  Tensor mask_t, uniform_t;
  if (uniform) {
    Matrix u = Matrix::Zero(m, m);
    const double w = 1.0 / static_cast<double>(n_nonpad > 0 ? n_nonpad : m);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < m; ++c) {
        if (n_nonpad == 0 || !pad_mask[static_cast<std::size_t>(c)]) u(r, c) = w;
      }
    }
    uniform_t = tape.leaf(u);
  } else {
    mask_t = tape.leaf(mask_row);
  }

  if (attn) {
    attn->kind = AttentionRecord::Kind::transformer;
    attn->layers.assign(static_cast<std::size_t>(cfg_.layers), {});
    attn->pad_mask = pad_mask;
    attn->scored = in.scored;
    attn->cls_index = 0;
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int li = 0; li < cfg_.layers; ++li) {
    const Bound::Layer& l = p.layers[static_cast<std::size_t>(li)];
    Tensor q, k;
    if (!uniform) {
      q = matmul(x, l.wq);
      k = matmul(x, l.wk);
    }
    Tensor v = matmul(x, l.wv);
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor vh = slice(v, 1, h * dh, dh);
      Tensor ah;
      if (uniform) {
        ah = uniform_t;
      } else {
        Tensor qh = slice(q, 1, h * dh, dh);
        Tensor kh = slice(k, 1, h * dh, dh);
        Tensor scores = scalar_mul(scale, matmul(qh, transpose(kh)));
        ah = softmax(add(scores, mask_t), 1);
      }
      if (attn) attn->layers[static_cast<std::size_t>(li)].push_back(ah.value());
      ctx.push_back(matmul(ah, vh));
    }
    Tensor attn_out = add(matmul(concat(ctx, 1), l.wo), l.bo);
    x = add(x, attn_out);
    Tensor ff = add(matmul(relu(add(matmul(x, l.w1), l.b1)), l.w2), l.b2);
    x = add(x, ff);
  }

  Tensor cls_vec = slice(x, 0, 0, 1);
  Tensor pooled = exagree::tanh(add(matmul(cls_vec, p.pool_w), p.pool_b));
  return add(matmul(pooled, p.cls_w), p.cls_b);
}

Prediction TransformerModel::predict(const Encoded& in, AttentionRecord* attn) const {
  Tape tape(false);
  Bound p = bind(tape, false);
  Tensor logits = forward_core(tape, p, in, nullptr, attn);
  return prediction_from_logits(logits.value().row(0).transpose());
}

Tensor TransformerModel::logits_from_embeddings(Tape& tape, const Tensor& scored_emb,
                                                const Encoded& in) const {
  Bound p = bind(tape, false);
  return forward_core(tape, p, in, &scored_emb, nullptr);
}

Tensor TransformerModel::batch_loss_on_tape(Tape& tape, const std::vector<const Encoded*>& batch,
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

}  // namespace exagree
