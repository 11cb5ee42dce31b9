#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "exagree/data.hpp"
#include "exagree/tensor.hpp"

namespace exagree {

enum class AttentionActivation { softmax, uniform };

/// Post-softmax attention captured during a forward pass.
/// Transformer: layers[l][h] holds an n x n row-stochastic matrix over the
/// wrapped sequence (specials included). BiLSTM: one weight vector per input
/// sequence (two for pair tasks), each summing to 1 over non-pad positions.
struct AttentionRecord {
  enum class Kind { transformer, bilstm };
  Kind kind = Kind::transformer;
  std::vector<std::vector<Matrix>> layers;
  std::vector<Eigen::VectorXd> vectors;
  std::vector<std::uint8_t> pad_mask;  // wrapped positions that hold the padding token
  std::vector<int> scored;             // wrapped positions that receive explanation scores
  int cls_index = 0;
};

struct Prediction {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  int predicted = -1;
};

/// A TokenSequence mapped into a model's input layout. For the transformer
/// that means [cls] s1 ([sep] s2); the BiLSTM consumes raw tokens. `scored`
/// lists the positions that receive explanation scores and are maskable by
/// perturbation methods.
struct Encoded {
  std::vector<int> ids;
  std::vector<std::string> tokens;
  std::vector<int> scored;
  int pair_boundary = -1;  // position in model layout where the second sequence starts
  int label = -1;

  int length() const { return static_cast<int>(ids.size()); }
  std::vector<std::string> scored_tokens() const {
    std::vector<std::string> out;
    out.reserve(scored.size());
    for (const int p : scored) out.push_back(tokens[static_cast<std::size_t>(p)]);
    return out;
  }
};

struct TransformerConfig {
  int layers = 2;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 128;
  int vocab_size = 0;
  int max_len = 64;
  int num_classes = 2;
  int pad_id = 0;
  int cls_id = 2;
  int sep_id = 3;
  void validate() const;
};

struct BiLstmConfig {
  int hidden_dim = 64;
  int embedding_dim = 64;
  int vocab_size = 0;
  int num_classes = 2;
  int pad_id = 0;
  bool pair_input = false;  // pair tasks decode from [c1, c2, |c1-c2|, c1*c2]
  void validate() const;
};

/// Shared classifier surface consumed by training, the attribution methods
/// and the experiment harness. Implementations must be safe for concurrent
/// read-only use once training has finished.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string kind() const = 0;
  virtual int num_classes() const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual AttentionActivation activation() const = 0;
  virtual void set_activation(AttentionActivation a) = 0;

  virtual Encoded encode(const TokenSequence& seq, bool include_specials = true) const = 0;
  virtual Prediction predict(const Encoded& in, AttentionRecord* attn = nullptr) const = 0;

  /// Token embeddings of the scored positions, one row per scored token.
  virtual Matrix scored_embeddings(const Encoded& in) const = 0;
  /// Padding-token embedding replicated to the scored shape.
  virtual Matrix baseline_embeddings(const Encoded& in) const = 0;
  /// Embedding rows for arbitrary token ids (reference inputs, baselines).
  virtual Matrix embed_tokens(const std::vector<int>& ids) const = 0;
  /// Differentiable forward where the scored positions' token embeddings are
  /// replaced by `scored_emb` (a tensor recorded on `tape`). Used by all
  /// gradient-based attribution methods.
  virtual Tensor logits_from_embeddings(Tape& tape, const Tensor& scored_emb,
                                        const Encoded& in) const = 0;

  /// Named parameter matrices, in a stable order.
  virtual std::vector<std::pair<std::string, Matrix*>> parameters() = 0;
  std::vector<std::pair<std::string, const Matrix*>> parameters() const;

  /// Mean cross-entropy over the batch, recorded on `tape`. `bound_params`
  /// receives the parameter leaves in parameters() order so an optimizer can
  /// read their gradients after backward.
  virtual Tensor batch_loss_on_tape(Tape& tape, const std::vector<const Encoded*>& batch,
                                    std::vector<Tensor>* bound_params) = 0;

  /// Forward with the scored positions marked keep[i] == 0 replaced by the
  /// padding token.
  Prediction predict_masked(const Encoded& in, const std::vector<std::uint8_t>& keep) const;
};

/// Returns a copy of the model with all attention distributions replaced by
/// uniform weights over non-padding positions.
std::unique_ptr<Model> ablate_uniform(const Model& model);

std::unique_ptr<Model> clone_model(const Model& model);

class TransformerModel : public Model {
 public:
  TransformerModel(TransformerConfig cfg, Vocabulary vocab, std::uint64_t seed);

  std::string kind() const override { return "transformer"; }
  int num_classes() const override { return cfg_.num_classes; }
  const Vocabulary& vocab() const override { return vocab_; }
  AttentionActivation activation() const override { return activation_; }
  void set_activation(AttentionActivation a) override { activation_ = a; }
  const TransformerConfig& config() const { return cfg_; }

  Encoded encode(const TokenSequence& seq, bool include_specials = true) const override;
  Prediction predict(const Encoded& in, AttentionRecord* attn = nullptr) const override;
  Matrix scored_embeddings(const Encoded& in) const override;
  Matrix baseline_embeddings(const Encoded& in) const override;
  Matrix embed_tokens(const std::vector<int>& ids) const override;
  Tensor logits_from_embeddings(Tape& tape, const Tensor& scored_emb,
                                const Encoded& in) const override;
  std::vector<std::pair<std::string, Matrix*>> parameters() override;
  Tensor batch_loss_on_tape(Tape& tape, const std::vector<const Encoded*>& batch,
                            std::vector<Tensor>* bound_params) override;

 private:
  struct LayerParams {
    Matrix wq, wk, wv, wo, bo, w1, b1, w2, b2;
  };
  struct Bound;  // parameter leaves on a tape
  Bound bind(Tape& tape, bool requires_grad) const;
  Tensor forward_core(Tape& tape, const Bound& p, const Encoded& in, const Tensor* scored_emb,
                      AttentionRecord* attn) const;

  TransformerConfig cfg_;
  Vocabulary vocab_;
  AttentionActivation activation_ = AttentionActivation::softmax;
  Matrix tok_emb_, pos_emb_, pool_w_, pool_b_, cls_w_, cls_b_;
  std::vector<LayerParams> layers_;
};

class BiLstmModel : public Model {
 public:
  BiLstmModel(BiLstmConfig cfg, Vocabulary vocab, std::uint64_t seed);

  std::string kind() const override { return "bilstm"; }
  int num_classes() const override { return cfg_.num_classes; }
  const Vocabulary& vocab() const override { return vocab_; }
  AttentionActivation activation() const override { return activation_; }
  void set_activation(AttentionActivation a) override { activation_ = a; }
  const BiLstmConfig& config() const { return cfg_; }

  Encoded encode(const TokenSequence& seq, bool include_specials = true) const override;
  Prediction predict(const Encoded& in, AttentionRecord* attn = nullptr) const override;
  Matrix scored_embeddings(const Encoded& in) const override;
  Matrix baseline_embeddings(const Encoded& in) const override;
  Matrix embed_tokens(const std::vector<int>& ids) const override;
  Tensor logits_from_embeddings(Tape& tape, const Tensor& scored_emb,
                                const Encoded& in) const override;
  std::vector<std::pair<std::string, Matrix*>> parameters() override;
  Tensor batch_loss_on_tape(Tape& tape, const std::vector<const Encoded*>& batch,
                            std::vector<Tensor>* bound_params) override;

  /// Encoder states for one sequence (rows = positions, cols = 2*hidden).
  /// Exposed so tests can recompute the attention weights externally.
  Matrix hidden_states(const std::vector<int>& ids) const;

 private:
  struct Bound;
  Bound bind(Tape& tape, bool requires_grad) const;
  /// Encodes one sequence segment and returns (context vector, attention).
  std::pair<Tensor, Tensor> encode_segment(Tape& tape, const Bound& p, const Tensor& emb,
                                           const std::vector<int>& ids) const;
  Tensor forward_core(Tape& tape, const Bound& p, const Encoded& in, const Tensor* scored_emb,
                      AttentionRecord* attn) const;

  BiLstmConfig cfg_;
  Vocabulary vocab_;
  AttentionActivation activation_ = AttentionActivation::softmax;
  Matrix emb_;
  Matrix w_ih_f_, w_hh_f_, b_f_;  // forward direction, gate order [i f g o]
  Matrix w_ih_b_, w_hh_b_, b_b_;  // backward direction
  Matrix att_w_, att_v_;
  Matrix cls_w_, cls_b_;
};

/// Cross-entropy of `logits` (1 x C) against `label`, on the logits' tape.
Tensor cross_entropy(const Tensor& logits, int label);

Prediction prediction_from_logits(const Eigen::VectorXd& logits);

}  // namespace exagree
