#include "exagree/model.hpp"

#include <cmath>

namespace exagree {

void TransformerConfig::validate() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || ff_dim < 1 || num_classes < 2 || max_len < 2) {
    throw ConfigError("transformer config: all sizes must be positive and num_classes >= 2");
  }
  if (model_dim % heads != 0) {
    throw ConfigError("transformer config: model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (vocab_size < 4) throw ConfigError("transformer config: vocab_size must cover the reserved ids");
}

void BiLstmConfig::validate() const {
  if (hidden_dim < 1 || embedding_dim < 1 || num_classes < 2) {
    throw ConfigError("bilstm config: hidden_dim, embedding_dim >= 1 and num_classes >= 2");
  }
  if (vocab_size < 4) throw ConfigError("bilstm config: vocab_size must cover the reserved ids");
}

std::vector<std::pair<std::string, const Matrix*>> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mut.size());
  for (auto& [name, m] : mut) out.emplace_back(name, m);
  return out;
}

Prediction Model::predict_masked(const Encoded& in, const std::vector<std::uint8_t>& keep) const {
  if (keep.size() != in.scored.size()) {
    throw ContractError("predict_masked: keep mask length " + std::to_string(keep.size()) +
                        " != scored count " + std::to_string(in.scored.size()));
  }
  Encoded masked = in;
  const int pad = vocab().pad_id();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) masked.ids[static_cast<std::size_t>(in.scored[i])] = pad;
  }
  return predict(masked);
}

Prediction prediction_from_logits(const Eigen::VectorXd& logits) {
  Prediction p;
  p.logits = logits;
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  p.probs = (e / e.sum()).matrix();
  logits.maxCoeff(&p.predicted);
  // argmax ties resolve to the lowest index via maxCoeff scan order
  return p;
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy: logits must be 1 x C, got " + shape_str(logits.value()));
  if (label < 0 || label >= logits.cols()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(logits.cols()) + " classes");
  }
  Tensor probs = softmax(logits, 1);
  Tensor p = slice(probs, 1, label, 1);
  return neg(log(p));
}

std::unique_ptr<Model> clone_model(const Model& model) {
  if (const auto* t = dynamic_cast<const TransformerModel*>(&model)) {
    return std::make_unique<TransformerModel>(*t);
  }
  if (const auto* b = dynamic_cast<const BiLstmModel*>(&model)) {
    return std::make_unique<BiLstmModel>(*b);
  }
  throw CapabilityError("clone_model: unsupported model kind " + model.kind());
}

std::unique_ptr<Model> ablate_uniform(const Model& model) {
  auto copy = clone_model(model);
  copy->set_activation(AttentionActivation::uniform);
  return copy;
}

}  // namespace exagree
