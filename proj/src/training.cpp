#include "exagree/training.hpp"

#include <cmath>

#include "exagree/rng.hpp"

namespace exagree {

void TrainingConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("training: max_epochs must be >= 1");
  if (patience < 0 || patience > max_epochs) {
    throw ConfigError("training: patience must lie in [0, max_epochs]");
  }
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (learning_rate < 0.0) throw ConfigError("training: learning_rate must be >= 0");
}

AdamOptimizer::AdamOptimizer(double learning_rate, bool amsgrad, double beta1, double beta2,
                             double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), amsgrad_(amsgrad) {}

void AdamOptimizer::step(const std::vector<std::pair<std::string, Matrix*>>& params,
                         const std::vector<Tensor>& bound) {
  if (params.size() != bound.size()) {
    throw ContractError("optimizer: bound tensor count does not match parameter count");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    if (amsgrad_) vmax_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix& p = *params[i].second;
      m_[i] = Matrix::Zero(p.rows(), p.cols());
      v_[i] = Matrix::Zero(p.rows(), p.cols());
      if (amsgrad_) vmax_[i] = Matrix::Zero(p.rows(), p.cols());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = bound[i].grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * g.array().square()).matrix();
    const Eigen::ArrayXXd m_hat = m_[i].array() / bc1;
    Eigen::ArrayXXd v_hat = v_[i].array() / bc2;
    if (amsgrad_) {
      vmax_[i] = vmax_[i].array().max(v_hat).matrix();
      v_hat = vmax_[i].array();
    }
    params[i].second->array() -= lr_ * m_hat / (v_hat.sqrt() + eps_);
  }
}

double evaluate_accuracy(const Model& model, const std::vector<TokenSequence>& data) {
  if (data.empty()) throw ContractError("evaluate_accuracy: empty dataset");
  long correct = 0;
  for (const TokenSequence& seq : data) {
    if (model.predict(model.encode(seq)).predicted == seq.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

History train(Model& model, const std::vector<TokenSequence>& train_set,
              const std::vector<TokenSequence>& val_set, const TrainingConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ContractError("train: empty dataset");
  for (const TokenSequence& s : train_set) {
    if (s.label < 0 || s.label >= model.num_classes()) {
      throw ContractError("train: label " + std::to_string(s.label) + " outside " +
                          std::to_string(model.num_classes()) + " classes");
    }
  }
  model.set_activation(cfg.attention_activation);
  double lr = cfg.learning_rate;
  if (lr == 0.0) lr = model.kind() == "bilstm" ? 1e-2 : 1e-3;
  AdamOptimizer opt(lr, cfg.amsgrad);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5u));

  std::vector<Encoded> encoded(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) encoded[i] = model.encode(train_set[i]);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  History hist;
  std::vector<Matrix> best_params;
  int stale = 0;
  const auto params = model.parameters();

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Encoded*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&encoded[order[i]]);
      Tape tape;
      std::vector<Tensor> bound;
      Tensor loss = model.batch_loss_on_tape(tape, batch, &bound);
      const double l = loss.value()(0, 0);
      if (!std::isfinite(l)) throw TrainingError("training loss diverged", epoch + 1);
      tape.backward(loss);
      opt.step(params, bound);
      loss_sum += l;
      ++batches;
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.val_accuracy = evaluate_accuracy(model, val_set);
    hist.epochs.push_back(stats);

    if (stats.val_accuracy > hist.best_val_accuracy || hist.best_epoch < 0) {
      hist.best_val_accuracy = stats.val_accuracy;
      hist.best_epoch = epoch;
      best_params.clear();
      best_params.reserve(params.size());
      for (const auto& [name, p] : params) best_params.push_back(*p);
      stale = 0;
    } else {
      ++stale;
    }
    if (stale >= cfg.patience) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = best_params[i];
  return hist;
}

}  // namespace exagree
