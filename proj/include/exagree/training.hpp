#pragma once

#include <cstdint>
#include <vector>

#include "exagree/model.hpp"

namespace exagree {

struct TrainingConfig {
  int max_epochs = 40;
  int patience = 5;
  double learning_rate = 0.0;  // 0 = architecture default (1e-3 transformer, 1e-2 bilstm)
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool amsgrad = true;
  AttentionActivation attention_activation = AttentionActivation::softmax;
  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // 0-based index into epochs
  double best_val_accuracy = 0.0;
};

/// Adam with the optional AMSGrad maximum on the second-moment estimate.
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, bool amsgrad, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(const std::vector<std::pair<std::string, Matrix*>>& params,
            const std::vector<Tensor>& bound);

 private:
  double lr_, beta1_, beta2_, eps_;
  bool amsgrad_;
  long t_ = 0;
  std::vector<Matrix> m_, v_, vmax_;
};

/// Trains in place and leaves the model at the best-validation-accuracy
/// epoch's weights. Stops once `patience` consecutive epochs fail to improve
/// validation accuracy (patience 0 stops after the first epoch).
History train(Model& model, const std::vector<TokenSequence>& train_set,
              const std::vector<TokenSequence>& val_set, const TrainingConfig& cfg);

double evaluate_accuracy(const Model& model, const std::vector<TokenSequence>& data);

}  // namespace exagree
