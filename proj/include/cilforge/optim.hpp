#pragma once

#include <vector>

#include "cilforge/tensor.hpp"

namespace cilforge {

enum class OptimKind { kSgdMomentum, kAdam };

struct OptimConfig {
  OptimKind kind = OptimKind::kAdam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  // Epoch indices at which the rate is multiplied by lr_decay.
  std::vector<int> milestones;
  double lr_decay = 0.1;
};

// base_lr * lr_decay ^ (number of milestones <= epoch)
double scheduled_lr(const OptimConfig& config, int epoch);

// First-order optimizer over a fixed parameter list. Weight decay is applied
// as an L2 term added to the gradient. Parameters that received no gradient in
// a step are left untouched.
class Optimizer {
 public:
  Optimizer(OptimConfig config, std::vector<Tensor> params);

  void set_epoch(int epoch) { lr_ = scheduled_lr(config_, epoch); }
  double current_lr() const { return lr_; }

  void zero_grad();
  void step();

  const std::vector<Tensor>& params() const { return params_; }

 private:
  OptimConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_;   // momentum / Adam m
  std::vector<std::vector<double>> second_;  // Adam v
  long steps_ = 0;
  double lr_;
};

}  // namespace cilforge
