#include "cilforge/optim.hpp"

#include <cmath>

namespace cilforge {

double scheduled_lr(const OptimConfig& config, int epoch) {
  int passed = 0;
  for (int m : config.milestones) {
    if (m <= epoch) ++passed;
  }
  return config.learning_rate * std::pow(config.lr_decay, passed);
}

Optimizer::Optimizer(OptimConfig config, std::vector<Tensor> params)
    : config_(std::move(config)), params_(std::move(params)), lr_(scheduled_lr(config_, 0)) {
  first_.resize(params_.size());
  second_.resize(params_.size());
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = first_[k];
    if (m.empty()) m.assign(w.size(), 0.0);
    if (config_.kind == OptimKind::kSgdMomentum) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + config_.weight_decay * w[i];
        m[i] = config_.momentum * m[i] + gi;
        w[i] -= lr_ * m[i];
      }
    } else {
      auto& v = second_[k];
      if (v.empty()) v.assign(w.size(), 0.0);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + config_.weight_decay * w[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        w[i] -= lr_ * mh / (std::sqrt(vh) + config_.epsilon);
      }
    }
  }
}

}  // namespace cilforge
