#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/learners/transport.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {

CoilLearner::CoilLearner(LearnerConfig config, FrozenBackbone backbone)
    : FinetuneLearner(std::move(config), std::move(backbone), {"coil_eps", "coil_beta", "sinkhorn_iters"}) {}

void CoilLearner::begin_task(const TaskContext& ctx) {
  const int ko = ctx.known_classes;
  if (ko == 0) {
    old_net_.reset();
    old_head_ = LinearHead{};
    plan_ = back_transfer_ = Tensor();
    FinetuneLearner::begin_task(ctx);
    return;
  }
  old_net_ = net_.copy(false);
  old_head_ = head_.copy(false);
  const std::size_t d = net_.spec.embed_dim;
  const auto kn = static_cast<std::size_t>(ctx.total_classes - ko);

  // Old prototypes from exemplars; a class without exemplars falls back to
  // the direction of its classifier weight.
  const Tensor old_w = ops::transpose(old_head_.weight);  // [Ko x d]
  Tensor proto_old = detail::normalized_class_means(Tensor(), {}, 0, 0, ops::normalize(old_w),
                                                    static_cast<std::size_t>(ko), d);
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (int c = 0; c < ko; ++c) {
    if (!ctx.store->has_class(c)) continue;
    for (std::size_t r : ctx.store->class_rows(c)) {
      rows.push_back(r);
      labels.push_back(c);
    }
  }
  if (!rows.empty()) {
    proto_old = detail::normalized_class_means(features(ctx.full_train->batch(rows)), labels, 0, ko,
                                               proto_old, static_cast<std::size_t>(ko), d);
  }
  std::vector<int> local(ctx.train->labels);
  for (int& y : local) y -= ko;
  const Tensor proto_new = detail::normalized_class_means(features(ctx.train->batch()), local, 0,
                                                          static_cast<int>(kn), Tensor(), kn, d);

  SinkhornOptions opts;
  opts.eps = option<double>("coil_eps", 0.1);
  opts.max_iter = option<int>("sinkhorn_iters", 5000);
  plan_ = class_transport_plan(proto_old, proto_new, opts);
  const Tensor transported = coil_transfer(old_w, proto_old, proto_new, opts);  // [Kn x d], unit rows

  FinetuneLearner::begin_task(ctx);
  // Transported directions, scaled to the mean norm of the old weights.
  double mean_norm = 0.0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(ko); ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += std::pow(old_w.data()[c * d + k], 2);
    mean_norm += std::sqrt(s) / ko;
  }
  auto w = head_.weight.mutable_data();
  const std::size_t total = static_cast<std::size_t>(ctx.total_classes);
  for (std::size_t j = 0; j < kn; ++j) {
    for (std::size_t k = 0; k < d; ++k) w[k * total + ko + j] = mean_norm * transported.data()[j * d + k];
  }
  std::vector<double> back(kn * static_cast<std::size_t>(ko));
  for (std::size_t j = 0; j < kn; ++j) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(ko); ++i) back[j * ko + i] = ko * plan_.data()[i * kn + j];
  }
  back_transfer_ = Tensor({kn, static_cast<std::size_t>(ko)}, std::move(back));
}

void CoilLearner::begin_epoch(std::size_t, int epoch) {
  const int epochs = std::max(1, phase_epochs(0));
  backward_weight_ = option<double>("coil_beta", 1.0) * (1.0 - static_cast<double>(epoch) / epochs);
}

Tensor CoilLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  const Tensor f = encode(net_, inputs);
  const Tensor logits = head_(f);
  Tensor loss = ops::cross_entropy(logits, labels);
  if (!old_net_) return loss;
  const double t = config_.optim.temperature;
  const std::size_t ko = old_head_.classes();
  const Tensor old_logits = old_head_(encode(*old_net_, inputs));
  loss = ops::add(loss, kd_loss(ops::slice(logits, 1, 0, ko), old_logits, t));
  if (backward_weight_ > 0.0) {
    // Old-class weights rebuilt from the new heads through the transposed plan.
    const Tensor w_new = ops::slice(head_.weight, 1, ko, head_.classes() - ko);
    const Tensor back_logits = ops::matmul(f, ops::matmul(w_new, back_transfer_));
    loss = ops::add(loss, ops::scale(kd_loss(back_logits, old_logits, t), backward_weight_));
  }
  return loss;
}

std::vector<std::string> CoilLearner::decisions() const {
  return {"transport cost: 1 - cosine between class prototypes (not classifier weights)",
          "forward transfer: new heads initialised from transported old weights",
          "backward transfer: old-class logits from transposed-plan new weights distilled to the old "
          "model, weight decaying linearly over epochs",
          "kd: temperature-scaled KL with T^2 factor"};
}

}  // namespace cilforge
