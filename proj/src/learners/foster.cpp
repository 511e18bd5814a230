#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {

FosterLearner::FosterLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)), net_(backbone_.model().copy(true)) {
  expect_keys({"compress_epochs", "compress_lr"});
}

Tensor FosterLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return encode(net_, x); });
}

Tensor FosterLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

Tensor FosterLearner::teacher_logits(const Tensor& inputs) const {
  if (!old_net_ || !new_net_) throw StateError("foster: no boosting model in this task");
  return teacher_head_(ops::concat({encode(*old_net_, inputs), encode(*new_net_, inputs)}, 1));
}

void FosterLearner::begin_task(const TaskContext& ctx) {
  const std::size_t d = backbone_.feature_dim();
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  if (ctx.known_classes == 0) {
    head_ = LinearHead::create(d, total, seed_for("head", ctx.task));
    return;
  }
  old_net_ = net_.copy(false);
  old_head_ = head_.copy(false);
  new_net_ = backbone_.model().copy(true);
  teacher_head_ = old_head_.widened(2 * d, total, seed_for("teacher-head", ctx.task));
  branch_head_ = LinearHead::create(d, total, seed_for("branch-head", ctx.task));

  // Class-balance weights n_c^{-1/2}, scaled to average 1 over the samples.
  std::vector<double> counts(total, 0.0);
  for (int c = 0; c < ctx.known_classes; ++c) counts[c] = static_cast<double>(ctx.store->count(c));
  for (int y : ctx.train->labels) counts[static_cast<std::size_t>(y)] += 1.0;
  class_weights_.assign(total, 0.0);
  double n = 0.0, weighted = 0.0;
  for (std::size_t c = 0; c < total; ++c) {
    if (counts[c] > 0.0) class_weights_[c] = 1.0 / std::sqrt(counts[c]);
    n += counts[c];
    weighted += counts[c] * class_weights_[c];
  }
  for (double& w : class_weights_) w *= n / weighted;
}

std::size_t FosterLearner::num_phases(const TaskContext& ctx) const {
  return ctx.known_classes == 0 ? 1 : 2;
}

void FosterLearner::begin_phase(std::size_t phase, const TaskContext& ctx) {
  if (phase != 1) return;
  new_net_->set_trainable(false);
  teacher_head_ = teacher_head_.copy(false);
  student_ = backbone_.model().copy(true);
  student_head_ = LinearHead::create(backbone_.feature_dim(), static_cast<std::size_t>(ctx.total_classes),
                                     seed_for("student-head", ctx.task));
}

std::vector<Tensor> FosterLearner::phase_params(std::size_t phase) const {
  std::vector<Tensor> params;
  if (known_classes_ == 0) {
    params = net_.parameters();
    detail::append(params, detail::head_params(head_));
  } else if (phase == 0) {
    params = new_net_->parameters();
    detail::append(params, detail::head_params(teacher_head_));
    detail::append(params, detail::head_params(branch_head_));
  } else {
    params = student_->parameters();
    detail::append(params, detail::head_params(student_head_));
  }
  return params;
}

Tensor FosterLearner::phase_loss(std::size_t phase, const Tensor& inputs, std::span<const int> labels) {
  if (known_classes_ == 0) return ops::cross_entropy(head_(encode(net_, inputs)), labels);
  const double t = config_.optim.temperature;
  if (phase == 0) {
    const Tensor f_old = encode(*old_net_, inputs);
    const Tensor f_new = encode(*new_net_, inputs);
    const Tensor logits = teacher_head_(ops::concat({f_old, f_new}, 1));
    const auto ko = static_cast<std::size_t>(known_classes_);
    Tensor loss = ops::add(ops::cross_entropy(logits, labels),
                           ops::cross_entropy(branch_head_(f_new), labels));
    return ops::add(loss, kd_loss(ops::slice(logits, 1, 0, ko), old_head_(f_old), t));
  }
  std::vector<double> w;
  w.reserve(labels.size());
  for (int y : labels) w.push_back(class_weights_.at(static_cast<std::size_t>(y)));
  const Tensor teacher = teacher_logits(inputs);
  return kd_loss(student_head_(encode(*student_, inputs)), teacher, t, w);
}

void FosterLearner::end_phase(std::size_t phase, const TaskContext&) {
  if (phase != 1) return;
  net_ = std::move(*student_);
  head_ = student_head_;
  student_.reset();
  old_net_.reset();
  new_net_.reset();
  student_head_ = old_head_ = teacher_head_ = branch_head_ = LinearHead{};
}

int FosterLearner::phase_epochs(std::size_t phase) const {
  return phase == 1 ? option<int>("compress_epochs", config_.optim.epochs) : config_.optim.epochs;
}

double FosterLearner::phase_lr(std::size_t phase) const {
  return phase == 1 ? option<double>("compress_lr", config_.optim.lr) : config_.optim.lr;
}

std::vector<Component> FosterLearner::components() const {
  return {{"backbone", net_.parameters(), false}, {"head", detail::head_params(head_), false}};
}

std::vector<std::string> FosterLearner::decisions() const {
  return {"boosting branch initialised from the pre-trained backbone",
          "compression: logit KD from the two-branch teacher into a fresh single-backbone student, "
          "per-class weights proportional to n_c^-1/2",
          "kd: temperature-scaled KL with T^2 factor"};
}

void FosterLearner::save(StateDict& state) const {
  state.put_all("net.", net_.named_parameters());
  state.put_all("head.", head_.named_parameters(""));
}

void FosterLearner::load(const StateDict& state) {
  net_ = backbone_.model().copy(true);
  state.load_all("net.", net_.named_parameters());
  head_ = detail::load_head(state, "head.");
}

}  // namespace cilforge
