#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {

FinetuneLearner::FinetuneLearner(LearnerConfig config, FrozenBackbone backbone)
    : FinetuneLearner(std::move(config), std::move(backbone), {}) {}

FinetuneLearner::FinetuneLearner(LearnerConfig config, FrozenBackbone backbone,
                                 const std::set<std::string>& keys)
    : Learner(std::move(config), std::move(backbone)), net_(backbone_.model().copy(true)) {
  expect_keys(keys);
}

Tensor FinetuneLearner::features(const Tensor& inputs) const {
  return features_in_chunks(inputs, [&](const Tensor& x) { return encode(net_, x); });
}

Tensor FinetuneLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void FinetuneLearner::begin_task(const TaskContext& ctx) {
  const auto classes = static_cast<std::size_t>(ctx.total_classes);
  const std::uint64_t seed = seed_for("head", ctx.task);
  head_ = head_.empty() ? LinearHead::create(net_.spec.embed_dim, classes, seed)
                        : head_.grown(classes, seed);
}

std::vector<Tensor> FinetuneLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params = net_.parameters();
  detail::append(params, detail::head_params(head_));
  return params;
}

Tensor FinetuneLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  return ops::cross_entropy(head_(encode(net_, inputs)), labels);
}

std::vector<Component> FinetuneLearner::components() const {
  return {{"backbone", net_.parameters(), false}, {"head", detail::head_params(head_), false}};
}

void FinetuneLearner::save(StateDict& state) const {
  state.put_all("net.", net_.named_parameters());
  state.put_all("head.", head_.named_parameters(""));
}

void FinetuneLearner::load(const StateDict& state) {
  net_ = backbone_.model().copy(true);
  state.load_all("net.", net_.named_parameters());
  head_ = detail::load_head(state, "head.");
}

// ---------------------------------------------------------------------------

void ICaRLLearner::begin_task(const TaskContext& ctx) {
  if (ctx.known_classes > 0) {
    old_net_ = net_.copy(false);
    old_head_ = head_.copy(false);
  } else {
    old_net_.reset();
    old_head_ = LinearHead{};
  }
  FinetuneLearner::begin_task(ctx);
}

Tensor ICaRLLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  const Tensor logits = head_(encode(net_, inputs));
  Tensor old_logits;
  if (old_net_) old_logits = old_head_(encode(*old_net_, inputs));
  return icarl_loss(logits, labels, old_logits, config_.optim.temperature);
}

void ICaRLLearner::end_task(const TaskContext& ctx) {
  old_net_.reset();
  old_head_ = LinearHead{};
  // New classes from all of their training data, old classes from their
  // stored exemplars, both under the model just trained.
  const std::size_t d = net_.spec.embed_dim;
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  Tensor means = detail::normalized_class_means(Tensor(), {}, 0, 0, class_means_, total, d);
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (int c = 0; c < ctx.known_classes; ++c) {
    if (!ctx.store->has_class(c)) continue;
    for (std::size_t r : ctx.store->class_rows(c)) {
      rows.push_back(r);
      labels.push_back(c);
    }
  }
  // Old classes without exemplars keep their previous mean.
  if (!rows.empty()) {
    means = detail::normalized_class_means(features(ctx.full_train->batch(rows)), labels, 0,
                                           ctx.known_classes, means, total, d);
  }
  means = detail::normalized_class_means(features(ctx.train->batch()), ctx.train->labels,
                                         ctx.known_classes, ctx.total_classes, means, total, d);
  class_means_ = means;
}

Tensor ICaRLLearner::scores(const Tensor& inputs) const {
  if (!class_means_.defined()) throw StateError("icarl: no class means yet");
  return ncm_scores(features(inputs), class_means_);
}

std::vector<std::string> ICaRLLearner::decisions() const {
  return {"kd: temperature-scaled KL with T^2 factor on the old model's logits",
          "classification: nearest mean of L2-normalized features; new-class means from all task data, "
          "old-class means from exemplars"};
}

void ICaRLLearner::save(StateDict& state) const {
  FinetuneLearner::save(state);
  if (class_means_.defined()) state.put("class_means", class_means_);
}

void ICaRLLearner::load(const StateDict& state) {
  FinetuneLearner::load(state);
  class_means_ = state.contains("class_means") ? state.get("class_means") : Tensor();
}

}  // namespace cilforge
