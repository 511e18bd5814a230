#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {

DERLearner::DERLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"aux_weight"});
}

std::size_t DERLearner::feature_dim() const { return nets_.size() * backbone_.feature_dim(); }

Tensor DERLearner::features(const Tensor& inputs) const {
  if (nets_.empty()) throw StateError("der: no backbone yet");
  return features_in_chunks(inputs, [&](const Tensor& x) {
    std::vector<Tensor> parts;
    for (const auto& net : nets_) parts.push_back(encode(net, x));
    return parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
  });
}

Tensor DERLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void DERLearner::begin_task(const TaskContext& ctx) {
  for (auto& net : nets_) net.set_trainable(false);
  nets_.push_back(backbone_.model().copy(true));
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  head_ = head_.widened(feature_dim(), total, seed_for("head", ctx.task));
  aux_head_ = ctx.known_classes > 0
                  ? LinearHead::create(backbone_.feature_dim(),
                                       static_cast<std::size_t>(ctx.total_classes - ctx.known_classes) + 1,
                                       seed_for("aux-head", ctx.task))
                  : LinearHead{};
}

std::vector<Tensor> DERLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params = nets_.back().parameters();
  detail::append(params, detail::head_params(head_));
  detail::append(params, detail::head_params(aux_head_));
  return params;
}

Tensor DERLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  std::vector<Tensor> parts;
  for (const auto& net : nets_) parts.push_back(encode(net, inputs));
  const Tensor f = parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
  Tensor loss = ops::cross_entropy(head_(f), labels);
  if (aux_head_.empty()) return loss;
  const auto aux = detail::auxiliary_labels(labels, known_classes_);
  return ops::add(loss, ops::scale(ops::cross_entropy(aux_head_(parts.back()), aux),
                                   option<double>("aux_weight", 1.0)));
}

std::vector<Component> DERLearner::components() const {
  std::vector<Component> out;
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    out.push_back({"backbone." + std::to_string(i), nets_[i].parameters(), i + 1 < nets_.size()});
  }
  out.push_back({"head", detail::head_params(head_), false});
  return out;
}

std::vector<std::string> DERLearner::decisions() const {
  return {"new branch per task initialised from the pre-trained backbone",
          "auxiliary head over new classes + 1 collapsed old class, weight 1.0"};
}

void DERLearner::save(StateDict& state) const {
  state.meta()["branches"] = nets_.size();
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    state.put_all("net." + std::to_string(i) + ".", nets_[i].named_parameters());
  }
  state.put_all("head.", head_.named_parameters(""));
}

void DERLearner::load(const StateDict& state) {
  nets_.clear();
  const auto n = state.meta().at("branches").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    nets_.push_back(backbone_.model().copy(i + 1 == n));
    state.load_all("net." + std::to_string(i) + ".", nets_.back().named_parameters());
  }
  head_ = detail::load_head(state, "head.");
  aux_head_ = LinearHead{};
}

}  // namespace cilforge
