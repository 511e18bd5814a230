#include "cilforge/errors.hpp"
#include "cilforge/learners/algorithms.hpp"
#include "cilforge/ops.hpp"
#include "common.hpp"

namespace cilforge {
namespace {

std::vector<TransformerBlock> copy_blocks(std::span<const TransformerBlock> blocks, bool trainable) {
  std::vector<TransformerBlock> out;
  for (const auto& b : blocks) out.push_back(b.copy(trainable));
  return out;
}

std::vector<Tensor> block_tensors(const std::vector<TransformerBlock>& blocks) {
  std::vector<Tensor> out;
  for (const auto& b : blocks) detail::append(out, detail::values_of(block_parameters(b, "")));
  return out;
}

}  // namespace

MemoLearner::MemoLearner(LearnerConfig config, FrozenBackbone backbone)
    : Learner(std::move(config), std::move(backbone)) {
  expect_keys({"memo_split", "aux_weight"});
  const std::size_t depth = backbone_.spec().depth;
  const int split = option<int>("memo_split", static_cast<int>(depth / 2));
  if (split < 1 || static_cast<std::size_t>(split) >= depth) {
    throw ConfigError("model_specific.memo_split", "specialized depth " + std::to_string(split) +
                                                       " must be in [1, " + std::to_string(depth) +
                                                       ") for a depth-" + std::to_string(depth) + " backbone");
  }
  split_ = static_cast<std::size_t>(split);
  shared_ = backbone_.model().copy(true);
  shared_.blocks.resize(depth - split_);
}

Tensor MemoLearner::shared_tokens(const Tensor& inputs) const {
  std::size_t prompts = 0;
  return run_blocks(shared_.blocks, 0, shared_.spec.heads, embed_tokens(shared_, inputs), {}, prompts);
}

Tensor MemoLearner::branch_feature(std::size_t i, const Tensor& shared) const {
  std::size_t prompts = 0;
  const Tensor tokens =
      run_blocks(specialized_[i], shared_.blocks.size(), shared_.spec.heads, shared, {}, prompts);
  return class_feature(shared_.final_norm, tokens);
}

Tensor MemoLearner::features(const Tensor& inputs) const {
  if (specialized_.empty()) throw StateError("memo: no specialized blocks yet");
  return features_in_chunks(inputs, [&](const Tensor& x) {
    const Tensor h = shared_tokens(x);
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < specialized_.size(); ++i) parts.push_back(branch_feature(i, h));
    return parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
  });
}

Tensor MemoLearner::scores(const Tensor& inputs) const { return head_(features(inputs)); }

void MemoLearner::begin_task(const TaskContext& ctx) {
  const auto total = static_cast<std::size_t>(ctx.total_classes);
  const std::size_t d = backbone_.feature_dim();
  if (specialized_.empty()) {
    const auto& all = backbone_.model().blocks;
    specialized_.push_back(
        copy_blocks(std::span(all).last(split_), true));
  } else {
    shared_.set_trainable(false);
    for (auto& s : specialized_) detail::set_trainable(block_tensors(s), false);
    specialized_.push_back(copy_blocks(specialized_.back(), true));
  }
  head_ = head_.widened(specialized_.size() * d, total, seed_for("head", ctx.task));
  aux_head_ = ctx.known_classes > 0
                  ? LinearHead::create(d, static_cast<std::size_t>(ctx.total_classes - ctx.known_classes) + 1,
                                       seed_for("aux-head", ctx.task))
                  : LinearHead{};
}

std::vector<Tensor> MemoLearner::shared_parameters() const { return shared_.parameters(); }

std::vector<Tensor> MemoLearner::specialized_parameters(std::size_t i) const {
  return block_tensors(specialized_.at(i));
}

std::size_t MemoLearner::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : shared_parameters()) n += t.numel();
  for (std::size_t i = 0; i < specialized_.size(); ++i) {
    for (const Tensor& t : specialized_parameters(i)) n += t.numel();
  }
  return n;
}

std::vector<Tensor> MemoLearner::phase_params(std::size_t) const {
  std::vector<Tensor> params;
  if (specialized_.size() == 1) params = shared_parameters();
  detail::append(params, specialized_parameters(specialized_.size() - 1));
  detail::append(params, detail::head_params(head_));
  detail::append(params, detail::head_params(aux_head_));
  return params;
}

Tensor MemoLearner::phase_loss(std::size_t, const Tensor& inputs, std::span<const int> labels) {
  const Tensor h = shared_tokens(inputs);
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < specialized_.size(); ++i) parts.push_back(branch_feature(i, h));
  const Tensor f = parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
  Tensor loss = ops::cross_entropy(head_(f), labels);
  if (aux_head_.empty()) return loss;
  const auto aux = detail::auxiliary_labels(labels, known_classes_);
  return ops::add(loss, ops::scale(ops::cross_entropy(aux_head_(parts.back()), aux),
                                   option<double>("aux_weight", 1.0)));
}

std::vector<Component> MemoLearner::components() const {
  std::vector<Component> out;
  out.push_back({"shared", shared_parameters(), specialized_.size() > 1});
  for (std::size_t i = 0; i < specialized_.size(); ++i) {
    out.push_back({"specialized." + std::to_string(i), specialized_parameters(i), i + 1 < specialized_.size()});
  }
  out.push_back({"head", detail::head_params(head_), false});
  return out;
}

std::vector<std::string> MemoLearner::decisions() const {
  return {"specialized depth s = " + std::to_string(split_) + " of " +
              std::to_string(backbone_.spec().depth) + " blocks; embedder and final norm are shared",
          "new specialized blocks cloned from the previous task's",
          "auxiliary head over new classes + 1 collapsed old class, weight 1.0"};
}

void MemoLearner::save(StateDict& state) const {
  state.meta()["branches"] = specialized_.size();
  state.put_all("shared.", shared_.named_parameters());
  for (std::size_t i = 0; i < specialized_.size(); ++i) {
    for (std::size_t b = 0; b < specialized_[i].size(); ++b) {
      state.put_all("specialized." + std::to_string(i) + "." + std::to_string(b) + ".",
                    block_parameters(specialized_[i][b], ""));
    }
  }
  state.put_all("head.", head_.named_parameters(""));
}

void MemoLearner::load(const StateDict& state) {
  const auto n = state.meta().at("branches").get<std::size_t>();
  shared_ = backbone_.model().copy(n <= 1);
  shared_.blocks.resize(backbone_.spec().depth - split_);
  state.load_all("shared.", shared_.named_parameters());
  const auto& all = backbone_.model().blocks;
  specialized_.clear();
  for (std::size_t i = 0; i < n; ++i) {
    specialized_.push_back(copy_blocks(std::span(all).last(split_), i + 1 == n));
    for (std::size_t b = 0; b < split_; ++b) {
      state.load_all("specialized." + std::to_string(i) + "." + std::to_string(b) + ".",
                     block_parameters(specialized_[i][b], ""));
    }
  }
  head_ = detail::load_head(state, "head.");
  aux_head_ = LinearHead{};
}

}  // namespace cilforge
