#pragma once

#include <span>
#include <string>
#include <vector>

#include "cilforge/learners/heads.hpp"
#include "cilforge/state.hpp"

namespace cilforge::detail {

inline std::vector<Tensor> values_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [n, t] : named) out.push_back(t);
  return out;
}

inline void append(std::vector<Tensor>& dst, const std::vector<Tensor>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

inline std::vector<Tensor> head_params(const LinearHead& head) {
  if (head.empty()) return {};
  return {head.weight, head.bias};
}

inline LinearHead load_head(const StateDict& state, const std::string& prefix, bool trainable = true) {
  LinearHead h;
  if (!state.contains(prefix + "weight")) return h;
  h.weight = state.get(prefix + "weight").detach().set_requires_grad(trainable);
  h.bias = state.get(prefix + "bias").detach().set_requires_grad(trainable);
  return h;
}

inline void set_trainable(std::vector<Tensor> tensors, bool on) {
  for (Tensor& t : tensors) t.set_requires_grad(on);
}

// Cross-entropy restricted to the current task's columns, with labels
// shifted to local ids.
Tensor local_cross_entropy(const Tensor& logits, std::span<const int> labels, int known, int total);

// Labels for an auxiliary head over (new classes + 1): old classes map to 0.
std::vector<int> auxiliary_labels(std::span<const int> labels, int known);

// [rows x dim] table starting from `previous` (zeros where absent); for each
// label in [first, last) that has rows in `features`, its row is replaced by
// the mean of the L2-normalized feature rows.
Tensor normalized_class_means(const Tensor& features, std::span<const int> labels, int first,
                              int last, const Tensor& previous, std::size_t rows, std::size_t dim);

}  // namespace cilforge::detail
