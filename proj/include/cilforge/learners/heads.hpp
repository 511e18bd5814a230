#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cilforge/state.hpp"
#include "cilforge/tensor.hpp"

namespace cilforge {

// Linear classifier whose output width grows with the class count.
struct LinearHead {
  Tensor weight;  // [d x C]
  Tensor bias;    // [C]

  bool empty() const { return !weight.defined(); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t classes() const { return empty() ? 0 : weight.dim(1); }

  // Fresh trainable head, weights ~ N(0, 1/sqrt(d)).
  static LinearHead create(std::size_t in_features, std::size_t classes, std::uint64_t seed);
  // New trainable head with `classes` outputs; existing columns are copied and
  // the new ones drawn fresh.
  LinearHead grown(std::size_t classes, std::uint64_t seed) const;
  // New trainable head over `in_features` >= current inputs; the existing
  // block is copied into the top-left corner and the rest drawn fresh.
  LinearHead widened(std::size_t in_features, std::size_t classes, std::uint64_t seed) const;
  LinearHead copy(bool trainable) const;

  Tensor operator()(const Tensor& features) const;
  NamedTensors named_parameters(const std::string& prefix) const;
};

// Argmax per row of [B x C]; ties go to the lowest column.
std::vector<int> argmax_rows(const Tensor& scores);

// Negative squared distance between L2-normalized features [B x d] and
// L2-normalized means [K x d]: [B x K].
Tensor ncm_scores(const Tensor& features, const Tensor& class_means);

// Nearest class mean: Euclidean distance between L2-normalized features and
// L2-normalized means; ties go to the lowest class id.
std::vector<int> ncm_classify(const Tensor& features, const Tensor& class_means);

// Arithmetic mean of the rows of `features` that carry label `label`.
std::vector<double> class_mean(const Tensor& features, std::span<const int> labels, int label);

// Unit-norm class prototypes for cosine classification.
struct PrototypeHead {
  std::vector<std::vector<double>> prototypes;  // one per class id

  std::size_t classes() const { return prototypes.size(); }
  // Sets prototypes for every label in [first, last) from `features`; throws
  // FitError if one of them has no rows.
  void fit(const Tensor& features, std::span<const int> labels, int first, int last);
  // Cosine similarity to each prototype: [B x C].
  Tensor scores(const Tensor& features) const;
  Tensor as_tensor() const;
  void load(const Tensor& t);
};

// Temperature-scaled distillation:
//   T^2 * mean_b w_b * KL(softmax(teacher_b / T) || softmax(student_b / T)).
// The teacher is treated as a constant. Weights default to 1.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
               std::span<const double> weights = {});

// Cross-entropy on all columns plus distillation of the first Ko columns
// towards `old_logits` [B x Ko]. An undefined `old_logits` means no old model.
Tensor icarl_loss(const Tensor& new_logits, std::span<const int> targets, const Tensor& old_logits,
                  double temperature);

}  // namespace cilforge
