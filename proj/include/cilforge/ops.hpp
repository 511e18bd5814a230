#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cilforge/tensor.hpp"

// Differentiable primitives. Every function records itself on the active tape
// when at least one input requires grad; otherwise it is a plain computation.
// Elementwise binary ops follow numpy broadcasting.
namespace cilforge::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

// [..., m, k] x [k, n] or [..., m, k] x [..., k, n] (matching batch dims).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// ---- composites -----------------------------------------------------------

// Mean over the batch of -log softmax(logits)[target]; logits [B x C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Same, with a per-sample weight; the weighted sum is divided by B.
Tensor weighted_cross_entropy(const Tensor& logits, std::span<const int> targets,
                              std::span<const double> weights);
Tensor dot(const Tensor& a, const Tensor& b);
// L2 normalisation along the last axis; rows with zero norm stay zero.
Tensor normalize(const Tensor& x);
// a.b / (|a||b|) for two vectors of equal length. A zero-norm operand yields
// 0 and logs a warning.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// Pairwise cosine between the rows of a [n x d] and b [m x d] -> [n x m].
Tensor cosine_matrix(const Tensor& a, const Tensor& b);
// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
// Broadcast x to `shape` (numpy rules).
Tensor expand(const Tensor& x, const Shape& shape);

}  // namespace cilforge::ops
