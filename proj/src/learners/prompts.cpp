#include "cilforge/learners/prompts.hpp"

#include <algorithm>
#include <numeric>

#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"

namespace cilforge {

PromptPool PromptPool::create(std::size_t pool_size, std::size_t length, std::size_t dim,
                              std::size_t top_n, std::uint64_t seed) {
  if (pool_size == 0 || length == 0) throw ConfigurationError("prompt pool needs at least one prompt token");
  SplitMix64 rng(seed);
  PromptPool pool;
  pool.top_n = top_n;
  pool.keys = Tensor::randn({pool_size, dim}, rng, 0.02, true);
  for (std::size_t m = 0; m < pool_size; ++m) {
    pool.prompts.push_back(Tensor::randn({length, dim}, rng, 0.02, true));
  }
  return pool;
}

std::vector<Tensor> PromptPool::parameters() const {
  std::vector<Tensor> out{keys};
  out.insert(out.end(), prompts.begin(), prompts.end());
  return out;
}

PromptSelection l2p_select(const Tensor& queries, const PromptPool& pool) {
  const Tensor q = queries.rank() == 1 ? ops::reshape(queries.detach(), {1, queries.dim(0)})
                                       : queries.detach();
  const std::size_t b = q.dim(0), m = pool.size();
  const std::size_t n = std::min(pool.top_n, m);
  const Tensor cos = ops::cosine_matrix(q, pool.keys);
  const auto cv = cos.data();

  PromptSelection sel;
  std::vector<double> mask(b * m, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return cv[i * m + x] > cv[i * m + y]; });
    order.resize(n);
    for (std::size_t k : order) mask[i * m + k] = 1.0 / static_cast<double>(n);
    sel.indices.push_back(std::move(order));
  }
  // 1 - mean of selected similarities.
  const Tensor picked = ops::sum(ops::mul(cos, Tensor({b, m}, std::move(mask))));
  sel.pull_loss = ops::add_scalar(ops::scale(picked, -1.0 / static_cast<double>(b)), 1.0);
  return sel;
}

Tensor gather_prompts(const PromptPool& pool, const PromptSelection& selection) {
  std::vector<Tensor> rows;
  rows.reserve(selection.indices.size());
  for (const auto& idx : selection.indices) {
    std::vector<Tensor> parts;
    for (std::size_t k : idx) parts.push_back(pool.prompts.at(k));
    rows.push_back(ops::concat(parts, 0));
  }
  return ops::stack(rows);
}

ComposedPrompt compose_prompt(const Tensor& queries, const Tensor& keys, const Tensor& attention,
                              const Tensor& prompts) {
  const std::size_t b = queries.dim(0), d = queries.dim(1), m = keys.dim(0);
  if (keys.shape() != Shape{m, d} || attention.shape() != Shape{m, d} || prompts.rank() != 3 ||
      prompts.dim(0) != m || prompts.dim(2) != d) {
    throw DimensionError("compose_prompt: keys " + shape_str(keys.shape()) + ", attention " +
                         shape_str(attention.shape()) + ", prompts " + shape_str(prompts.shape()) +
                         " for queries " + shape_str(queries.shape()));
  }
  const std::size_t p = prompts.dim(1);
  const Tensor q = ops::reshape(queries.detach(), {b, 1, d});
  const Tensor attended = ops::normalize(ops::mul(q, ops::reshape(attention, {1, m, d})));
  const Tensor k = ops::reshape(ops::normalize(keys), {1, m, d});
  ComposedPrompt out;
  out.weights = ops::sum(ops::mul(attended, k), -1, false);  // [B x M]
  out.prompt = ops::reshape(ops::matmul(out.weights, ops::reshape(prompts, {m, p * d})), {b, p, d});
  return out;
}

Tensor orthogonality(const Tensor& x) {
  const std::size_t m = x.dim(0);
  const Tensor flat = ops::reshape(x, {m, x.numel() / m});
  std::vector<double> eye(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) eye[i * m + i] = 1.0;
  const Tensor diff = ops::sub(ops::matmul(flat, ops::transpose(flat)), Tensor({m, m}, std::move(eye)));
  return ops::sum(ops::mul(diff, diff));
}

}  // namespace cilforge
