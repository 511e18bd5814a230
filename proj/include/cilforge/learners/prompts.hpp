#pragma once

#include <cstdint>
#include <vector>

#include "cilforge/tensor.hpp"

namespace cilforge {

// Key-matched prompt pool.
struct PromptPool {
  Tensor keys;                  // [M x d]
  std::vector<Tensor> prompts;  // M entries of [p x d]
  std::size_t top_n = 2;

  static PromptPool create(std::size_t pool_size, std::size_t length, std::size_t dim,
                           std::size_t top_n, std::uint64_t seed);
  std::size_t size() const { return prompts.size(); }
  std::vector<Tensor> parameters() const;
};

struct PromptSelection {
  std::vector<std::vector<std::size_t>> indices;  // per query, best first
  // (1/B) sum_b (1/N) sum_selected (1 - cos(query_b, key)); queries are
  // treated as constants.
  Tensor pull_loss;
};

// Top-min(N, M) keys per query row by cosine similarity; ties go to the
// lowest index.
PromptSelection l2p_select(const Tensor& queries, const PromptPool& pool);

// Selected prompts concatenated per query: [B x (N p) x d].
Tensor gather_prompts(const PromptPool& pool, const PromptSelection& selection);

// Attention-composed prompts. Rows of keys/attention/prompts are components;
// rows with requires_grad off take part in the forward pass but receive no
// gradient.
struct ComposedPrompt {
  Tensor weights;  // [B x M] alpha_m = cos(q * A_m, K_m)
  Tensor prompt;   // [B x p x d] = sum_m alpha_m P_m
};

// keys, attention: [M x d]; prompts: [M x p x d].
ComposedPrompt compose_prompt(const Tensor& queries, const Tensor& keys, const Tensor& attention,
                              const Tensor& prompts);

// || X X^T - I ||_F^2 over the rows of X (flattened past the first axis).
Tensor orthogonality(const Tensor& x);

}  // namespace cilforge
