#pragma once

#include <span>

#include "cilforge/tensor.hpp"

namespace cilforge {

struct SinkhornOptions {
  double eps = 0.1;
  int max_iter = 2000;
  double tol = 1e-9;
};

// Entropic optimal transport between marginals r [m] and c [n], solved with
// log-domain Sinkhorn scaling. Converged plans satisfy both marginals to `tol`
// (max absolute deviation). Throws ConvergenceError carrying the final
// residual when the iteration budget runs out.
Tensor sinkhorn(const Tensor& cost, std::span<const double> r, std::span<const double> c,
                const SinkhornOptions& options = {});

// Largest absolute deviation of the plan's row and column sums from r and c.
double marginal_residual(const Tensor& plan, std::span<const double> r, std::span<const double> c);

// Plan between old and new classes under cost 1 - cosine(prototype_old_i,
// prototype_new_j) with uniform marginals.
Tensor class_transport_plan(const Tensor& prototypes_old, const Tensor& prototypes_new,
                            const SinkhornOptions& options = {});

// Unit-norm initial weights for new classes: new_j = normalize(sum_i plan[i,j] * Ko * old_i).
Tensor coil_transfer(const Tensor& old_weights, const Tensor& prototypes_old,
                     const Tensor& prototypes_new, const SinkhornOptions& options = {});

}  // namespace cilforge
