#include "cilforge/learners/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"

namespace cilforge {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
  double m = kNegInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i * stride]);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i * stride] - m);
  return m + std::log(s);
}

void check_marginal(std::span<const double> w, const char* which) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ContractError(std::string("sinkhorn: marginal ") + which + " has a negative or non-finite entry");
    }
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ContractError(std::string("sinkhorn: marginal ") + which + " sums to " + std::to_string(total));
  }
}

}  // namespace

double marginal_residual(const Tensor& plan, std::span<const double> r, std::span<const double> c) {
  const std::size_t m = plan.dim(0), n = plan.dim(1);
  const auto p = plan.data();
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += p[i * n + j];
    worst = std::max(worst, std::abs(s - r[i]));
  }
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += p[i * n + j];
    worst = std::max(worst, std::abs(s - c[j]));
  }
  return worst;
}

Tensor sinkhorn(const Tensor& cost, std::span<const double> r, std::span<const double> c,
                const SinkhornOptions& options) {
  if (cost.rank() != 2) throw DimensionError("sinkhorn: cost must be 2-D, got " + shape_str(cost.shape()));
  const std::size_t m = cost.dim(0), n = cost.dim(1);
  if (r.size() != m || c.size() != n) {
    throw DimensionError("sinkhorn: marginals of length " + std::to_string(r.size()) + "/" +
                         std::to_string(c.size()) + " do not fit cost " + shape_str(cost.shape()));
  }
  if (!(options.eps > 0.0)) throw ContractError("sinkhorn: eps must be positive");
  check_marginal(r, "r");
  check_marginal(c, "c");
  const auto cv = cost.data();
  if (!std::all_of(cv.begin(), cv.end(), [](double x) { return std::isfinite(x); })) {
    throw NumericInputError("sinkhorn: cost has non-finite entries");
  }

  std::vector<double> log_k(m * n);
  for (std::size_t k = 0; k < m * n; ++k) log_k[k] = -cv[k] / options.eps;
  std::vector<double> log_r(m), log_c(n);
  for (std::size_t i = 0; i < m; ++i) log_r[i] = r[i] > 0.0 ? std::log(r[i]) : kNegInf;
  for (std::size_t j = 0; j < n; ++j) log_c[j] = c[j] > 0.0 ? std::log(c[j]) : kNegInf;

  std::vector<double> log_u(m, 0.0), log_v(n, 0.0), work(std::max(m, n) * std::max(m, n));
  auto plan_of = [&] {
    std::vector<double> p(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] = std::exp(log_u[i] + log_k[i * n + j] + log_v[j]);
    }
    return Tensor({m, n}, std::move(p));
  };

  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < options.max_iter; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) work[j] = log_k[i * n + j] + log_v[j];
      log_u[i] = log_r[i] == kNegInf ? kNegInf : log_r[i] - log_sum_exp(work.data(), n, 1);
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) work[i] = log_k[i * n + j] + log_u[i];
      log_v[j] = log_c[j] == kNegInf ? kNegInf : log_c[j] - log_sum_exp(work.data(), m, 1);
    }
    // Columns are exact after the v-update; only rows can be off.
    residual = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += std::exp(log_u[i] + log_k[i * n + j] + log_v[j]);
      residual = std::max(residual, std::abs(s - r[i]));
    }
    if (residual <= options.tol) {
      Tensor plan = plan_of();
      return plan;
    }
  }
  throw ConvergenceError("sinkhorn: no convergence after " + std::to_string(options.max_iter) +
                             " iterations (residual " + std::to_string(residual) + ")",
                         residual);
}

Tensor class_transport_plan(const Tensor& prototypes_old, const Tensor& prototypes_new,
                            const SinkhornOptions& options) {
  const std::size_t ko = prototypes_old.dim(0), kn = prototypes_new.dim(0);
  if (ko == 0) throw ContractError("class transport needs at least one old class");
  Tensor cos = ops::cosine_matrix(prototypes_old.detach(), prototypes_new.detach());
  std::vector<double> cost(cos.values());
  for (double& v : cost) v = 1.0 - v;
  const std::vector<double> r(ko, 1.0 / static_cast<double>(ko));
  const std::vector<double> c(kn, 1.0 / static_cast<double>(kn));
  return sinkhorn(Tensor({ko, kn}, std::move(cost)), r, c, options);
}

Tensor coil_transfer(const Tensor& old_weights, const Tensor& prototypes_old,
                     const Tensor& prototypes_new, const SinkhornOptions& options) {
  const std::size_t ko = old_weights.dim(0), d = old_weights.dim(1), kn = prototypes_new.dim(0);
  if (prototypes_old.dim(0) != ko) {
    throw DimensionError("coil_transfer: " + std::to_string(ko) + " old weights but " +
                         std::to_string(prototypes_old.dim(0)) + " old prototypes");
  }
  const Tensor plan = class_transport_plan(prototypes_old, prototypes_new, options);
  const auto p = plan.data();
  const auto w = old_weights.data();
  std::vector<double> out(kn * d, 0.0);
  for (std::size_t j = 0; j < kn; ++j) {
    for (std::size_t i = 0; i < ko; ++i) {
      const double s = p[i * kn + j] * static_cast<double>(ko);
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] += s * w[i * d + k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += out[j * d + k] * out[j * d + k];
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (std::size_t k = 0; k < d; ++k) out[j * d + k] /= norm;
    }
  }
  return Tensor({kn, d}, std::move(out));
}

}  // namespace cilforge
