#include "cilforge/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <spdlog/spdlog.h>

#include "cilforge/errors.hpp"

namespace cilforge {

int quota(const MemoryPolicy& policy, int seen_classes) {
  if (seen_classes < 1) throw ContractError("quota: seen class count must be >= 1");
  if (policy.fixed_memory) return policy.memory_per_class;
  if (policy.memory_size < seen_classes) {
    spdlog::warn("memory_size {} is smaller than the {} seen classes; storing no exemplars",
                 policy.memory_size, seen_classes);
    return 0;
  }
  return policy.memory_size / seen_classes;
}

std::vector<std::size_t> herding_select(const Tensor& features, int m) {
  if (features.shape().size() != 2) throw DimensionError("herding_select: features must be 2-D");
  const std::size_t n = features.shape()[0];
  const std::size_t d = features.shape()[1];
  if (m < 0 || static_cast<std::size_t>(m) > n) {
    throw SelectionError("herding_select: cannot pick " + std::to_string(m) + " of " +
                         std::to_string(n) + " rows");
  }
  std::vector<double> x(features.data().begin(), features.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += x[i * d + k] * x[i * d + k];
    norm = std::sqrt(norm) + 1e-12;
    for (std::size_t k = 0; k < d; ++k) x[i * d + k] /= norm;
  }
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mu[k] += x[i * d + k];
  }
  for (double& v : mu) v /= static_cast<double>(n);

  std::vector<double> running(d, 0.0);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> picked;
  picked.reserve(static_cast<std::size_t>(m));
  for (int step = 1; step <= m; ++step) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = mu[k] - (running[k] + x[i * d + k]) / step;
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    taken[best] = true;
    picked.push_back(best);
    for (std::size_t k = 0; k < d; ++k) running[k] += x[best * d + k];
  }
  return picked;
}

void ExemplarStore::set_class(int label, std::vector<std::size_t> rows) {
  classes_[label] = std::move(rows);
}

const std::vector<std::size_t>& ExemplarStore::class_rows(int label) const {
  auto it = classes_.find(label);
  if (it == classes_.end()) throw RangeError("no exemplars stored for class " + std::to_string(label));
  return it->second;
}

std::vector<int> ExemplarStore::classes() const {
  std::vector<int> out;
  for (const auto& [c, rows] : classes_) out.push_back(c);
  return out;
}

std::size_t ExemplarStore::count(int label) const {
  auto it = classes_.find(label);
  return it == classes_.end() ? 0 : it->second.size();
}

std::size_t ExemplarStore::total() const {
  std::size_t n = 0;
  for (const auto& [c, rows] : classes_) n += rows.size();
  return n;
}

std::vector<std::size_t> ExemplarStore::all_rows() const {
  ++reads_;
  std::vector<std::size_t> out;
  for (const auto& [c, rows] : classes_) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

nlohmann::json ExemplarStore::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [c, rows] : classes_) j.push_back({{"class", c}, {"rows", rows}});
  return j;
}

ExemplarStore ExemplarStore::from_json(const nlohmann::json& j) {
  ExemplarStore store;
  for (const auto& entry : j) {
    store.set_class(entry.at("class").get<int>(), entry.at("rows").get<std::vector<std::size_t>>());
  }
  return store;
}

ExemplarStore reduce_exemplars(ExemplarStore store, int new_quota) {
  const auto keep = static_cast<std::size_t>(std::max(new_quota, 0));
  for (int c : store.classes()) {
    std::vector<std::size_t> rows = store.class_rows(c);
    if (rows.size() > keep) rows.resize(keep);
    store.set_class(c, std::move(rows));
  }
  return store;
}

Dataset rehearsal_dataset(const ExemplarStore& store, const Dataset& current,
                          const Dataset& full_train) {
  Dataset out = current;
  if (store.empty()) return out;
  if (out.dim == 0) out.dim = full_train.dim;
  for (std::size_t r : store.all_rows()) out.push_back(full_train.row(r), full_train.labels[r]);
  return out;
}

}  // namespace cilforge
