#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include <json.hpp>

#include "cilforge/datastream.hpp"
#include "cilforge/tensor.hpp"

namespace cilforge {

struct MemoryPolicy {
  bool fixed_memory = false;
  int memory_size = 2000;      // total budget when fixed_memory is false
  int memory_per_class = 20;   // per-class count when fixed_memory is true
};

// Per-class exemplar count for `seen_classes` classes. A dynamic budget
// smaller than the class count yields 0 with a warning.
int quota(const MemoryPolicy& policy, int seen_classes);

// Greedy herding over L2-normalized rows. Returns m distinct row indices in
// selection order; ties go to the lowest index.
std::vector<std::size_t> herding_select(const Tensor& features, int m);

// Per-class exemplar lists, stored as row indices into the full training set
// and kept in herding order so that shrinking is a prefix truncation.
class ExemplarStore {
 public:
  void set_class(int label, std::vector<std::size_t> rows);
  bool has_class(int label) const { return classes_.count(label) != 0; }
  const std::vector<std::size_t>& class_rows(int label) const;
  std::vector<int> classes() const;
  std::size_t count(int label) const;
  std::size_t total() const;
  bool empty() const { return total() == 0; }

  // All stored rows, class by class in ascending label order. Counts as a read.
  std::vector<std::size_t> all_rows() const;
  // Number of reads through all_rows(); exemplar-free learners must leave it at 0.
  std::size_t access_count() const { return reads_; }

  nlohmann::json to_json() const;
  static ExemplarStore from_json(const nlohmann::json& j);

  bool operator==(const ExemplarStore& other) const { return classes_ == other.classes_; }

 private:
  std::map<int, std::vector<std::size_t>> classes_;
  mutable std::size_t reads_ = 0;
};

// Keeps the first `new_quota` rows of each class.
ExemplarStore reduce_exemplars(ExemplarStore store, int new_quota);

// Current-task rows followed by the stored exemplars, drawn from `full_train`.
Dataset rehearsal_dataset(const ExemplarStore& store, const Dataset& current,
                          const Dataset& full_train);

}  // namespace cilforge
