#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cilforge/tensor.hpp"

namespace cilforge {

// Flat row-major examples with integer labels. Inputs are vectors of length
// `dim`; grid inputs are stored flattened.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> inputs;  // size() * dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }
  void push_back(std::span<const double> x, int label);
  // Rows selected by index, in the given order.
  Dataset select(std::span<const std::size_t> indices) const;
  // [n x dim] tensor over the given rows (all rows when empty).
  Tensor batch(std::span<const std::size_t> indices = {}) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  int num_classes() const;  // max label + 1
  bool operator==(const Dataset&) const = default;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
};

struct BlobSpec {
  int num_classes = 10;
  int train_per_class = 50;
  int test_per_class = 20;
  std::size_t dim = 32;
  double spread = 0.1;        // per-coordinate std of each cluster
  double center_scale = 1.0;  // per-coordinate std of the cluster centers
  std::uint64_t seed = 0;
};

// One isotropic Gaussian cluster per class around a seeded random center; the
// test split is drawn after the train split from the same stream.
SplitDataset synth_blobs(const BlobSpec& spec);

// ---------------------------------------------------------------------------
// CLDS text format:
//   clds v1 dim=<d> classes=<C>
//   label,v1,...,vd
Dataset load_table_dataset(const std::filesystem::path& path);
void save_table_dataset(const Dataset& data, const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct ClassOrder {
  std::vector<int> order;  // order[position] = raw class id
  std::uint64_t seed = 1993;
};

// SplitMix64-seeded Fisher-Yates over [0, num_classes).
ClassOrder shuffle_class_order(int num_classes, std::uint64_t seed);

struct TaskSplit {
  int init_cls = 0;
  int increment = 0;
  // Class ids per task, in the incremental label space (task 0 = [0, init_cls)).
  std::vector<std::vector<int>> tasks;

  std::size_t num_tasks() const { return tasks.size(); }
  int classes_before(std::size_t task) const;
  int classes_through(std::size_t task) const;
};

TaskSplit build_task_splits(int num_classes, int init_cls, int increment);

enum class Source { kTrain, kTest };
enum class Scope { kCurrent, kCumulative };

// Owns the remapped train/test sets. Raw labels are mapped once through the
// class order (label' = position of the raw label in the order), so that task
// t holds exactly the labels [classes_before(t), classes_through(t)).
class DataManager {
 public:
  DataManager(SplitDataset data, std::uint64_t seed, int init_cls, int increment);

  const ClassOrder& class_order() const { return order_; }
  const TaskSplit& split() const { return split_; }
  std::size_t num_tasks() const { return split_.num_tasks(); }
  int num_classes() const { return num_classes_; }
  std::size_t input_dim() const { return train_.dim; }

  Dataset get_dataset(std::size_t task, Source source, Scope scope) const;
  // Row indices into the full training set for the given task's classes.
  std::vector<std::size_t> train_indices(std::size_t task) const;
  const Dataset& full_train() const { return train_; }
  const Dataset& full_test() const { return test_; }

 private:
  ClassOrder order_;
  TaskSplit split_;
  int num_classes_;
  Dataset train_;
  Dataset test_;
};

// Mini-batch order for one epoch, reproducible from (seed, task, epoch).
std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size,
                                                  std::uint64_t seed, std::size_t task, int epoch);

}  // namespace cilforge
