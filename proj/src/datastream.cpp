#include "cilforge/datastream.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cilforge/errors.hpp"
#include "cilforge/rng.hpp"

namespace cilforge {

void Dataset::push_back(std::span<const double> x, int label) {
  if (dim == 0) dim = x.size();
  if (x.size() != dim) {
    throw DimensionError("dataset row of length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(dim));
  }
  inputs.insert(inputs.end(), x.begin(), x.end());
  labels.push_back(label);
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dim = dim;
  out.inputs.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw RangeError("dataset index " + std::to_string(i) + " out of range");
    out.push_back(row(i), labels[i]);
  }
  return out;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) {
    if (empty()) throw RangeError("batch of an empty dataset");
    return Tensor({size(), dim}, inputs);
  }
  std::vector<double> v;
  v.reserve(indices.size() * dim);
  for (std::size_t i : indices) {
    const auto r = row(i);
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor({indices.size(), dim}, std::move(v));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

int Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

SplitDataset synth_blobs(const BlobSpec& spec) {
  if (spec.dim < 2) throw SpecError("synth_blobs needs dim >= 2");
  if (spec.num_classes < 1 || spec.train_per_class < 1 || spec.test_per_class < 1) {
    throw SpecError("synth_blobs needs positive class and sample counts");
  }
  SplitMix64 rng(spec.seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(spec.num_classes),
                                           std::vector<double>(spec.dim));
  for (auto& c : centers) {
    for (double& v : c) v = rng.normal(0.0, spec.center_scale);
  }
  auto draw = [&](int per_class) {
    Dataset d;
    d.dim = spec.dim;
    std::vector<double> x(spec.dim);
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int i = 0; i < per_class; ++i) {
        for (std::size_t j = 0; j < spec.dim; ++j) {
          x[j] = centers[static_cast<std::size_t>(c)][j] + rng.normal(0.0, spec.spread);
        }
        d.push_back(x, c);
      }
    }
    return d;
  };
  SplitDataset out;
  out.train = draw(spec.train_per_class);
  out.test = draw(spec.test_per_class);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

FormatError format_error(const std::filesystem::path& path, std::size_t line, const std::string& msg) {
  return FormatError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Dataset load_table_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw format_error(path, 1, "missing header");

  std::size_t dim = 0;
  int classes = 0;
  {
    std::istringstream hs(std::string(trim(line)));
    std::string magic, version, dim_kv, cls_kv, extra;
    hs >> magic >> version >> dim_kv >> cls_kv;
    const bool ok = magic == "clds" && version == "v1" && dim_kv.rfind("dim=", 0) == 0 &&
                    cls_kv.rfind("classes=", 0) == 0 && !(hs >> extra) &&
                    parse_number(std::string_view(dim_kv).substr(4), dim) &&
                    parse_number(std::string_view(cls_kv).substr(8), classes) && dim >= 1 &&
                    classes >= 1;
    if (!ok) throw format_error(path, 1, "expected 'clds v1 dim=<d> classes=<C>'");
  }

  Dataset data;
  data.dim = dim;
  std::vector<double> x(dim);
  std::size_t lineno = 1;
  bool saw_blank = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view body = trim(line);
    if (body.empty()) {
      saw_blank = true;
      continue;
    }
    if (saw_blank) throw format_error(path, lineno, "blank line inside data");
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      fields.push_back(body.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != dim + 1) {
      throw format_error(path, lineno,
                         "expected " + std::to_string(dim + 1) + " fields, got " +
                             std::to_string(fields.size()));
    }
    int label = 0;
    if (!parse_number(fields[0], label) || label < 0 || label >= classes) {
      throw format_error(path, lineno, "bad label '" + std::string(fields[0]) + "'");
    }
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_number(fields[j + 1], x[j]) || !std::isfinite(x[j])) {
        throw format_error(path, lineno, "bad value '" + std::string(fields[j + 1]) + "'");
      }
    }
    data.push_back(x, label);
  }
  if (data.empty()) throw format_error(path, lineno, "no examples");

  std::set<int> present(data.labels.begin(), data.labels.end());
  const int inferred = data.num_classes();
  if (static_cast<int>(present.size()) != inferred) {
    for (int c = 0; c < inferred; ++c) {
      if (!present.count(c)) {
        throw format_error(path, lineno, "labels not contiguous: class " + std::to_string(c) + " missing");
      }
    }
  }
  if (inferred != classes) {
    throw format_error(path, 1,
                       "header declares " + std::to_string(classes) + " classes, data has " +
                           std::to_string(inferred));
  }
  return data;
}

void save_table_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  out << "clds v1 dim=" << data.dim << " classes=" << data.num_classes() << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::string row = std::to_string(data.labels[i]);
    for (double v : data.row(i)) row += fmt::format(",{}", v);
    out << row << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

ClassOrder shuffle_class_order(int num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw SplitError("num_classes must be >= 1");
  return ClassOrder{seeded_permutation(num_classes, seed), seed};
}

int TaskSplit::classes_before(std::size_t task) const {
  if (task >= tasks.size()) throw RangeError("task " + std::to_string(task) + " out of range");
  return task == 0 ? 0 : init_cls + increment * static_cast<int>(task - 1);
}

int TaskSplit::classes_through(std::size_t task) const {
  return classes_before(task) + static_cast<int>(tasks[task].size());
}

TaskSplit build_task_splits(int num_classes, int init_cls, int increment) {
  if (init_cls < 1 || increment < 1) throw SplitError("init_cls and increment must be >= 1");
  if (init_cls > num_classes) {
    throw SplitError("init_cls " + std::to_string(init_cls) + " exceeds " +
                     std::to_string(num_classes) + " classes");
  }
  if ((num_classes - init_cls) % increment != 0) {
    throw SplitError("(" + std::to_string(num_classes) + " - " + std::to_string(init_cls) +
                     ") classes are not divisible by increment " + std::to_string(increment));
  }
  TaskSplit split;
  split.init_cls = init_cls;
  split.increment = increment;
  int next = 0;
  auto take = [&](int n) {
    std::vector<int> t(static_cast<std::size_t>(n));
    std::iota(t.begin(), t.end(), next);
    next += n;
    split.tasks.push_back(std::move(t));
  };
  take(init_cls);
  while (next < num_classes) take(increment);
  return split;
}

DataManager::DataManager(SplitDataset data, std::uint64_t seed, int init_cls, int increment) {
  num_classes_ = std::max(data.train.num_classes(), data.test.num_classes());
  if (data.train.empty() || data.test.empty()) throw SplitError("train and test sets must be non-empty");
  if (data.train.dim != data.test.dim) throw DimensionError("train/test input dims differ");
  order_ = shuffle_class_order(num_classes_, seed);
  split_ = build_task_splits(num_classes_, init_cls, increment);
  std::vector<int> position(static_cast<std::size_t>(num_classes_));
  for (std::size_t p = 0; p < order_.order.size(); ++p) position[order_.order[p]] = static_cast<int>(p);
  for (int& l : data.train.labels) l = position[l];
  for (int& l : data.test.labels) l = position[l];
  train_ = std::move(data.train);
  test_ = std::move(data.test);
}

namespace {
std::vector<std::size_t> rows_in_range(const Dataset& d, int lo, int hi) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.labels[i] >= lo && d.labels[i] < hi) idx.push_back(i);
  }
  return idx;
}
}  // namespace

std::vector<std::size_t> DataManager::train_indices(std::size_t task) const {
  if (task >= num_tasks()) throw RangeError("task " + std::to_string(task) + " out of range");
  return rows_in_range(train_, split_.classes_before(task), split_.classes_through(task));
}

Dataset DataManager::get_dataset(std::size_t task, Source source, Scope scope) const {
  if (task >= num_tasks()) {
    throw RangeError("task " + std::to_string(task) + " out of range (have " +
                     std::to_string(num_tasks()) + ")");
  }
  const Dataset& d = source == Source::kTrain ? train_ : test_;
  const int lo = scope == Scope::kCurrent ? split_.classes_before(task) : 0;
  const int hi = split_.classes_through(task);
  const auto idx = rows_in_range(d, lo, hi);
  return d.select(idx);
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size,
                                                  std::uint64_t seed, std::size_t task, int epoch) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(derive_seed(seed, tag("batches"), task, static_cast<std::uint64_t>(epoch)));
  shuffle_in_place(perm, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += batch_size) {
    const std::size_t e = std::min(n, s + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s),
                         perm.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

}  // namespace cilforge
