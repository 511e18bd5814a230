#include "common.hpp"

#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"

namespace cilforge::detail {

Tensor local_cross_entropy(const Tensor& logits, std::span<const int> labels, int known, int total) {
  const Tensor local = ops::slice(logits, 1, static_cast<std::size_t>(known),
                                  static_cast<std::size_t>(total - known));
  std::vector<int> shifted(labels.begin(), labels.end());
  for (int& y : shifted) {
    if (y < known || y >= total) {
      throw LabelError("label " + std::to_string(y) + " is outside the current task's classes [" +
                       std::to_string(known) + ", " + std::to_string(total) + ")");
    }
    y -= known;
  }
  return ops::cross_entropy(local, shifted);
}

std::vector<int> auxiliary_labels(std::span<const int> labels, int known) {
  std::vector<int> out(labels.begin(), labels.end());
  for (int& y : out) y = y < known ? 0 : y - known + 1;
  return out;
}

Tensor normalized_class_means(const Tensor& features, std::span<const int> labels, int first,
                              int last, const Tensor& previous, std::size_t rows, std::size_t dim) {
  std::vector<double> out(rows * dim, 0.0);
  if (previous.defined()) {
    const auto pv = previous.data();
    std::copy(pv.begin(), pv.begin() + static_cast<std::ptrdiff_t>(std::min(pv.size(), out.size())),
              out.begin());
  }
  if (features.defined()) {
    const Tensor f = ops::normalize(features.detach());
    const auto fv = f.data();
    for (int c = first; c < last; ++c) {
      std::vector<double> acc(dim, 0.0);
      std::size_t n = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != c) continue;
        ++n;
        for (std::size_t k = 0; k < dim; ++k) acc[k] += fv[i * dim + k];
      }
      if (n == 0) continue;
      for (std::size_t k = 0; k < dim; ++k) out[static_cast<std::size_t>(c) * dim + k] = acc[k] / double(n);
    }
  }
  return Tensor({rows, dim}, std::move(out));
}

}  // namespace cilforge::detail
