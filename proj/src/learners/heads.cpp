#include "cilforge/learners/heads.hpp"

#include <cmath>

#include "cilforge/errors.hpp"
#include "cilforge/ops.hpp"

namespace cilforge {

LinearHead LinearHead::create(std::size_t in_features, std::size_t classes, std::uint64_t seed) {
  SplitMix64 rng(seed);
  LinearHead h;
  h.weight = Tensor::randn({in_features, classes}, rng, 1.0 / std::sqrt(double(in_features)), true);
  h.bias = Tensor::zeros({classes}, true);
  return h;
}

LinearHead LinearHead::grown(std::size_t classes, std::uint64_t seed) const {
  return widened(empty() ? 0 : in_features(), classes, seed);
}

LinearHead LinearHead::widened(std::size_t in, std::size_t classes, std::uint64_t seed) const {
  LinearHead h = create(in, classes, seed);
  if (empty()) return h;
  const std::size_t old_in = in_features(), old_c = this->classes();
  if (old_in > in || old_c > classes) throw ContractError("LinearHead: cannot shrink a head");
  auto w = h.weight.mutable_data();
  const auto ow = weight.data();
  for (std::size_t i = 0; i < old_in; ++i) {
    for (std::size_t c = 0; c < old_c; ++c) w[i * classes + c] = ow[i * old_c + c];
  }
  // Rows for new inputs start at zero on old classes so old logits are kept.
  for (std::size_t i = old_in; i < in; ++i) {
    for (std::size_t c = 0; c < old_c; ++c) w[i * classes + c] = 0.0;
  }
  auto b = h.bias.mutable_data();
  const auto ob = bias.data();
  for (std::size_t c = 0; c < old_c; ++c) b[c] = ob[c];
  return h;
}

LinearHead LinearHead::copy(bool trainable) const {
  LinearHead h;
  if (empty()) return h;
  h.weight = weight.detach().set_requires_grad(trainable);
  h.bias = bias.detach().set_requires_grad(trainable);
  return h;
}

Tensor LinearHead::operator()(const Tensor& features) const {
  return ops::add(ops::matmul(features, weight), bias);
}

NamedTensors LinearHead::named_parameters(const std::string& prefix) const {
  if (empty()) return {};
  return {{prefix + "weight", weight}, {prefix + "bias", bias}};
}

std::vector<int> argmax_rows(const Tensor& scores) {
  const std::size_t b = scores.dim(0), c = scores.dim(1);
  const auto v = scores.data();
  std::vector<int> out(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (v[i * c + j] > v[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

Tensor ncm_scores(const Tensor& features, const Tensor& class_means) {
  const Tensor f = ops::normalize(features.detach());
  const Tensor mu = ops::normalize(class_means.detach());
  const std::size_t b = f.dim(0), d = f.dim(1), k = mu.dim(0);
  if (mu.dim(1) != d) {
    throw DimensionError("ncm_classify: features " + shape_str(f.shape()) + " vs means " +
                         shape_str(mu.shape()));
  }
  std::vector<double> neg(b * k);
  const auto fv = f.data();
  const auto mv = mu.data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = fv[i * d + j] - mv[c * d + j];
        s += diff * diff;
      }
      neg[i * k + c] = -s;
    }
  }
  return Tensor({b, k}, std::move(neg));
}

std::vector<int> ncm_classify(const Tensor& features, const Tensor& class_means) {
  return argmax_rows(ncm_scores(features, class_means));
}

std::vector<double> class_mean(const Tensor& features, std::span<const int> labels, int label) {
  const std::size_t d = features.dim(1);
  const auto v = features.data();
  std::vector<double> mean(d, 0.0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != label) continue;
    ++count;
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[i * d + j];
  }
  if (count == 0) throw FitError("no samples for class " + std::to_string(label));
  for (double& x : mean) x /= static_cast<double>(count);
  return mean;
}

void PrototypeHead::fit(const Tensor& features, std::span<const int> labels, int first, int last) {
  if (prototypes.size() < static_cast<std::size_t>(last)) prototypes.resize(static_cast<std::size_t>(last));
  for (int c = first; c < last; ++c) {
    std::vector<double> mean = class_mean(features, labels, c);
    double norm = 0.0;
    for (double x : mean) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : mean) x /= norm;
    }
    prototypes[static_cast<std::size_t>(c)] = std::move(mean);
  }
}

Tensor PrototypeHead::as_tensor() const {
  if (prototypes.empty()) throw StateError("prototype head is empty");
  const std::size_t k = prototypes.size(), d = prototypes.front().size();
  std::vector<double> v;
  v.reserve(k * d);
  for (const auto& p : prototypes) {
    if (p.size() != d) throw StateError("prototype head has unfitted classes");
    v.insert(v.end(), p.begin(), p.end());
  }
  return Tensor({k, d}, std::move(v));
}

void PrototypeHead::load(const Tensor& t) {
  const std::size_t k = t.dim(0), d = t.dim(1);
  prototypes.assign(k, std::vector<double>(d));
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) prototypes[c][j] = t.data()[c * d + j];
  }
}

Tensor PrototypeHead::scores(const Tensor& features) const {
  // Prototypes are unit norm, so cosine = normalized features . prototypes.
  return ops::matmul(ops::normalize(features.detach()), ops::transpose(as_tensor()));
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
               std::span<const double> weights) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ContractError("kd_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                        shape_str(teacher_logits.shape()));
  }
  const std::size_t b = student_logits.dim(0), c = student_logits.dim(1);
  if (!weights.empty() && weights.size() != b) throw ContractError("kd_loss: one weight per sample");
  const Tensor p = ops::softmax(ops::scale(teacher_logits.detach(), 1.0 / temperature));
  // Entropy part of the KL is constant in the student.
  double neg_entropy = 0.0;
  std::vector<double> pw(p.values());
  for (std::size_t i = 0; i < b; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    for (std::size_t j = 0; j < c; ++j) {
      const double pij = pw[i * c + j];
      if (pij > 0.0) neg_entropy += w * pij * std::log(pij);
      pw[i * c + j] = pij * w;
    }
  }
  const Tensor logq = ops::log_softmax(ops::scale(student_logits, 1.0 / temperature));
  const Tensor cross = ops::sum(ops::mul(Tensor({b, c}, std::move(pw)), logq));
  const double t2 = temperature * temperature;
  return ops::scale(ops::add_scalar(ops::scale(cross, -1.0), neg_entropy), t2 / static_cast<double>(b));
}

Tensor icarl_loss(const Tensor& new_logits, std::span<const int> targets, const Tensor& old_logits,
                  double temperature) {
  Tensor ce = ops::cross_entropy(new_logits, targets);
  if (!old_logits.defined()) return ce;
  const std::size_t ko = old_logits.rank() == 2 ? old_logits.dim(1) : 0;
  if (old_logits.rank() != 2 || old_logits.dim(0) != new_logits.dim(0) || ko > new_logits.dim(1) ||
      ko == 0) {
    throw ContractError("icarl_loss: old logits " + shape_str(old_logits.shape()) +
                        " do not cover the known columns of " + shape_str(new_logits.shape()));
  }
  const Tensor old_cols = ops::slice(new_logits, 1, 0, ko);
  return ops::add(ce, kd_loss(old_cols, old_logits, temperature));
}

}  // namespace cilforge
