#include "cilforge/tensor.hpp"

#include <sstream>

#include "cilforge/errors.hpp"

namespace cilforge {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (cilforge::numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(cilforge::numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = cilforge::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = cilforge::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::randn(Shape shape, SplitMix64& rng, double stddev, bool requires_grad) {
  std::vector<double> v(cilforge::numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows: empty input");
  const std::size_t cols = rows.front().size();
  std::vector<double> v;
  v.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(v));
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at(): index rank mismatch");
  std::size_t off = 0;
  std::size_t k = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[k]) throw DimensionError("at(): index out of range");
    off = off * impl_->shape[k] + i;
    ++k;
  }
  return impl_->data[off];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

bool grad_recording() { return g_active_tape != nullptr; }

void Tape::record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn) {
  output.impl().requires_grad = true;
  output.impl().is_leaf = false;
  ops_.push_back(Op{std::move(inputs), output, std::move(fn)});
}

std::span<const double> GradientMap::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return it->second;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  std::unordered_map<const void*, std::vector<double>> grads;
  grads[loss.id()] = {1.0};
  visits_ = 0;

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    ++visits_;
    auto out = grads.find(it->output.id());
    if (out == grads.end()) continue;
    std::vector<std::vector<double>*> grad_in(it->inputs.size(), nullptr);
    for (std::size_t k = 0; k < it->inputs.size(); ++k) {
      const Tensor& in = it->inputs[k];
      if (!in.requires_grad()) continue;
      auto& g = grads[in.id()];
      if (g.empty()) g.assign(in.numel(), 0.0);
      grad_in[k] = &g;
    }
    // `grads` may rehash while inserting above, so look the output up again.
    const std::vector<double> grad_out = std::move(grads.find(it->output.id())->second);
    BackwardContext ctx(grad_out, std::move(grad_in), it->inputs, it->output);
    it->fn(ctx);
    grads.erase(it->output.id());
  }

  GradientMap result;
  // Leaves: accumulate into the tensor and report.
  for (const Op& op : ops_) {
    for (const Tensor& in : op.inputs) {
      if (!in.requires_grad() || !in.is_leaf()) continue;
      auto g = grads.find(in.id());
      if (g == grads.end()) continue;
      auto& dst = in.impl().grad;
      if (dst.empty()) dst.assign(in.numel(), 0.0);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g->second[i];
      result.grads_[in.id()] = std::move(g->second);
      grads.erase(g);
    }
  }
  if (loss.is_leaf() && loss.requires_grad()) {
    auto& dst = loss.impl().grad;
    if (dst.empty()) dst.assign(1, 0.0);
    dst[0] += 1.0;
    result.grads_[loss.id()] = {1.0};
  }
  return result;
}

GradientMap backward(Tape& tape, const Tensor& loss) { return tape.backward(loss); }

}  // namespace cilforge
