#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cilforge/rng.hpp"

namespace cilforge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

// Dense row-major array of doubles. A Tensor is a shared handle: copies alias
// the same storage, which is what optimizers rely on to update parameters in
// place. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, SplitMix64& rng, double stddev, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  // Negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // New leaf holding a copy of the values, never tracked.
  Tensor detach() const;
  // Independent leaf copy keeping the requires_grad flag.
  Tensor clone() const;

  const void* id() const { return impl_.get(); }
  detail::TensorImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape

class BackwardContext {
 public:
  BackwardContext(std::span<const double> grad_out, std::vector<std::vector<double>*> grad_in,
                  const std::vector<Tensor>& inputs, const Tensor& output)
      : grad_out_(grad_out), grad_in_(std::move(grad_in)), inputs_(inputs), output_(output) {}

  std::span<const double> grad_out() const { return grad_out_; }
  bool needs(std::size_t k) const { return grad_in_[k] != nullptr; }
  std::span<double> grad_in(std::size_t k) { return *grad_in_[k]; }
  const Tensor& input(std::size_t k) const { return inputs_[k]; }
  const Tensor& output() const { return output_; }

 private:
  std::span<const double> grad_out_;
  std::vector<std::vector<double>*> grad_in_;
  const std::vector<Tensor>& inputs_;
  const Tensor& output_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Gradients of a loss with respect to the leaf tensors reached by backward().
class GradientMap {
 public:
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  std::span<const double> of(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<const void*, std::vector<double>> grads_;
};

// Ordered record of primitive operations for one forward pass. Operations are
// appended as they execute, so the record is topologically sorted by
// construction. Recording happens only while a Tape::Scope is alive on the
// current thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Accumulates d loss / d leaf into every reachable requires_grad leaf and
  // returns the same gradients keyed by tensor. `loss` must be a scalar.
  GradientMap backward(const Tensor& loss);
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Op {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Op> ops_;
  std::size_t visits_ = 0;
};

// True when a tape is recording on this thread.
bool grad_recording();

// Free-function spelling of Tape::backward.
GradientMap backward(Tape& tape, const Tensor& loss);

}  // namespace cilforge
