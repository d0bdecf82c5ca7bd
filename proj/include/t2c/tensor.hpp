#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "t2c/errors.hpp"

namespace t2c {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

/// Dense row-major array. Copies share storage (handle semantics); use
/// clone() for a deep copy. A tensor created by an op while a Tape is active
/// and with at least one grad-requiring input is itself grad-requiring and
/// owned by that tape's backward pass.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
      }
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  /// Leading dimension of a 2-D view; a 1-D tensor is one row.
  std::size_t rows() const { return dim() == 1 ? 1 : impl_->shape[0]; }
  /// Trailing extent of a 2-D view (product of all but the first dim).
  std::size_t cols() const { return dim() == 1 ? impl_->shape[0] : numel() / impl_->shape[0]; }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }

  /// Gradient buffer, zero-allocated on first access. Gradients are
  /// accumulation state of the shared storage, so this is const on the handle.
  std::span<T> grad_mut() const {
    if (impl_->grad.empty()) {
      impl_->grad.assign(impl_->data.size(), T{0});
    }
    return impl_->grad;
  }

  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), T{0}); }
  void drop_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  Tensor clone() const {
    Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
    return out;
  }

  const Tape<T>* tape() const { return impl_->tape; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape<T>;

  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    const Tape<T>* tape = nullptr;
  };

  std::shared_ptr<Impl> impl_;
};

/// Records backward rules of ops executed while it is active. Construction
/// activates the tape for the current thread; destruction restores the
/// previously active one. With no active tape ops run tape-free.
template <typename T>
class Tape {
 public:
  Tape() : previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  std::size_t size() const { return rules_.size(); }

  /// Adopts `out` as produced on this tape and appends its backward rule.
  void record(Tensor<T>& out, std::function<void()> rule) {
    out.impl_->requires_grad = true;
    out.impl_->tape = this;
    rules_.push_back(std::move(rule));
  }

  /// Seeds d(loss)=1 and runs every recorded rule in reverse recording
  /// order. The tape is emptied afterwards.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (loss.tape() != this) {
      throw ContractError("backward: loss was not produced on this tape");
    }
    loss.grad_mut()[0] += T{1};
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) {
      (*it)();
    }
    rules_.clear();
  }

  void clear() { rules_.clear(); }

 private:
  static inline thread_local Tape* active_ = nullptr;
  Tape* previous_;
  std::vector<std::function<void()>> rules_;
};

/// Backward on the currently active tape.
template <typename T>
void backward(Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) {
    throw ContractError("backward called with no active tape");
  }
  tape->backward(loss);
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
  for (auto& p : params) {
    p.zero_grad();
  }
}

/// Creates the output of a user-defined op. When a tape is active and any
/// input requires gradients, `rule(out)` is recorded; it must accumulate
/// into the inputs' grad_mut() from out.grad().
template <typename T>
Tensor<T> custom_op(Shape shape, std::vector<T> values, std::initializer_list<Tensor<T>> inputs,
                    std::function<void(Tensor<T>&)> rule) {
  Tensor<T> out(std::move(shape), std::move(values));
  Tape<T>* tape = Tape<T>::active();
  bool needs = false;
  for (const auto& in : inputs) {
    needs = needs || in.requires_grad();
  }
  if (tape != nullptr && needs) {
    tape->record(out, [out, rule = std::move(rule)]() mutable {
      if (out.has_grad()) {
        rule(out);
      }
    });
  }
  return out;
}

}  // namespace t2c
