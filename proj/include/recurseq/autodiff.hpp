#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "recurseq/tensor.hpp"

namespace recurseq {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  Parameter<T>* param = nullptr;
  bool requires_grad = false;
  std::function<void(const Tensor<T>&)> backward;

  const Tensor<T>& val() const { return param ? param->value : value; }
  Tensor<T>& grad_buffer();
};

}  // namespace detail

/// Handle to a value produced on a Tape. Cheap to copy.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const { return node_->val(); }
  const Shape& shape() const { return node_->val().shape(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t rank() const { return shape().size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }

  /// Accumulated gradient; an empty tensor if nothing flowed here.
  const Tensor<T>& grad() const;
  /// Mutable gradient buffer (allocated on first use). For op implementations.
  Tensor<T>& grad_buffer() const { return node_->grad_buffer(); }

 private:
  friend class Tape<T>;
  Var(std::shared_ptr<detail::Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  std::shared_ptr<detail::Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Records executed ops in order so gradients can be replayed in reverse.
/// A non-recording tape evaluates eagerly and keeps nothing alive.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  /// While set, param() behaves like frozen(): gradients flow only to inputs.
  void freeze_params(bool on) { params_frozen_ = on; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value);
  /// Leaf that collects a gradient (e.g. an embedded input for attribution).
  Var<T> input(Tensor<T> value);
  /// Leaf bound to a Parameter; gradients are added into param.grad.
  Var<T> param(Parameter<T>& p);
  /// Leaf reading a Parameter's value without ever collecting a gradient.
  Var<T> frozen(const Parameter<T>& p);

  /// Creates an op output. `fn` receives the upstream gradient during the
  /// reverse sweep and must add (never assign) into its inputs' buffers.
  Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and sweeps recorded ops in reverse order.
  void backward(const Var<T>& loss);

 private:
  bool recording_;
  bool consumed_ = false;
  bool params_frozen_ = false;
  std::vector<std::shared_ptr<detail::Node<T>>> nodes_;
};

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
/// max(0, x); subgradient at 0 is 0.
template <typename T>
Var<T> relu(const Var<T>& a);
/// |x|; subgradient at 0 is 0.
template <typename T>
Var<T> abs(const Var<T>& a);
/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis);
/// Concatenation along the channel axis: axis 0 of [C,T], axis 1 of [B,C,T].
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
/// Inverse of concat_channels given the first part's channel count.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first);

/// Central-difference gradient check over the elements of `inputs`.
/// Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;
double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps = 1e-4);

/// Same check for a loss built from Parameters (perturbed in place).
double grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                         std::span<Parameter<double>* const> params, double eps = 1e-4);

}  // namespace recurseq
