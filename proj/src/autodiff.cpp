#include "recurseq/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace recurseq {

namespace detail {

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  Tensor<T>& g = param ? param->grad : grad;
  if (g.shape() != val().shape()) g = Tensor<T>(val().shape());
  return g;
}

}  // namespace detail

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  static const Tensor<T> kEmpty;
  const auto& n = *node_;
  if (n.param) return n.param->grad;
  return n.grad.empty() ? kEmpty : n.grad;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value) {
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  node->requires_grad = recording_;
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  if (params_frozen_) return frozen(p);
  auto node = std::make_shared<detail::Node<T>>();
  node->param = &p;
  node->requires_grad = recording_;
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::frozen(const Parameter<T>& p) {
  auto node = std::make_shared<detail::Node<T>>();
  node->param = const_cast<Parameter<T>*>(&p);  // never written: requires_grad stays false
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  if (consumed_) throw std::logic_error("tape already consumed");
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw std::invalid_argument("op inputs come from a different tape");
    needs = needs || in.requires_grad();
  }
  if (recording_ && needs) {
    node->requires_grad = true;
    node->backward = std::move(fn);
    nodes_.push_back(node);
  }
  return Var<T>(std::move(node), this);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (consumed_) throw std::logic_error("tape already consumed");
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss was not produced on this tape");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.grad_buffer()[0] += T{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (!node.grad.empty() && node.backward) node.backward(node.grad);
    node.backward = nullptr;
  }
  nodes_.clear();
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  return a.tape().emit(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    for (const Var<T>* in : {&a, &b}) {
      if (!in->requires_grad()) continue;
      T* dst = in->grad_buffer().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  return a.tape().emit(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (a.requires_grad()) {
      T* dst = a.grad_buffer().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
    if (b.requires_grad()) {
      T* dst = b.grad_buffer().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  return a.tape().emit(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    if (a.requires_grad()) {
      T* dst = a.grad_buffer().ptr();
      const T* other = b.value().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
    if (b.requires_grad()) {
      T* dst = b.grad_buffer().ptr();
      const T* other = a.value().ptr();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().emit(std::move(out), {a}, [a, s](const Tensor<T>& g) {
    T* dst = a.grad_buffer().ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return a.tape().emit(std::move(out), {a}, [a](const Tensor<T>& g) {
    T* dst = a.grad_buffer().ptr();
    const T* x = a.value().ptr();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T{0}) dst[i] += g[i];
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  return a.tape().emit(std::move(out), {a}, [a](const Tensor<T>& g) {
    T* dst = a.grad_buffer().ptr();
    const T* x = a.value().ptr();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) dst[i] += g[i];
      else if (x[i] < T{0}) dst[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T v : a.value().data()) total += v;
  return a.tape().emit(Tensor<T>({1}, std::vector<T>{total}), {a}, [a](const Tensor<T>& g) {
    const T up = g[0];
    for (auto& v : a.grad_buffer().data()) v += up;
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.value().size()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return a.tape().emit(a.value().reshaped(std::move(shape)), {a}, [a](const Tensor<T>& g) {
    T* dst = a.grad_buffer().ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size()) {
    throw std::invalid_argument("concat: incompatible ranks " + shape_str(sa) + " and " + shape_str(sb));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (i != axis && sa[i] != sb[i]) {
      throw std::invalid_argument("concat: dimension " + std::to_string(i) + " differs: " + shape_str(sa) +
                                  " vs " + shape_str(sb));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
  for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t ca = sa[axis] * inner, cb = sb[axis] * inner;
  Shape so = sa;
  so[axis] += sb[axis];
  Tensor<T> out(so);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().ptr() + o * ca, ca, out.ptr() + o * (ca + cb));
    std::copy_n(b.value().ptr() + o * cb, cb, out.ptr() + o * (ca + cb) + ca);
  }
  return a.tape().emit(std::move(out), {a, b}, [a, b, outer, ca, cb](const Tensor<T>& g) {
    if (a.requires_grad()) {
      T* dst = a.grad_buffer().ptr();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < ca; ++i) dst[o * ca + i] += g[o * (ca + cb) + i];
    }
    if (b.requires_grad()) {
      T* dst = b.grad_buffer().ptr();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < cb; ++i) dst[o * cb + i] += g[o * (ca + cb) + ca + i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  if (a.rank() < 2 || a.rank() > 3) {
    throw std::invalid_argument("concat_channels expects [C,T] or [B,C,T], got " + shape_str(a.shape()));
  }
  if (a.rank() == b.rank() && a.shape().back() != b.shape().back()) {
    throw std::invalid_argument("concat_channels: time dimension mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  return concat(a, b, a.rank() - 2);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first) {
  const std::size_t axis = x.rank() - 2;
  const std::size_t c = x.dim(axis);
  if (first > c) throw std::invalid_argument("split_channels: split point beyond channel count");
  const std::size_t time = x.shape().back();
  const std::size_t outer = x.size() / (c * time);
  Shape sa = x.shape(), sb = x.shape();
  sa[axis] = first;
  sb[axis] = c - first;
  Tensor<T> a(sa), b(sb);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = x.ptr() + o * c * time;
    std::copy_n(src, first * time, a.ptr() + o * first * time);
    std::copy_n(src + first * time, (c - first) * time, b.ptr() + o * (c - first) * time);
  }
  return {std::move(a), std::move(b)};
}

namespace {

double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs, double eps) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.input(x));
    Var<double> loss = f(tape, vars);
    if (loss.value().size() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad().empty() ? Tensor<double>(v.shape()) : v.grad());
  }
  auto evaluate = [&]() {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double up = evaluate();
      inputs[k][i] = orig - eps;
      const double down = evaluate();
      inputs[k][i] = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

double grad_check_params(const std::function<Var<double>(Tape<double>&)>& f,
                         std::span<Parameter<double>* const> params, double eps) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = f(tape);
    if (loss.value().size() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
    tape.backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);
  auto evaluate = [&]() {
    Tape<double> tape(false);
    return f(tape).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = evaluate();
      value[i] = orig - eps;
      const double down = evaluate();
      value[i] = orig;
      worst = std::max(worst, rel_error(analytic[k][i], (up - down) / (2.0 * eps)));
    }
  }
  return worst;
}

#define RECURSEQ_INSTANTIATE(T)                                                        \
  template struct detail::Node<T>;                                                     \
  template class Var<T>;                                                               \
  template class Tape<T>;                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                   \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                   \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                   \
  template Var<T> scale(const Var<T>&, T);                                             \
  template Var<T> relu(const Var<T>&);                                                 \
  template Var<T> abs(const Var<T>&);                                                  \
  template Var<T> sum(const Var<T>&);                                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                       \
  template Var<T> concat(const Var<T>&, const Var<T>&, std::size_t);                   \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                       \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);

RECURSEQ_INSTANTIATE(float)
RECURSEQ_INSTANTIATE(double)

#undef RECURSEQ_INSTANTIATE

}  // namespace recurseq
