#include "recurseq/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace recurseq {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor<T>(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Parameter<T>::Parameter(std::string n, Tensor<T> v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

template <typename T>
void Parameter<T>::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
  grad.fill(T{0});
}

template <typename T>
Tensor<T> tensor_new(const Shape& shape, const Fill& how, Rng* rng) {
  if (shape.empty()) throw std::invalid_argument("tensor_new: shape must be nonempty");
  for (auto d : shape)
    if (d == 0) throw std::invalid_argument("tensor_new: zero dimension in shape " + shape_str(shape));
  Tensor<T> out(shape);
  auto need_rng = [&]() -> Rng& {
    if (!rng) throw std::invalid_argument("tensor_new: random fill requires an Rng");
    return *rng;
  };
  if (const auto* v = std::get_if<fill::Value>(&how)) {
    out.fill(static_cast<T>(v->value));
  } else if (const auto* u = std::get_if<fill::Uniform>(&how)) {
    Rng& r = need_rng();
    for (auto& x : out.data()) x = static_cast<T>(r.uniform(u->lo, u->hi));
  } else if (const auto* n = std::get_if<fill::Normal>(&how)) {
    Rng& r = need_rng();
    for (auto& x : out.data()) x = static_cast<T>(r.normal(n->mean, n->stddev));
  }
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template struct Parameter<float>;
template struct Parameter<double>;
template Tensor<float> tensor_new<float>(const Shape&, const Fill&, Rng*);
template Tensor<double> tensor_new<double>(const Shape&, const Fill&, Rng*);

}  // namespace recurseq
