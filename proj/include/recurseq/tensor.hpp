#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace recurseq {

using Shape = std::vector<std::size_t>;

/// Raised for malformed input data (files, corpora, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss or activation turns NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// xoshiro256** seeded through splitmix64. Bit-identical on every platform;
/// floating-point draws are derived from the integer stream by hand so no
/// implementation-defined <random> distribution is involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);
  /// Box-Muller; the second variate is cached.
  double normal(double mean, double stddev);
  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T item() const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(T value);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && a.storage() == b.storage();
}

/// Trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string name, Tensor<T> value);
  void zero_grad();
};

namespace fill {
struct Zeros {};
struct Value {
  double value;
};
struct Uniform {
  double lo;
  double hi;
};
struct Normal {
  double mean;
  double stddev;
};
}  // namespace fill

using Fill = std::variant<fill::Zeros, fill::Value, fill::Uniform, fill::Normal>;

/// Throws std::invalid_argument on an empty shape or a zero dimension.
template <typename T>
Tensor<T> tensor_new(const Shape& shape, const Fill& how, Rng* rng = nullptr);

}  // namespace recurseq
