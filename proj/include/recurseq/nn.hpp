#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "recurseq/autodiff.hpp"

namespace recurseq {

/// Temporal convolution weights: weight [out, in, kernel], bias [out].
template <typename T>
struct Conv1dParams {
  Parameter<T> weight;
  Parameter<T> bias;

  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t kernel() const { return weight.value.dim(2); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weight and bias.
template <typename T>
Conv1dParams<T> make_conv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, Rng& rng);

/// Cross-correlation with zero "same" padding of (kernel-1)/2 on the left.
/// x is [C,T] or [B,C,T]; output length is T/stride.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride = 1);
template <typename T>
Var<T> conv1d(const Var<T>& x, Conv1dParams<T>& p, std::size_t stride = 1);

/// Kernel-2 max-pool over time. Ties route the gradient to the left element.
template <typename T>
Var<T> maxpool1d(const Var<T>& x);

/// [.., 2d, T] -> [.., d, 2T]; out[c, 2t] = x[c, t], out[c, 2t+1] = x[c+d, t].
template <typename T>
Var<T> expand1d(const Var<T>& x);

enum class NormMode { kBatch, kInstance, kNone };
enum class NormPhase {
  kTrain,            // batch statistics, running stats updated
  kInfer,            // stored running statistics
  kBatchCalibrated,  // statistics of the given batch, nothing updated
};

/// Normalization state for one layer at one recursion step.
template <typename T>
struct NormStats {
  std::string name;
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  int step_key = 0;
  std::uint64_t updates = 0;  // 0 means the running stats were never filled

  NormStats() = default;
  NormStats(const std::string& name, std::size_t channels, int step_key, double momentum = 0.1);
  std::size_t channels() const { return gamma.value.size(); }
};

inline constexpr double kNormEpsilon = 1e-5;

/// x is [B,C,T]; statistics are per channel over (B,T), population variance.
template <typename T>
Var<T> batch_norm(const Var<T>& x, NormStats<T>& stats, NormPhase phase);

/// x is [B,C,T]; statistics are per (sample, channel) over T.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta);

/// Dispatches on the configured normalization.
template <typename T>
Var<T> normalize(const Var<T>& x, NormStats<T>& stats, NormMode mode, NormPhase phase);

template <typename T>
struct ResidualBlockParams {
  Conv1dParams<T> conv1;
  Conv1dParams<T> conv2;
};

/// relu(norm2(conv2(relu(norm1(conv1(x))))) + x)
template <typename T>
Var<T> residual_block(const Var<T>& x, ResidualBlockParams<T>& p, NormStats<T>& norm1, NormStats<T>& norm2,
                      NormMode mode, NormPhase phase);

template <typename T>
struct EmbeddingTable {
  Parameter<T> vectors;  // [vocab, d]
  bool frozen = false;

  std::size_t vocab_size() const { return vectors.value.dim(0); }
  std::size_t dim() const { return vectors.value.dim(1); }
};

/// ids has batch*len entries (row-major); output [B, d, len], or [d, len]
/// when batch == 0.
template <typename T>
Var<T> embedding_lookup(Tape<T>& tape, EmbeddingTable<T>& table, std::span<const std::int32_t> ids,
                        std::size_t batch = 0);

/// x [n] or [B,n]; W [m,n]; b [m].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// [B,C,T] -> [B*T, C], row b*T+t holding the channels of position t.
template <typename T>
Var<T> to_positions(const Var<T>& x);

/// Mean over selected rows of -log softmax(logits[p])[targets[p]].
/// An empty mask selects every row.
template <typename T>
Var<T> softmax_xent(const Var<T>& logits, std::span<const std::int32_t> targets,
                    std::span<const std::uint8_t> mask = {});

}  // namespace recurseq
