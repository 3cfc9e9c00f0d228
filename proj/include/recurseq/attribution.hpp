#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "recurseq/model.hpp"

namespace recurseq {

/// Scalar function of one input tensor, evaluated on the given tape.
template <typename T>
using AttributionFn = std::function<Var<T>(Tape<T>&, const Var<T>&)>;

/// (x - b) * mean over s = 1..steps of df/dx at b + (s/steps)(x - b).
template <typename T>
Tensor<T> integrated_gradients(const AttributionFn<T>& f, const Tensor<T>& x, const Tensor<T>& baseline,
                               int steps = 50);

/// Integrated gradients of one output position's log-probability with
/// respect to the embedded input.
template <typename T>
struct PositionAttribution {
  Tensor<T> values;          // [d, 2^K]
  std::int32_t target = 0;   // predicted id at the position
  double f_input = 0.0;      // log p(target) at the input
  double f_baseline = 0.0;   // log p(target) at the baseline
};

struct AttributionMatrix {
  Tensor<double> values;  // [2^K outputs, 2^K inputs], L1 over channels
  std::string text;
  std::string baseline = "embedded all-PAD sequence";
  std::vector<std::int32_t> predicted;  // argmax per output position
};

/// Embedded input [1, d, 2^K] and its all-PAD baseline.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> embed_with_baseline(Autoencoder<T>& model, const std::string& text);

/// Attributions for output `position`, targeting the model's argmax there.
/// Needs infer-ready normalization (calibrated stats or no batch norm).
template <typename T>
PositionAttribution<T> attribute_position(Autoencoder<T>& model, const std::string& text, std::size_t position,
                                          int steps = 50);

template <typename T>
AttributionMatrix attribution_matrix(Autoencoder<T>& model, const std::string& text, int steps = 50);

enum class HeatmapFormat { kCsv, kPgm };

HeatmapFormat parse_heatmap_format(std::string_view name);

/// CSV holds raw values, one row per output position. PGM (P5) is min-max
/// normalized with the strongest value black; a constant matrix is mid-gray.
void export_heatmap(const AttributionMatrix& m, const std::filesystem::path& path, HeatmapFormat format);

/// 8-bit pixels as written to PGM, row-major.
std::vector<std::uint8_t> heatmap_pixels(const Tensor<double>& values);

}  // namespace recurseq
