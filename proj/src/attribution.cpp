#include "recurseq/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "recurseq/io.hpp"
#include "recurseq/train.hpp"

namespace recurseq {

template <typename T>
Tensor<T> integrated_gradients(const AttributionFn<T>& f, const Tensor<T>& x, const Tensor<T>& baseline, int steps) {
  if (x.shape() != baseline.shape()) {
    throw std::invalid_argument("integrated_gradients: input " + shape_str(x.shape()) + " vs baseline " +
                                shape_str(baseline.shape()));
  }
  if (steps < 1) throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  Tensor<T> total(x.shape());
  Tensor<T> point(x.shape());
  for (int s = 1; s <= steps; ++s) {
    const double alpha = static_cast<double>(s) / steps;
    for (std::size_t i = 0; i < x.size(); ++i) point[i] = static_cast<T>(baseline[i] + alpha * (x[i] - baseline[i]));
    Tape<T> tape;
    tape.freeze_params(true);
    Var<T> in = tape.input(point);
    tape.backward(f(tape, in));
    const Tensor<T>& g = in.grad();
    for (std::size_t i = 0; i < x.size(); ++i) total[i] += g[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) total[i] = (x[i] - baseline[i]) * total[i] / static_cast<T>(steps);
  return total;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> embed_with_baseline(Autoencoder<T>& model, const std::string& text) {
  const SequenceBatch batch = make_batch({text}, model.config());
  PaddedSequence blank = batch.seqs.front();
  std::fill(blank.ids.begin(), blank.ids.end(), blank.pad_id);
  blank.positions.clear();
  blank.original_length = 0;
  const SequenceBatch blank_batch = stack_sequences({blank});
  Tape<T> tape(false);
  return {model.encoder().embed(tape, batch).value(), model.encoder().embed(tape, blank_batch).value()};
}

namespace {

// Interpolation points are evaluated as one batch; with per-sample
// normalization each row's gradient is that point's own gradient.
constexpr int kStepsPerChunk = 64;

template <typename T>
std::vector<double> log_prob_at(Autoencoder<T>& model, const Tensor<T>& embedded, std::size_t position,
                                std::int32_t target) {
  Tape<T> tape(false);
  const Var<T> logits = model.logits_from_embedded(tape.constant(embedded), NormPhase::kInfer);
  const std::size_t len = embedded.dim(2), nv = logits.dim(1);
  std::vector<double> out;
  for (std::size_t b = 0; b < embedded.dim(0); ++b) {
    const T* row = logits.value().ptr() + (b * len + position) * nv;
    const T mx = *std::max_element(row, row + nv);
    double z = 0.0;
    for (std::size_t v = 0; v < nv; ++v) z += std::exp(static_cast<double>(row[v] - mx));
    out.push_back(static_cast<double>(row[target] - mx) - std::log(z));
  }
  return out;
}

}  // namespace

template <typename T>
PositionAttribution<T> attribute_position(Autoencoder<T>& model, const std::string& text, std::size_t position,
                                          int steps) {
  if (steps < 1) throw std::invalid_argument("attribute_position: steps must be >= 1");
  auto [x, baseline] = embed_with_baseline(model, text);
  const std::size_t d = x.dim(1), len = x.dim(2);
  if (position >= len) throw std::out_of_range("attribute_position: position " + std::to_string(position));

  PositionAttribution<T> out;
  {
    Tape<T> tape(false);
    const Var<T> logits = model.logits_from_embedded(tape.constant(x), NormPhase::kInfer);
    const std::size_t nv = logits.dim(1);
    const T* row = logits.value().ptr() + position * nv;
    out.target = static_cast<std::int32_t>(std::max_element(row, row + nv) - row);
  }
  out.f_input = log_prob_at(model, x, position, out.target).front();
  out.f_baseline = log_prob_at(model, baseline, position, out.target).front();

  const std::size_t plane = d * len;
  Tensor<double> grad_sum({plane});
  for (int first = 1; first <= steps; first += kStepsPerChunk) {
    const int count = std::min(kStepsPerChunk, steps - first + 1);
    Tensor<T> points({static_cast<std::size_t>(count), d, len});
    for (int s = 0; s < count; ++s) {
      const double alpha = static_cast<double>(first + s) / steps;
      T* dst = points.ptr() + static_cast<std::size_t>(s) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(baseline[i] + alpha * (x[i] - baseline[i]));
    }
    Tape<T> tape;
    tape.freeze_params(true);
    Var<T> in = tape.input(std::move(points));
    const Var<T> logits = model.logits_from_embedded(in, NormPhase::kInfer);
    std::vector<std::int32_t> targets(logits.dim(0), 0);
    std::vector<std::uint8_t> mask(logits.dim(0), 0);
    for (int s = 0; s < count; ++s) {
      targets[static_cast<std::size_t>(s) * len + position] = out.target;
      mask[static_cast<std::size_t>(s) * len + position] = 1;
    }
    // Sum of log-probabilities over the chunk.
    tape.backward(scale(softmax_xent(logits, targets, mask), static_cast<T>(-count)));
    const Tensor<T>& g = in.grad();
    for (int s = 0; s < count; ++s)
      for (std::size_t i = 0; i < plane; ++i) grad_sum[i] += g[static_cast<std::size_t>(s) * plane + i];
  }
  out.values = Tensor<T>({d, len});
  for (std::size_t i = 0; i < plane; ++i) {
    out.values[i] = static_cast<T>((static_cast<double>(x[i]) - baseline[i]) * grad_sum[i] / steps);
  }
  return out;
}

template <typename T>
AttributionMatrix attribution_matrix(Autoencoder<T>& model, const std::string& text, int steps) {
  AttributionMatrix m;
  m.text = text;
  const std::size_t len = make_batch({text}, model.config()).length;
  m.values = Tensor<double>({len, len});
  for (std::size_t p = 0; p < len; ++p) {
    const auto pa = attribute_position(model, text, p, steps);
    m.predicted.push_back(pa.target);
    const std::size_t d = pa.values.dim(0);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t i = 0; i < len; ++i) m.values[p * len + i] += std::abs(static_cast<double>(pa.values[c * len + i]));
  }
  const SequenceBatch batch = make_batch({text}, model.config());
  if (count_errors(batch, m.predicted).wrong_tokens > 0) {
    std::cerr << "warning: the model does not reproduce this input; attributions may be meaningless\n";
  }
  return m;
}

HeatmapFormat parse_heatmap_format(std::string_view name) {
  if (name == "csv") return HeatmapFormat::kCsv;
  if (name == "pgm") return HeatmapFormat::kPgm;
  throw std::invalid_argument("unknown heatmap format '" + std::string(name) + "' (csv|pgm)");
}

std::vector<std::uint8_t> heatmap_pixels(const Tensor<double>& values) {
  if (!values.all_finite()) throw std::invalid_argument("heatmap: non-finite values");
  const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::uint8_t> px(values.size(), 128);
  if (hi > lo) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (hi - values[i]) / (hi - lo)));
    }
  }
  return px;
}

void export_heatmap(const AttributionMatrix& m, const std::filesystem::path& path, HeatmapFormat format) {
  if (m.values.rank() != 2) throw std::invalid_argument("heatmap: expected a matrix");
  const std::size_t rows = m.values.dim(0), cols = m.values.dim(1);
  std::ostringstream os;
  if (format == HeatmapFormat::kCsv) {
    os.precision(17);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << m.values[r * cols + c];
      os << '\n';
    }
  } else {
    const auto px = heatmap_pixels(m.values);
    os << "P5\n" << cols << ' ' << rows << "\n255\n";
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  }
  write_file_atomic(path, os.str());
}

#define RECURSEQ_INSTANTIATE(T)                                                                                  \
  template Tensor<T> integrated_gradients(const AttributionFn<T>&, const Tensor<T>&, const Tensor<T>&, int);   \
  template std::pair<Tensor<T>, Tensor<T>> embed_with_baseline(Autoencoder<T>&, const std::string&);           \
  template PositionAttribution<T> attribute_position(Autoencoder<T>&, const std::string&, std::size_t, int);   \
  template AttributionMatrix attribution_matrix(Autoencoder<T>&, const std::string&, int);

RECURSEQ_INSTANTIATE(float)
RECURSEQ_INSTANTIATE(double)

#undef RECURSEQ_INSTANTIATE

}  // namespace recurseq
