#include "recurseq/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace recurseq {

namespace {

template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Bct {
  std::size_t batch, channels, time;
  bool batched;
};

Bct bct_of(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, s[0], s[1], false};
  if (s.size() == 3) return {s[0], s[1], s[2], true};
  throw std::invalid_argument(std::string(op) + " expects [C,T] or [B,C,T], got " + shape_str(s));
}

Shape make_shape(const Bct& d, std::size_t channels, std::size_t time) {
  return d.batched ? Shape{d.batch, channels, time} : Shape{channels, time};
}

}  // namespace

template <typename T>
Conv1dParams<T> make_conv1d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
                            Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
  Conv1dParams<T> p;
  p.weight = Parameter<T>(name + ".weight", tensor_new<T>({out, in, kernel}, fill::Uniform{-bound, bound}, &rng));
  p.bias = Parameter<T>(name + ".bias", tensor_new<T>({out}, fill::Uniform{-bound, bound}, &rng));
  return p;
}

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride) {
  const Bct d = bct_of(x.shape(), "conv1d");
  if (weight.rank() != 3) throw std::invalid_argument("conv1d: weight must be [out,in,kernel]");
  const std::size_t cout = weight.dim(0), cin = weight.dim(1), k = weight.dim(2);
  if (cin != d.channels) {
    throw std::invalid_argument("conv1d: input has " + std::to_string(d.channels) + " channels, weight expects " +
                                std::to_string(cin));
  }
  if (bias.shape() != Shape{cout}) throw std::invalid_argument("conv1d: bias shape mismatch");
  if (stride == 0 || d.time % stride != 0) {
    throw std::invalid_argument("conv1d: length " + std::to_string(d.time) + " not divisible by stride " +
                                std::to_string(stride));
  }
  const std::size_t tout = d.time / stride;
  const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  const std::size_t rows = cin * k, ncols = d.batch * tout;
  const auto tin = static_cast<std::ptrdiff_t>(d.time);

  auto cols = std::make_shared<ColMat<T>>(rows, ncols);
  const T* xs = x.value().ptr();
  for (std::size_t b = 0; b < d.batch; ++b) {
    const T* xb = xs + b * cin * d.time;
    for (std::size_t t = 0; t < tout; ++t) {
      T* col = cols->data() + (b * tout + t) * rows;
      const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) - pad;
      for (std::size_t i = 0; i < cin; ++i) {
        const T* xi = xb + i * d.time;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = base + static_cast<std::ptrdiff_t>(j);
          col[i * k + j] = (src >= 0 && src < tin) ? xi[src] : T{0};
        }
      }
    }
  }
  // One product per sample keeps each output independent of its batch mates.
  Eigen::Map<const RowMat<T>> w(weight.value().ptr(), cout, rows);
  Tensor<T> out(make_shape(d, cout, tout));
  const T* bv = bias.value().ptr();
  for (std::size_t b = 0; b < d.batch; ++b) {
    Eigen::Map<const ColMat<T>> cb(cols->data() + b * tout * rows, rows, tout);
    Eigen::Map<ColMat<T>> yb(out.ptr() + b * cout * tout, tout, cout);
    yb.noalias() = cb.transpose() * w.transpose();
    for (std::size_t o = 0; o < cout; ++o) yb.col(static_cast<Eigen::Index>(o)).array() += bv[o];
  }

  return x.tape().emit(std::move(out), {x, weight, bias},
                       [x, weight, bias, cols, d, cout, cin, k, rows, ncols, tout, stride, pad](const Tensor<T>& g) {
                         ColMat<T> gt(ncols, cout);
                         for (std::size_t b = 0; b < d.batch; ++b)
                           for (std::size_t o = 0; o < cout; ++o)
                             std::copy_n(g.ptr() + (b * cout + o) * tout, tout, gt.data() + o * ncols + b * tout);
                         if (weight.requires_grad()) {
                           Eigen::Map<ColMat<T>> dw(weight.grad_buffer().ptr(), rows, cout);
                           dw.noalias() += (*cols) * gt;
                         }
                         if (bias.requires_grad()) {
                           T* db = bias.grad_buffer().ptr();
                           for (std::size_t o = 0; o < cout; ++o) db[o] += gt.col(o).sum();
                         }
                         if (x.requires_grad()) {
                           Eigen::Map<const RowMat<T>> w(weight.value().ptr(), cout, rows);
                           ColMat<T> dcols(rows, ncols);
                           dcols.noalias() = w.transpose() * gt.transpose();
                           T* dx = x.grad_buffer().ptr();
                           const auto tin = static_cast<std::ptrdiff_t>(d.time);
                           for (std::size_t b = 0; b < d.batch; ++b) {
                             T* dxb = dx + b * cin * d.time;
                             for (std::size_t t = 0; t < tout; ++t) {
                               const T* col = dcols.data() + (b * tout + t) * rows;
                               const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(t * stride) - pad;
                               for (std::size_t i = 0; i < cin; ++i)
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const std::ptrdiff_t dst = base + static_cast<std::ptrdiff_t>(j);
                                   if (dst >= 0 && dst < tin) dxb[i * d.time + dst] += col[i * k + j];
                                 }
                             }
                           }
                         }
                       });
}

template <typename T>
Var<T> conv1d(const Var<T>& x, Conv1dParams<T>& p, std::size_t stride) {
  Tape<T>& tape = x.tape();
  return conv1d(x, tape.param(p.weight), tape.param(p.bias), stride);
}

template <typename T>
Var<T> maxpool1d(const Var<T>& x) {
  const Bct d = bct_of(x.shape(), "maxpool1d");
  if (d.time % 2 != 0) throw std::invalid_argument("maxpool1d: odd length " + std::to_string(d.time));
  const std::size_t rows = d.batch * d.channels, half = d.time / 2;
  Tensor<T> out(make_shape(d, d.channels, half));
  auto pick = std::make_shared<std::vector<std::uint8_t>>(rows * half);
  const T* xs = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < half; ++t) {
      const T left = xs[r * d.time + 2 * t], right = xs[r * d.time + 2 * t + 1];
      const bool take_right = right > left;
      (*pick)[r * half + t] = take_right;
      out[r * half + t] = take_right ? right : left;
    }
  return x.tape().emit(std::move(out), {x}, [x, pick, rows, half](const Tensor<T>& g) {
    T* dx = x.grad_buffer().ptr();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < half; ++t) dx[r * 2 * half + 2 * t + (*pick)[r * half + t]] += g[r * half + t];
  });
}

template <typename T>
Var<T> expand1d(const Var<T>& x) {
  const Bct d = bct_of(x.shape(), "expand1d");
  if (d.channels % 2 != 0) throw std::invalid_argument("expand1d: odd channel count " + std::to_string(d.channels));
  const std::size_t half = d.channels / 2, time = d.time;
  Tensor<T> out(make_shape(d, half, 2 * time));
  const T* xs = x.value().ptr();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < half; ++c) {
      const T* lo = xs + (b * d.channels + c) * time;
      const T* hi = xs + (b * d.channels + c + half) * time;
      T* dst = out.ptr() + (b * half + c) * 2 * time;
      for (std::size_t t = 0; t < time; ++t) {
        dst[2 * t] = lo[t];
        dst[2 * t + 1] = hi[t];
      }
    }
  return x.tape().emit(std::move(out), {x}, [x, d, half, time](const Tensor<T>& g) {
    T* dx = x.grad_buffer().ptr();
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t c = 0; c < half; ++c) {
        T* lo = dx + (b * d.channels + c) * time;
        T* hi = dx + (b * d.channels + c + half) * time;
        const T* src = g.ptr() + (b * half + c) * 2 * time;
        for (std::size_t t = 0; t < time; ++t) {
          lo[t] += src[2 * t];
          hi[t] += src[2 * t + 1];
        }
      }
  });
}

template <typename T>
NormStats<T>::NormStats(const std::string& base, std::size_t channels, int key, double mom)
    : name(base),
      gamma(base + ".gamma", Tensor<T>({channels}, T{1})),
      beta(base + ".beta", Tensor<T>({channels}, T{0})),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      momentum(mom),
      step_key(key) {}

template <typename T>
Var<T> batch_norm(const Var<T>& x, NormStats<T>& stats, NormPhase phase) {
  if (x.rank() != 3) throw std::invalid_argument("batch_norm expects [B,C,T], got " + shape_str(x.shape()));
  const std::size_t nb = x.dim(0), nc = x.dim(1), nt = x.dim(2);
  if (stats.channels() != nc) throw std::invalid_argument("batch_norm: channel mismatch with stats");
  if (phase == NormPhase::kTrain && nb < 2) throw std::invalid_argument("batch_norm: train mode needs batch >= 2");
  if (phase == NormPhase::kInfer && stats.updates == 0) {
    throw std::logic_error("batch_norm: inference with never-updated statistics (" + stats.gamma.name + ")");
  }
  Tape<T>& tape = x.tape();
  Var<T> gamma = tape.param(stats.gamma);
  Var<T> beta = tape.param(stats.beta);
  const bool use_batch = phase != NormPhase::kInfer;
  const double count = static_cast<double>(nb * nt);
  const T* xs = x.value().ptr();

  std::vector<double> mean(nc), inv_std(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    double m, v;
    if (use_batch) {
      double s = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t t = 0; t < nt; ++t) s += xs[(b * nc + c) * nt + t];
      m = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t t = 0; t < nt; ++t) {
          const double dv = xs[(b * nc + c) * nt + t] - m;
          ss += dv * dv;
        }
      v = ss / count;
      if (phase == NormPhase::kTrain) {
        const double mom = stats.momentum;
        stats.running_mean[c] = static_cast<T>((1.0 - mom) * stats.running_mean[c] + mom * m);
        stats.running_var[c] = static_cast<T>((1.0 - mom) * stats.running_var[c] + mom * v);
      }
    } else {
      m = stats.running_mean[c];
      v = stats.running_var[c];
    }
    mean[c] = m;
    inv_std[c] = 1.0 / std::sqrt(v + kNormEpsilon);
  }
  if (phase == NormPhase::kTrain) ++stats.updates;

  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  Tensor<T> out(x.shape());
  const T* gv = stats.gamma.value.ptr();
  const T* bv = stats.beta.value.ptr();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < nc; ++c) {
      const std::size_t off = (b * nc + c) * nt;
      for (std::size_t t = 0; t < nt; ++t) {
        const T h = static_cast<T>((xs[off + t] - mean[c]) * inv_std[c]);
        (*xhat)[off + t] = h;
        out[off + t] = gv[c] * h + bv[c];
      }
    }

  return tape.emit(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat, inv_std, use_batch, nb, nc, nt, count](const Tensor<T>& g) {
                     std::vector<double> sum_g(nc, 0.0), sum_gx(nc, 0.0);
                     for (std::size_t b = 0; b < nb; ++b)
                       for (std::size_t c = 0; c < nc; ++c) {
                         const std::size_t off = (b * nc + c) * nt;
                         for (std::size_t t = 0; t < nt; ++t) {
                           sum_g[c] += g[off + t];
                           sum_gx[c] += static_cast<double>(g[off + t]) * (*xhat)[off + t];
                         }
                       }
                     if (gamma.requires_grad()) {
                       T* dg = gamma.grad_buffer().ptr();
                       for (std::size_t c = 0; c < nc; ++c) dg[c] += static_cast<T>(sum_gx[c]);
                     }
                     if (beta.requires_grad()) {
                       T* db = beta.grad_buffer().ptr();
                       for (std::size_t c = 0; c < nc; ++c) db[c] += static_cast<T>(sum_g[c]);
                     }
                     if (!x.requires_grad()) return;
                     T* dx = x.grad_buffer().ptr();
                     const T* gv = gamma.value().ptr();
                     for (std::size_t b = 0; b < nb; ++b)
                       for (std::size_t c = 0; c < nc; ++c) {
                         const std::size_t off = (b * nc + c) * nt;
                         const double k = gv[c] * inv_std[c];
                         if (use_batch) {
                           const double mg = sum_g[c] / count, mgx = sum_gx[c] / count;
                           for (std::size_t t = 0; t < nt; ++t)
                             dx[off + t] += static_cast<T>(k * (g[off + t] - mg - (*xhat)[off + t] * mgx));
                         } else {
                           for (std::size_t t = 0; t < nt; ++t) dx[off + t] += static_cast<T>(k * g[off + t]);
                         }
                       }
                   });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  if (x.rank() != 3) throw std::invalid_argument("instance_norm expects [B,C,T], got " + shape_str(x.shape()));
  const std::size_t nb = x.dim(0), nc = x.dim(1), nt = x.dim(2);
  if (nt < 2) throw std::invalid_argument("instance_norm: length must be >= 2");
  if (gamma.shape() != Shape{nc} || beta.shape() != Shape{nc}) {
    throw std::invalid_argument("instance_norm: gamma/beta must have " + std::to_string(nc) + " channels");
  }
  const T* xs = x.value().ptr();
  const std::size_t rows = nb * nc;
  std::vector<double> inv_std(rows);
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  Tensor<T> out(x.shape());
  const T* gv = gamma.value().ptr();
  const T* bv = beta.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs + r * nt;
    double s = 0.0;
    for (std::size_t t = 0; t < nt; ++t) s += row[t];
    const double m = s / static_cast<double>(nt);
    double ss = 0.0;
    for (std::size_t t = 0; t < nt; ++t) ss += (row[t] - m) * (row[t] - m);
    inv_std[r] = 1.0 / std::sqrt(ss / static_cast<double>(nt) + kNormEpsilon);
    const std::size_t c = r % nc;
    for (std::size_t t = 0; t < nt; ++t) {
      const T h = static_cast<T>((row[t] - m) * inv_std[r]);
      (*xhat)[r * nt + t] = h;
      out[r * nt + t] = gv[c] * h + bv[c];
    }
  }
  return x.tape().emit(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, nc, nt, rows](const Tensor<T>& g) {
    T* dg = gamma.requires_grad() ? gamma.grad_buffer().ptr() : nullptr;
    T* db = beta.requires_grad() ? beta.grad_buffer().ptr() : nullptr;
    T* dx = x.requires_grad() ? x.grad_buffer().ptr() : nullptr;
    const T* gv = gamma.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t c = r % nc;
      double sg = 0.0, sgx = 0.0;
      for (std::size_t t = 0; t < nt; ++t) {
        sg += g[r * nt + t];
        sgx += static_cast<double>(g[r * nt + t]) * (*xhat)[r * nt + t];
      }
      if (dg) dg[c] += static_cast<T>(sgx);
      if (db) db[c] += static_cast<T>(sg);
      if (dx) {
        const double k = gv[c] * inv_std[r], n = static_cast<double>(nt);
        for (std::size_t t = 0; t < nt; ++t)
          dx[r * nt + t] += static_cast<T>(k * (g[r * nt + t] - sg / n - (*xhat)[r * nt + t] * sgx / n));
      }
    }
  });
}

template <typename T>
Var<T> normalize(const Var<T>& x, NormStats<T>& stats, NormMode mode, NormPhase phase) {
  switch (mode) {
    case NormMode::kBatch:
      return batch_norm(x, stats, phase);
    case NormMode::kInstance: {
      Tape<T>& tape = x.tape();
      return instance_norm(x, tape.param(stats.gamma), tape.param(stats.beta));
    }
    case NormMode::kNone:
      break;
  }
  return x;
}

template <typename T>
Var<T> residual_block(const Var<T>& x, ResidualBlockParams<T>& p, NormStats<T>& norm1, NormStats<T>& norm2,
                      NormMode mode, NormPhase phase) {
  if (p.conv1.in_channels() != p.conv2.out_channels()) {
    throw std::invalid_argument("residual_block: input and output channels differ");
  }
  Var<T> h = relu(normalize(conv1d(x, p.conv1), norm1, mode, phase));
  h = normalize(conv1d(h, p.conv2), norm2, mode, phase);
  return relu(add(h, x));
}

template <typename T>
Var<T> embedding_lookup(Tape<T>& tape, EmbeddingTable<T>& table, std::span<const std::int32_t> ids,
                        std::size_t batch) {
  const std::size_t vocab = table.vocab_size(), dim = table.dim();
  const std::size_t nb = batch == 0 ? 1 : batch;
  if (ids.empty() || ids.size() % nb != 0) throw std::invalid_argument("embedding_lookup: ids not divisible by batch");
  const std::size_t len = ids.size() / nb;
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
  }
  Var<T> vectors = table.frozen ? tape.frozen(table.vectors) : tape.param(table.vectors);
  Tensor<T> out(batch == 0 ? Shape{dim, len} : Shape{nb, dim, len});
  const T* tab = table.vectors.value.ptr();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      const T* row = tab + static_cast<std::size_t>(ids[b * len + t]) * dim;
      for (std::size_t c = 0; c < dim; ++c) out[(b * dim + c) * len + t] = row[c];
    }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return tape.emit(std::move(out), {vectors}, [vectors, kept = std::move(kept), nb, len, dim](const Tensor<T>& g) {
    T* dtab = vectors.grad_buffer().ptr();
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t t = 0; t < len; ++t) {
        T* row = dtab + static_cast<std::size_t>(kept[b * len + t]) * dim;
        for (std::size_t c = 0; c < dim; ++c) row[c] += g[(b * dim + c) * len + t];
      }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (weight.rank() != 2) throw std::invalid_argument("linear: weight must be [m,n]");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (x.rank() < 1 || x.rank() > 2 || x.shape().back() != n) {
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()));
  }
  if (bias.shape() != Shape{m}) throw std::invalid_argument("linear: bias must be [" + std::to_string(m) + "]");
  const std::size_t nb = x.rank() == 2 ? x.dim(0) : 1;
  Eigen::Map<const RowMat<T>> xm(x.value().ptr(), nb, n);
  Eigen::Map<const RowMat<T>> wm(weight.value().ptr(), m, n);
  Tensor<T> out(x.rank() == 2 ? Shape{nb, m} : Shape{m});
  Eigen::Map<RowMat<T>> ym(out.ptr(), nb, m);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < m; ++i) ym(b, i) += bias.value()[i];
  return x.tape().emit(std::move(out), {x, weight, bias}, [x, weight, bias, nb, m, n](const Tensor<T>& g) {
    Eigen::Map<const RowMat<T>> gm(g.ptr(), nb, m);
    if (x.requires_grad()) {
      Eigen::Map<const RowMat<T>> wm(weight.value().ptr(), m, n);
      Eigen::Map<RowMat<T>> dx(x.grad_buffer().ptr(), nb, n);
      dx.noalias() += gm * wm;
    }
    if (weight.requires_grad()) {
      Eigen::Map<const RowMat<T>> xm(x.value().ptr(), nb, n);
      Eigen::Map<RowMat<T>> dw(weight.grad_buffer().ptr(), m, n);
      dw.noalias() += gm.transpose() * xm;
    }
    if (bias.requires_grad()) {
      T* db = bias.grad_buffer().ptr();
      for (std::size_t i = 0; i < m; ++i) db[i] += gm.col(static_cast<Eigen::Index>(i)).sum();
    }
  });
}

template <typename T>
Var<T> to_positions(const Var<T>& x) {
  if (x.rank() != 3) throw std::invalid_argument("to_positions expects [B,C,T]");
  const std::size_t nb = x.dim(0), nc = x.dim(1), nt = x.dim(2);
  Tensor<T> out({nb * nt, nc});
  const T* xs = x.value().ptr();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < nc; ++c)
      for (std::size_t t = 0; t < nt; ++t) out[(b * nt + t) * nc + c] = xs[(b * nc + c) * nt + t];
  return x.tape().emit(std::move(out), {x}, [x, nb, nc, nt](const Tensor<T>& g) {
    T* dx = x.grad_buffer().ptr();
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < nc; ++c)
        for (std::size_t t = 0; t < nt; ++t) dx[(b * nc + c) * nt + t] += g[(b * nt + t) * nc + c];
  });
}

template <typename T>
Var<T> softmax_xent(const Var<T>& logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_xent expects [P,V] logits");
  const std::size_t np = logits.dim(0), nv = logits.dim(1);
  if (targets.size() != np) throw std::invalid_argument("softmax_xent: need one target per position");
  if (!mask.empty() && mask.size() != np) throw std::invalid_argument("softmax_xent: mask length mismatch");
  std::size_t selected = 0;
  for (std::size_t p = 0; p < np; ++p) {
    if (!mask.empty() && !mask[p]) continue;
    if (targets[p] < 0 || static_cast<std::size_t>(targets[p]) >= nv) {
      throw std::out_of_range("softmax_xent: target " + std::to_string(targets[p]) + " outside " +
                              std::to_string(nv) + " classes");
    }
    ++selected;
  }
  if (selected == 0) throw std::invalid_argument("softmax_xent: mask selects no positions");

  auto probs = std::make_shared<Tensor<T>>(logits.shape());
  const T* ls = logits.value().ptr();
  double total = 0.0;
  for (std::size_t p = 0; p < np; ++p) {
    const T* row = ls + p * nv;
    const T mx = *std::max_element(row, row + nv);
    double z = 0.0;
    for (std::size_t v = 0; v < nv; ++v) z += std::exp(static_cast<double>(row[v] - mx));
    const double log_z = std::log(z) + mx;
    for (std::size_t v = 0; v < nv; ++v) (*probs)[p * nv + v] = static_cast<T>(std::exp(row[v] - log_z));
    if (mask.empty() || mask[p]) total += log_z - row[targets[p]];
  }
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  std::vector<std::uint8_t> mk(mask.begin(), mask.end());
  Tensor<T> out({1}, std::vector<T>{static_cast<T>(total / static_cast<double>(selected))});
  return logits.tape().emit(std::move(out), {logits},
                            [logits, probs, tg = std::move(tg), mk = std::move(mk), np, nv, selected](const Tensor<T>& g) {
                              const T up = g[0] / static_cast<T>(selected);
                              T* dl = logits.grad_buffer().ptr();
                              for (std::size_t p = 0; p < np; ++p) {
                                if (!mk.empty() && !mk[p]) continue;
                                for (std::size_t v = 0; v < nv; ++v) dl[p * nv + v] += up * (*probs)[p * nv + v];
                                dl[p * nv + static_cast<std::size_t>(tg[p])] -= up;
                              }
                            });
}

#define RECURSEQ_INSTANTIATE(T)                                                                                    \
  template Conv1dParams<T> make_conv1d(const std::string&, std::size_t, std::size_t, std::size_t, Rng&);         \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);                              \
  template Var<T> conv1d(const Var<T>&, Conv1dParams<T>&, std::size_t);                                          \
  template Var<T> maxpool1d(const Var<T>&);                                                                      \
  template Var<T> expand1d(const Var<T>&);                                                                       \
  template struct NormStats<T>;                                                                                  \
  template Var<T> batch_norm(const Var<T>&, NormStats<T>&, NormPhase);                                           \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&);                                    \
  template Var<T> normalize(const Var<T>&, NormStats<T>&, NormMode, NormPhase);                                  \
  template Var<T> residual_block(const Var<T>&, ResidualBlockParams<T>&, NormStats<T>&, NormStats<T>&, NormMode, \
                                 NormPhase);                                                                     \
  template Var<T> embedding_lookup(Tape<T>&, EmbeddingTable<T>&, std::span<const std::int32_t>, std::size_t);    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                           \
  template Var<T> to_positions(const Var<T>&);                                                                   \
  template Var<T> softmax_xent(const Var<T>&, std::span<const std::int32_t>, std::span<const std::uint8_t>);

RECURSEQ_INSTANTIATE(float)
RECURSEQ_INSTANTIATE(double)

#undef RECURSEQ_INSTANTIATE

}  // namespace recurseq
