#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fedstlf/core/tape.hpp"
#include "fedstlf/core/tensor.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/rng.hpp"

// Differentiable primitives. Every op computes its forward value eagerly,
// records a closure for the adjoint, and only propagates into parents that
// need a gradient.

namespace fedstlf::ops {

enum class Activation { none, relu, tanh, sigmoid };

enum class Mode { train, infer };

inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kBatchNormEpsilon = 1e-3;
inline constexpr double kBatchNormMomentum = 0.99;

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double apply(Activation act, double x) {
  switch (act) {
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::none: break;
  }
  return x;
}

// Derivative expressed through the activation output y.
inline double derivative_from_output(Activation act, double y) {
  switch (act) {
    case Activation::relu: return y > 0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::none: break;
  }
  return 1.0;
}

inline void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// out[rows, cols] += a[rows, inner] * b[inner, cols]
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t rows,
                    std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * cols;
    const double* ar = a + r * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      const double* br = b + k * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += av * br[c];
    }
  }
}

// out[inner, cols] += a[rows, inner]^T * b[rows, cols]
inline void gemm_tn(const double* a, const double* b, double* out, std::size_t rows,
                    std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * inner;
    const double* br = b + r * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double av = ar[k];
      double* o = out + k * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += av * br[c];
    }
  }
}

// out[rows, inner] += a[rows, cols] * b[inner, cols]^T
inline void gemm_nt(const double* a, const double* b, double* out, std::size_t rows,
                    std::size_t cols, std::size_t inner) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * cols;
    double* o = out + r * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double* br = b + k * cols;
      // Four independent partial sums let the compiler vectorize without
      // reassociating; the summation order is still fixed.
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t c = 0;
      for (; c + 4 <= cols; c += 4) {
        s0 += ar[c] * br[c];
        s1 += ar[c + 1] * br[c + 1];
        s2 += ar[c + 2] * br[c + 2];
        s3 += ar[c + 3] * br[c + 3];
      }
      for (; c < cols; ++c) s0 += ar[c] * br[c];
      o[k] += (s0 + s1) + (s2 + s3);
    }
  }
}

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
  }
}

inline void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw DimensionError(std::string(what) + ": expected [batch, time, channels], got " +
                         shape_string(t.shape()));
  }
}

}  // namespace detail

/// y = act(x . w + b) over the last axis of x.
inline Var dense(Tape& tape, Var x, Var w, Var b, Activation act = Activation::none) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  if (wv.rank() != 2 || xv.rank() < 2 || xv.shape().back() != wv.dim(0)) {
    throw DimensionError("dense: input " + shape_string(xv.shape()) + " does not match weights " +
                         shape_string(wv.shape()));
  }
  const std::size_t in = wv.dim(0), out = wv.dim(1);
  detail::require_shape(bv, Shape{out}, "dense bias");
  const std::size_t rows = leading_size(xv.shape());

  Shape out_shape = xv.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(bv.data(), out, y.data() + r * out);
  detail::gemm_nn(xv.data(), wv.data(), y.data(), rows, in, out);
  if (act != Activation::none) {
    for (auto& v : y.values()) v = detail::apply(act, v);
  }

  return tape.record(std::move(y), {x, w, b},
                     [x, w, b, act, rows, in, out](Tape& t, const Tensor& yv, const Tensor& gy) {
                       Tensor dz = gy;
                       if (act != Activation::none) {
                         for (std::size_t i = 0; i < dz.size(); ++i)
                           dz[i] *= detail::derivative_from_output(act, yv[i]);
                       }
                       if (t.needs_grad(b)) {
                         double* db = t.grad(b).data();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < out; ++c) db[c] += dz[r * out + c];
                       }
                       if (t.needs_grad(w)) {
                         detail::gemm_tn(t.value(x).data(), dz.data(), t.grad(w).data(), rows, in, out);
                       }
                       if (t.needs_grad(x)) {
                         detail::gemm_nt(dz.data(), t.value(w).data(), t.grad(x).data(), rows, out, in);
                       }
                     });
}

/// Element-wise activation.
inline Var activate(Tape& tape, Var x, Activation act) {
  Tensor y = tape.value(x);
  for (auto& v : y.values()) v = detail::apply(act, v);
  return tape.record(std::move(y), {x}, [x, act](Tape& t, const Tensor& yv, const Tensor& gy) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * detail::derivative_from_output(act, yv[i]);
  });
}

/// Element-wise sum of two equally shaped tensors (residual connection).
inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) +
                         " differ");
  }
  Tensor y = av;
  detail::add_into(y, bv);
  return tape.record(std::move(y), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& gy) {
    if (t.needs_grad(a)) detail::add_into(t.grad(a), gy);
    if (t.needs_grad(b)) detail::add_into(t.grad(b), gy);
  });
}

/// Single LSTM layer with gate order (input, forget, candidate, output).
/// x: [batch, T, in]; w_input: [in, 4c]; w_recurrent: [c, 4c]; bias: [4c].
/// Initial hidden and cell states are zero.
inline Var lstm(Tape& tape, Var x, Var w_input, Var w_recurrent, Var bias, bool return_sequences) {
  const Tensor& xv = tape.value(x);
  detail::require_rank3(xv, "lstm input");
  const Tensor& wx = tape.value(w_input);
  const Tensor& wh = tape.value(w_recurrent);
  if (wh.rank() != 2 || wh.dim(1) != 4 * wh.dim(0)) {
    throw DimensionError("lstm: recurrent weights must be [c, 4c], got " + shape_string(wh.shape()));
  }
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), in = xv.dim(2), cells = wh.dim(0);
  const std::size_t g4 = 4 * cells;
  detail::require_shape(wx, Shape{in, g4}, "lstm input weights");
  detail::require_shape(tape.value(bias), Shape{g4}, "lstm bias");

  // Cached activations per step: gates [T, B, 4c], cell state and tanh(cell)
  // [T+1, B, c] / [T, B, c], hidden [T+1, B, c]; index 0 of the +1 arrays is
  // the zero initial state.
  struct Cache {
    std::vector<double> gates, cell, cell_tanh, hidden;
  };
  auto cache = std::make_shared<Cache>();
  cache->gates.assign(steps * batch * g4, 0.0);
  cache->cell.assign((steps + 1) * batch * cells, 0.0);
  cache->cell_tanh.assign(steps * batch * cells, 0.0);
  cache->hidden.assign((steps + 1) * batch * cells, 0.0);

  // Input contribution for every step in one product: [B*T, 4c].
  std::vector<double> xw(batch * steps * g4);
  const double* bptr = tape.value(bias).data();
  for (std::size_t r = 0; r < batch * steps; ++r) std::copy_n(bptr, g4, xw.data() + r * g4);
  detail::gemm_nn(xv.data(), wx.data(), xw.data(), batch * steps, in, g4);

  for (std::size_t t = 0; t < steps; ++t) {
    double* gates = cache->gates.data() + t * batch * g4;
    for (std::size_t bi = 0; bi < batch; ++bi)
      std::copy_n(xw.data() + (bi * steps + t) * g4, g4, gates + bi * g4);
    detail::gemm_nn(cache->hidden.data() + t * batch * cells, wh.data(), gates, batch, cells, g4);
    const double* c_prev = cache->cell.data() + t * batch * cells;
    double* c_next = cache->cell.data() + (t + 1) * batch * cells;
    double* c_tanh = cache->cell_tanh.data() + t * batch * cells;
    double* h_next = cache->hidden.data() + (t + 1) * batch * cells;
    for (std::size_t bi = 0; bi < batch; ++bi) {
      double* g = gates + bi * g4;
      for (std::size_t j = 0; j < cells; ++j) {
        const double ig = detail::sigmoid(g[j]);
        const double fg = detail::sigmoid(g[cells + j]);
        const double cg = std::tanh(g[2 * cells + j]);
        const double og = detail::sigmoid(g[3 * cells + j]);
        g[j] = ig;
        g[cells + j] = fg;
        g[2 * cells + j] = cg;
        g[3 * cells + j] = og;
        const std::size_t k = bi * cells + j;
        c_next[k] = fg * c_prev[k] + ig * cg;
        c_tanh[k] = std::tanh(c_next[k]);
        h_next[k] = og * c_tanh[k];
      }
    }
  }

  Tensor y;
  if (return_sequences) {
    y = Tensor(Shape{batch, steps, cells});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t bi = 0; bi < batch; ++bi)
        std::copy_n(cache->hidden.data() + ((t + 1) * batch + bi) * cells, cells,
                    y.data() + (bi * steps + t) * cells);
  } else {
    y = Tensor(Shape{batch, cells});
    std::copy_n(cache->hidden.data() + steps * batch * cells, batch * cells, y.data());
  }

  return tape.record(
      std::move(y), {x, w_input, w_recurrent, bias},
      [=](Tape& tp, const Tensor&, const Tensor& gy) {
        const Tensor& wxv = tp.value(w_input);
        const Tensor& whv = tp.value(w_recurrent);
        std::vector<double> dh(batch * cells, 0.0), dc(batch * cells, 0.0);
        std::vector<double> dgates(batch * g4);
        std::vector<double> dgates_all(batch * steps * g4);  // row order (b, t) for the input product
        std::vector<double> dwh(cells * g4, 0.0);
        for (std::size_t t = steps; t-- > 0;) {
          if (return_sequences) {
            for (std::size_t bi = 0; bi < batch; ++bi)
              for (std::size_t j = 0; j < cells; ++j) dh[bi * cells + j] += gy[(bi * steps + t) * cells + j];
          } else if (t == steps - 1) {
            for (std::size_t k = 0; k < batch * cells; ++k) dh[k] += gy[k];
          }
          const double* gates = cache->gates.data() + t * batch * g4;
          const double* c_prev = cache->cell.data() + t * batch * cells;
          const double* c_tanh = cache->cell_tanh.data() + t * batch * cells;
          for (std::size_t bi = 0; bi < batch; ++bi) {
            const double* g = gates + bi * g4;
            double* dg = dgates.data() + bi * g4;
            for (std::size_t j = 0; j < cells; ++j) {
              const std::size_t k = bi * cells + j;
              const double ig = g[j], fg = g[cells + j], cg = g[2 * cells + j], og = g[3 * cells + j];
              const double ct = c_tanh[k];
              const double dcell = dc[k] + dh[k] * og * (1.0 - ct * ct);
              dg[j] = dcell * cg * ig * (1.0 - ig);
              dg[cells + j] = dcell * c_prev[k] * fg * (1.0 - fg);
              dg[2 * cells + j] = dcell * ig * (1.0 - cg * cg);
              dg[3 * cells + j] = dh[k] * ct * og * (1.0 - og);
              dc[k] = dcell * fg;
            }
            std::copy_n(dg, g4, dgates_all.data() + (bi * steps + t) * g4);
          }
          detail::gemm_tn(cache->hidden.data() + t * batch * cells, dgates.data(), dwh.data(), batch, cells, g4);
          std::fill(dh.begin(), dh.end(), 0.0);
          detail::gemm_nt(dgates.data(), whv.data(), dh.data(), batch, g4, cells);
        }
        if (tp.needs_grad(w_recurrent)) {
          double* d = tp.grad(w_recurrent).data();
          for (std::size_t i = 0; i < dwh.size(); ++i) d[i] += dwh[i];
        }
        if (tp.needs_grad(bias)) {
          double* db = tp.grad(bias).data();
          for (std::size_t r = 0; r < batch * steps; ++r)
            for (std::size_t c = 0; c < g4; ++c) db[c] += dgates_all[r * g4 + c];
        }
        if (tp.needs_grad(w_input)) {
          detail::gemm_tn(tp.value(x).data(), dgates_all.data(), tp.grad(w_input).data(), batch * steps, in, g4);
        }
        if (tp.needs_grad(x)) {
          detail::gemm_nt(dgates_all.data(), wxv.data(), tp.grad(x).data(), batch * steps, g4, in);
        }
      });
}

/// Scaled dot-product attention over `heads` slices of width `head_size`.
/// q: [batch, Tq, heads*head_size]; k, v: [batch, Tk, heads*head_size].
/// When `weights_out` is given it receives the softmax weights
/// [batch, heads, Tq, Tk].
inline Var attention(Tape& tape, Var q, Var k, Var v, std::size_t heads, std::size_t head_size,
                     Tensor* weights_out = nullptr) {
  const Tensor& qv = tape.value(q);
  const Tensor& kv = tape.value(k);
  const Tensor& vv = tape.value(v);
  detail::require_rank3(qv, "attention query");
  detail::require_rank3(kv, "attention key");
  if (heads == 0 || head_size == 0) throw ConfigError("attention: heads and head_size must be positive");
  const std::size_t batch = qv.dim(0), tq = qv.dim(1), tk = kv.dim(1), width = heads * head_size;
  if (qv.dim(2) != width || kv.dim(2) != width || kv.dim(0) != batch) {
    throw DimensionError("attention: query " + shape_string(qv.shape()) + " and key " +
                         shape_string(kv.shape()) + " do not match heads*head_size=" + std::to_string(width));
  }
  detail::require_shape(vv, kv.shape(), "attention value");
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_size));

  auto probs = std::make_shared<std::vector<double>>(batch * heads * tq * tk);
  Tensor y(Shape{batch, tq, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_size;
      for (std::size_t i = 0; i < tq; ++i) {
        double* p = probs->data() + ((b * heads + h) * tq + i) * tk;
        const double* qi = qv.data() + (b * tq + i) * width + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < tk; ++j) {
          const double* kj = kv.data() + (b * tk + j) * width + off;
          double s = 0.0;
          for (std::size_t d = 0; d < head_size; ++d) s += qi[d] * kj[d];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tk; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < tk; ++j) p[j] /= z;
        double* yi = y.data() + (b * tq + i) * width + off;
        for (std::size_t j = 0; j < tk; ++j) {
          const double* vj = vv.data() + (b * tk + j) * width + off;
          for (std::size_t d = 0; d < head_size; ++d) yi[d] += p[j] * vj[d];
        }
      }
    }
  }
  if (weights_out != nullptr) *weights_out = Tensor(Shape{batch, heads, tq, tk}, *probs);

  return tape.record(std::move(y), {q, k, v}, [=](Tape& t, const Tensor&, const Tensor& gy) {
    const Tensor& qv2 = t.value(q);
    const Tensor& kv2 = t.value(k);
    const Tensor& vv2 = t.value(v);
    const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
    double* dq = gq ? t.grad(q).data() : nullptr;
    double* dk = gk ? t.grad(k).data() : nullptr;
    double* dv = gv ? t.grad(v).data() : nullptr;
    std::vector<double> dp(tk), ds(tk);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * head_size;
        for (std::size_t i = 0; i < tq; ++i) {
          const double* p = probs->data() + ((b * heads + h) * tq + i) * tk;
          const double* gyi = gy.data() + (b * tq + i) * width + off;
          double dot = 0.0;
          for (std::size_t j = 0; j < tk; ++j) {
            const double* vj = vv2.data() + (b * tk + j) * width + off;
            double s = 0.0;
            for (std::size_t d = 0; d < head_size; ++d) s += gyi[d] * vj[d];
            dp[j] = s;
            dot += s * p[j];
            if (gv) {
              double* dvj = dv + (b * tk + j) * width + off;
              for (std::size_t d = 0; d < head_size; ++d) dvj[d] += p[j] * gyi[d];
            }
          }
          for (std::size_t j = 0; j < tk; ++j) ds[j] = p[j] * (dp[j] - dot) * scale;
          const double* qi = qv2.data() + (b * tq + i) * width + off;
          for (std::size_t j = 0; j < tk; ++j) {
            const double* kj = kv2.data() + (b * tk + j) * width + off;
            if (gq) {
              double* dqi = dq + (b * tq + i) * width + off;
              for (std::size_t d = 0; d < head_size; ++d) dqi[d] += ds[j] * kj[d];
            }
            if (gk) {
              double* dkj = dk + (b * tk + j) * width + off;
              for (std::size_t d = 0; d < head_size; ++d) dkj[d] += ds[j] * qi[d];
            }
          }
        }
      }
    }
  });
}

/// Normalizes every last-axis slice to zero mean and unit variance, then
/// applies gain and bias.
inline Var layer_norm(Tape& tape, Var x, Var gain, Var bias, double eps = kLayerNormEpsilon) {
  const Tensor& xv = tape.value(x);
  const std::size_t d = xv.shape().back();
  detail::require_shape(tape.value(gain), Shape{d}, "layer_norm gain");
  detail::require_shape(tape.value(bias), Shape{d}, "layer_norm bias");
  const std::size_t rows = leading_size(xv.shape());
  const double* g = tape.value(gain).data();
  const double* be = tape.value(bias).data();

  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * is;
      (*xhat)[r * d + j] = xh;
      y[r * d + j] = xh * g[j] + be[j];
    }
  }

  return tape.record(std::move(y), {x, gain, bias}, [=](Tape& t, const Tensor&, const Tensor& gy) {
    const double* gv = t.value(gain).data();
    if (t.needs_grad(gain) || t.needs_grad(bias)) {
      double* dg = t.grad(gain).data();
      double* db = t.grad(bias).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) {
          dg[j] += gy[r * d + j] * (*xhat)[r * d + j];
          db[j] += gy[r * d + j];
        }
    }
    if (!t.needs_grad(x)) return;
    double* dx = t.grad(x).data();
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = gy[r * d + j] * gv[j];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * (*xhat)[r * d + j];
      }
      mean_dxh *= inv_d;
      mean_dxh_xh *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxh = gy[r * d + j] * gv[j];
        dx[r * d + j] += (*inv_std)[r] * (dxh - mean_dxh - (*xhat)[r * d + j] * mean_dxh_xh);
      }
    }
  });
}

/// Batch normalization with batch statistics per channel over batch and
/// time. x: [..., ch]. The biased batch mean/variance are written to
/// `batch_mean` / `batch_var` so the caller can update running statistics.
inline Var batch_norm_train(Tape& tape, Var x, Var gain, Var bias, double eps, std::vector<double>* batch_mean,
                            std::vector<double>* batch_var) {
  const Tensor& xv = tape.value(x);
  const std::size_t ch = xv.shape().back();
  const std::size_t rows = leading_size(xv.shape());
  if (rows < 2) throw DimensionError("batch_norm: training needs at least two values per channel");
  detail::require_shape(tape.value(gain), Shape{ch}, "batch_norm gain");
  detail::require_shape(tape.value(bias), Shape{ch}, "batch_norm bias");
  const double* g = tape.value(gain).data();
  const double* be = tape.value(bias).data();

  std::vector<double> mean(ch, 0.0), var(ch, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) mean[c] += xv[r * ch + c];
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const double dlt = xv[r * ch + c] - mean[c];
      var[c] += dlt * dlt;
    }
  for (auto& v : var) v /= static_cast<double>(rows);

  auto inv_std = std::make_shared<std::vector<double>>(ch);
  for (std::size_t c = 0; c < ch; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c) {
      const double xh = (xv[r * ch + c] - mean[c]) * (*inv_std)[c];
      (*xhat)[r * ch + c] = xh;
      y[r * ch + c] = xh * g[c] + be[c];
    }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  return tape.record(std::move(y), {x, gain, bias}, [=](Tape& t, const Tensor&, const Tensor& gy) {
    const double* gv = t.value(gain).data();
    std::vector<double> sum_dxh(ch, 0.0), sum_dxh_xh(ch, 0.0);
    const bool want_params = t.needs_grad(gain) || t.needs_grad(bias);
    double* dg = want_params ? t.grad(gain).data() : nullptr;
    double* db = want_params ? t.grad(bias).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double gyv = gy[r * ch + c];
        const double xh = (*xhat)[r * ch + c];
        if (want_params) {
          dg[c] += gyv * xh;
          db[c] += gyv;
        }
        sum_dxh[c] += gyv * gv[c];
        sum_dxh_xh[c] += gyv * gv[c] * xh;
      }
    if (!t.needs_grad(x)) return;
    double* dx = t.grad(x).data();
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double dxh = gy[r * ch + c] * gv[c];
        dx[r * ch + c] += (*inv_std)[c] *
                          (dxh - sum_dxh[c] * inv_n - (*xhat)[r * ch + c] * sum_dxh_xh[c] * inv_n);
      }
  });
}

/// Batch normalization with fixed (running) statistics.
inline Var batch_norm_infer(Tape& tape, Var x, Var gain, Var bias, const Tensor& running_mean,
                            const Tensor& running_var, double eps) {
  const Tensor& xv = tape.value(x);
  const std::size_t ch = xv.shape().back();
  const std::size_t rows = leading_size(xv.shape());
  detail::require_shape(running_mean, Shape{ch}, "batch_norm running mean");
  detail::require_shape(running_var, Shape{ch}, "batch_norm running variance");
  auto inv_std = std::make_shared<std::vector<double>>(ch);
  for (std::size_t c = 0; c < ch; ++c) (*inv_std)[c] = 1.0 / std::sqrt(running_var[c] + eps);
  auto mean = std::make_shared<std::vector<double>>(running_mean.storage());
  const double* g = tape.value(gain).data();
  const double* be = tape.value(bias).data();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ch; ++c)
      y[r * ch + c] = (xv[r * ch + c] - (*mean)[c]) * (*inv_std)[c] * g[c] + be[c];

  return tape.record(std::move(y), {x, gain, bias}, [=](Tape& t, const Tensor&, const Tensor& gy) {
    const Tensor& xv2 = t.value(x);
    const double* gv = t.value(gain).data();
    const bool want_params = t.needs_grad(gain) || t.needs_grad(bias);
    double* dg = want_params ? t.grad(gain).data() : nullptr;
    double* db = want_params ? t.grad(bias).data() : nullptr;
    double* dx = t.needs_grad(x) ? t.grad(x).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < ch; ++c) {
        const double gyv = gy[r * ch + c];
        if (want_params) {
          dg[c] += gyv * (xv2[r * ch + c] - (*mean)[c]) * (*inv_std)[c];
          db[c] += gyv;
        }
        if (dx) dx[r * ch + c] += gyv * gv[c] * (*inv_std)[c];
      }
  });
}

/// One-dimensional cross-correlation along time with zero "same" padding.
/// x: [batch, T, in_ch]; kernels: [width, in_ch, out_ch]; bias: [out_ch].
inline Var conv1d_same(Tape& tape, Var x, Var kernels, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& kv = tape.value(kernels);
  detail::require_rank3(xv, "conv1d input");
  if (kv.rank() != 3 || kv.dim(1) != xv.dim(2)) {
    throw DimensionError("conv1d: input " + shape_string(xv.shape()) + " does not match kernels " +
                         shape_string(kv.shape()));
  }
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), in = xv.dim(2);
  const std::size_t width = kv.dim(0), out = kv.dim(2);
  if (width % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(width));
  if (width > steps) {
    throw ConfigError("conv1d: kernel width " + std::to_string(width) + " exceeds sequence length " +
                      std::to_string(steps));
  }
  detail::require_shape(tape.value(bias), Shape{out}, "conv1d bias");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(width / 2);

  Tensor y(Shape{batch, steps, out});
  const double* bptr = tape.value(bias).data();
  for (std::size_t r = 0; r < batch * steps; ++r) std::copy_n(bptr, out, y.data() + r * out);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      double* yt = y.data() + (b * steps + t) * out;
      for (std::size_t w = 0; w < width; ++w) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(w) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        detail::gemm_nn(xv.data() + (b * steps + static_cast<std::size_t>(src)) * in, kv.data() + w * in * out,
                        yt, 1, in, out);
      }
    }

  return tape.record(std::move(y), {x, kernels, bias}, [=](Tape& tp, const Tensor&, const Tensor& gy) {
    const Tensor& xv2 = tp.value(x);
    const Tensor& kv2 = tp.value(kernels);
    if (tp.needs_grad(bias)) {
      double* db = tp.grad(bias).data();
      for (std::size_t r = 0; r < batch * steps; ++r)
        for (std::size_t c = 0; c < out; ++c) db[c] += gy[r * out + c];
    }
    const bool gk = tp.needs_grad(kernels), gx = tp.needs_grad(x);
    double* dk = gk ? tp.grad(kernels).data() : nullptr;
    double* dx = gx ? tp.grad(x).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < steps; ++t) {
        const double* gyt = gy.data() + (b * steps + t) * out;
        for (std::size_t w = 0; w < width; ++w) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(w) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
          const std::size_t s = b * steps + static_cast<std::size_t>(src);
          if (gk) detail::gemm_tn(xv2.data() + s * in, gyt, dk + w * in * out, 1, in, out);
          if (gx) detail::gemm_nt(gyt, kv2.data() + w * in * out, dx + s * in, 1, out, in);
        }
      }
  });
}

/// Global average pooling over the time axis: [batch, T, ch] -> [batch, ch].
inline Var mean_over_time(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  detail::require_rank3(xv, "average pooling input");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), ch = xv.dim(2);
  Tensor y(Shape{batch, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t c = 0; c < ch; ++c) y[b * ch + c] += xv[(b * steps + t) * ch + c];
  const double inv = 1.0 / static_cast<double>(steps);
  for (auto& v : y.values()) v *= inv;
  return tape.record(std::move(y), {x}, [=](Tape& t, const Tensor&, const Tensor& gy) {
    double* dx = t.grad(x).data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t c = 0; c < ch; ++c) dx[(b * steps + s) * ch + c] += gy[b * ch + c] * inv;
  });
}

/// Inverted dropout: in training, each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate). Identity at inference.
inline Var dropout(Tape& tape, Var x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::infer || rate == 0.0) return x;
  const Tensor& xv = tape.value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    y[i] = xv[i] * (*mask)[i];
  }
  return tape.record(std::move(y), {x}, [x, mask](Tape& t, const Tensor&, const Tensor& gy) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

/// Mean squared error against a constant target; returns a scalar node.
inline Var mse_loss(Tape& tape, Var pred, const Tensor& target) {
  const Tensor& pv = tape.value(pred);
  if (pv.shape() != target.shape()) {
    throw DimensionError("mse_loss: prediction " + shape_string(pv.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - target[i];
    s += d * d;
  }
  const double n = static_cast<double>(pv.size());
  auto tgt = std::make_shared<Tensor>(target);
  return tape.record(Tensor::scalar(s / n), {pred}, [pred, tgt, n](Tape& t, const Tensor&, const Tensor& gy) {
    const Tensor& pv2 = t.value(pred);
    Tensor& gp = t.grad(pred);
    const double k = 2.0 * gy[0] / n;
    for (std::size_t i = 0; i < pv2.size(); ++i) gp[i] += k * (pv2[i] - (*tgt)[i]);
  });
}

/// sum_i x_i * weights_i as a scalar node; projects any tensor to a loss.
inline Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
  const Tensor& xv = tape.value(x);
  if (xv.size() != weights.size()) {
    throw DimensionError("weighted_sum: " + shape_string(xv.shape()) + " vs " + shape_string(weights.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  auto w = std::make_shared<Tensor>(weights);
  return tape.record(Tensor::scalar(s), {x}, [x, w](Tape& t, const Tensor&, const Tensor& gy) {
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[0] * (*w)[i];
  });
}

}  // namespace fedstlf::ops
