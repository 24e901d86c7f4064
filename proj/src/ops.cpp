#include "hvae/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace hvae::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(Tensor<T>& t, Eigen::Index rows, Eigen::Index cols, std::size_t offset = 0) {
  return MatMap<T>(t.data() + offset, rows, cols);
}
template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, Eigen::Index rows, Eigen::Index cols,
                      std::size_t offset = 0) {
  return ConstMatMap<T>(t.data() + offset, rows, cols);
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

void require_rank(const std::string& op, const Shape& s, int rank) {
  if (static_cast<int>(s.size()) != rank) {
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

void require_same(const std::string& op, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct ConvGeometry {
  int channels, height, width;  // spatial input of the im2col view
  int kh, kw, stride, pad;
  int out_h, out_w;             // positions of the sliding window

  int col_rows() const { return channels * kh * kw; }
  int col_cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* in, const ConvGeometry& geo, T* col) {
  const int hw = geo.col_cols();
  for (int c = 0; c < geo.channels; ++c) {
    for (int i = 0; i < geo.kh; ++i) {
      for (int j = 0; j < geo.kw; ++j) {
        T* dst = col + static_cast<std::size_t>((c * geo.kh + i) * geo.kw + j) * hw;
        for (int oy = 0; oy < geo.out_h; ++oy) {
          const int iy = oy * geo.stride - geo.pad + i;
          for (int ox = 0; ox < geo.out_w; ++ox) {
            const int ix = ox * geo.stride - geo.pad + j;
            const bool inside = iy >= 0 && iy < geo.height && ix >= 0 && ix < geo.width;
            dst[oy * geo.out_w + ox] =
                inside ? in[(static_cast<std::size_t>(c) * geo.height + iy) * geo.width + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& geo, T* out) {
  const int hw = geo.col_cols();
  for (int c = 0; c < geo.channels; ++c) {
    for (int i = 0; i < geo.kh; ++i) {
      for (int j = 0; j < geo.kw; ++j) {
        const T* src = col + static_cast<std::size_t>((c * geo.kh + i) * geo.kw + j) * hw;
        for (int oy = 0; oy < geo.out_h; ++oy) {
          const int iy = oy * geo.stride - geo.pad + i;
          if (iy < 0 || iy >= geo.height) continue;
          for (int ox = 0; ox < geo.out_w; ++ox) {
            const int ix = ox * geo.stride - geo.pad + j;
            if (ix < 0 || ix >= geo.width) continue;
            out[(static_cast<std::size_t>(c) * geo.height + iy) * geo.width + ix] +=
                src[oy * geo.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename D>
Var unary(Graph<T>& g, Var x, F&& f, D&& df) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return g.record(std::move(y), {x}, [x, df](Graph<T>& gr, const Tensor<T>& gy) {
    Tensor<T>* gx = gr.accumulator(x);
    if (!gx) return;
    const Tensor<T>& xv = gr.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += gy[i] * df(xv[i]);
  });
}

}  // namespace

template <typename T>
Var dense(Graph<T>& g, Var x, Var w, Var b) {
  const Shape& xs = g.shape(x);
  const Shape& ws = g.shape(w);
  const Shape& bs = g.shape(b);
  require_rank("dense", xs, 2);
  require_rank("dense", ws, 2);
  require_rank("dense", bs, 1);
  if (xs[1] != ws[0] || bs[0] != ws[1]) {
    shape_fail("dense", shape_str(xs) + " x " + shape_str(ws) + " + " + shape_str(bs));
  }
  const int n = xs[0], in = xs[1], out = ws[1];
  // Row by row with a fixed k order, so a row's output never depends on
  // which other rows share the batch (a blocked GEMM does not promise that).
  Tensor<T> y({n, out});
  {
    const T* xv = g.value(x).data();
    const T* wv = g.value(w).data();
    const T* bv = g.value(b).data();
    for (int i = 0; i < n; ++i) {
      T* yr = y.data() + static_cast<std::size_t>(i) * out;
      const T* xr = xv + static_cast<std::size_t>(i) * in;
      for (int k = 0; k < in; ++k) {
        const T a = xr[k];
        const T* wr = wv + static_cast<std::size_t>(k) * out;
        for (int j = 0; j < out; ++j) yr[j] += a * wr[j];
      }
      for (int j = 0; j < out; ++j) yr[j] += bv[j];
    }
  }
  return g.record(std::move(y), {x, w, b}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    const auto gym = as_mat(gy, n, out);
    if (Tensor<T>* gx = gr.accumulator(x)) {
      as_mat(*gx, n, in).noalias() += gym * as_mat(gr.value(w), in, out).transpose();
    }
    if (Tensor<T>* gw = gr.accumulator(w)) {
      as_mat(*gw, in, out).noalias() += as_mat(gr.value(x), n, in).transpose() * gym;
    }
    if (Tensor<T>* gb = gr.accumulator(b)) {
      as_mat(*gb, 1, out).row(0) += gym.colwise().sum();
    }
  });
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var k, int stride, int pad) {
  const Shape& xs = g.shape(x);
  const Shape& ks = g.shape(k);
  require_rank("conv2d", xs, 4);
  require_rank("conv2d", ks, 4);
  if (xs[1] != ks[1]) shape_fail("conv2d", "channels " + shape_str(xs) + " vs " + shape_str(ks));
  if (stride < 1 || pad < 0) shape_fail("conv2d", "invalid stride/pad");
  const int n = xs[0], co = ks[0];
  ConvGeometry geo{xs[1], xs[2], xs[3], ks[2], ks[3], stride, pad, 0, 0};
  geo.out_h = (geo.height + 2 * pad - geo.kh) / stride + 1;
  geo.out_w = (geo.width + 2 * pad - geo.kw) / stride + 1;
  if (geo.out_h < 1 || geo.out_w < 1) shape_fail("conv2d", "kernel larger than padded input");

  const std::size_t in_size = static_cast<std::size_t>(geo.channels) * geo.height * geo.width;
  const std::size_t out_size = static_cast<std::size_t>(co) * geo.col_cols();
  Tensor<T> y({n, co, geo.out_h, geo.out_w});
  {
    std::vector<T> col(static_cast<std::size_t>(geo.col_rows()) * geo.col_cols());
    const auto km = as_mat(g.value(k), co, geo.col_rows());
    for (int s = 0; s < n; ++s) {
      im2col(g.value(x).data() + s * in_size, geo, col.data());
      as_mat(y, co, geo.col_cols(), s * out_size).noalias() =
          km * ConstMatMap<T>(col.data(), geo.col_rows(), geo.col_cols());
    }
  }
  return g.record(std::move(y), {x, k}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    Tensor<T>* gx = gr.accumulator(x);
    Tensor<T>* gk = gr.accumulator(k);
    const auto km = as_mat(gr.value(k), co, geo.col_rows());
    std::vector<T> col(static_cast<std::size_t>(geo.col_rows()) * geo.col_cols());
    for (int s = 0; s < n; ++s) {
      const auto gys = as_mat(gy, co, geo.col_cols(), s * out_size);
      if (gk) {
        im2col(gr.value(x).data() + s * in_size, geo, col.data());
        as_mat(*gk, co, geo.col_rows()).noalias() +=
            gys * ConstMatMap<T>(col.data(), geo.col_rows(), geo.col_cols()).transpose();
      }
      if (gx) {
        MatMap<T>(col.data(), geo.col_rows(), geo.col_cols()).noalias() = km.transpose() * gys;
        col2im_add(col.data(), geo, gx->data() + s * in_size);
      }
    }
  });
}

template <typename T>
Var tconv2d(Graph<T>& g, Var x, Var k, int stride, int pad) {
  const Shape& xs = g.shape(x);
  const Shape& ks = g.shape(k);
  require_rank("tconv2d", xs, 4);
  require_rank("tconv2d", ks, 4);
  if (xs[1] != ks[0]) shape_fail("tconv2d", "channels " + shape_str(xs) + " vs " + shape_str(ks));
  if (stride < 1 || pad < 0) shape_fail("tconv2d", "invalid stride/pad");
  const int n = xs[0], ci = xs[1], h = xs[2], w = xs[3], co = ks[1];
  const int out_h = (h - 1) * stride - 2 * pad + ks[2];
  const int out_w = (w - 1) * stride - 2 * pad + ks[3];
  if (out_h < 1 || out_w < 1) shape_fail("tconv2d", "empty output");
  // The im2col view is of the *output*: conv2d over it reproduces x's grid.
  const ConvGeometry geo{co, out_h, out_w, ks[2], ks[3], stride, pad, h, w};
  if ((out_h + 2 * pad - geo.kh) / stride + 1 != h || (out_w + 2 * pad - geo.kw) / stride + 1 != w) {
    shape_fail("tconv2d", "inconsistent geometry");
  }
  const std::size_t in_size = static_cast<std::size_t>(ci) * h * w;
  const std::size_t out_size = static_cast<std::size_t>(co) * out_h * out_w;
  Tensor<T> y({n, co, out_h, out_w});
  {
    std::vector<T> col(static_cast<std::size_t>(geo.col_rows()) * geo.col_cols());
    const auto km = as_mat(g.value(k), ci, geo.col_rows());
    for (int s = 0; s < n; ++s) {
      MatMap<T>(col.data(), geo.col_rows(), geo.col_cols()).noalias() =
          km.transpose() * as_mat(g.value(x), ci, h * w, s * in_size);
      col2im_add(col.data(), geo, y.data() + s * out_size);
    }
  }
  return g.record(std::move(y), {x, k}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    Tensor<T>* gx = gr.accumulator(x);
    Tensor<T>* gk = gr.accumulator(k);
    const auto km = as_mat(gr.value(k), ci, geo.col_rows());
    std::vector<T> col(static_cast<std::size_t>(geo.col_rows()) * geo.col_cols());
    for (int s = 0; s < n; ++s) {
      im2col(gy.data() + s * out_size, geo, col.data());
      const ConstMatMap<T> colm(col.data(), geo.col_rows(), geo.col_cols());
      if (gx) as_mat(*gx, ci, h * w, s * in_size).noalias() += km * colm;
      if (gk) {
        as_mat(*gk, ci, geo.col_rows()).noalias() +=
            as_mat(gr.value(x), ci, h * w, s * in_size) * colm.transpose();
      }
    }
  });
}

template <typename T>
Var bias_channels(Graph<T>& g, Var x, Var b) {
  const Shape& xs = g.shape(x);
  const Shape& bs = g.shape(b);
  if (xs.size() < 2) shape_fail("bias_channels", "input needs [N, C, ...]");
  require_rank("bias_channels", bs, 1);
  if (bs[0] != xs[1]) shape_fail("bias_channels", shape_str(xs) + " vs " + shape_str(bs));
  const int n = xs[0], c = xs[1];
  const std::size_t inner = numel(xs) / (static_cast<std::size_t>(n) * c);
  Tensor<T> y = g.value(x);
  const Tensor<T>& bv = g.value(b);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) y[(static_cast<std::size_t>(s) * c + ch) * inner + i] += bv[ch];
  return g.record(std::move(y), {x, b}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
    }
    if (Tensor<T>* gb = gr.accumulator(b)) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int s = 0; s < n; ++s)
          for (std::size_t i = 0; i < inner; ++i) acc += gy[(static_cast<std::size_t>(s) * c + ch) * inner + i];
        (*gb)[ch] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var channel_affine(Graph<T>& g, Var x, Var gamma, Var beta) {
  const Shape& xs = g.shape(x);
  if (xs.size() < 2) shape_fail("channel_affine", "input needs [N, C, ...]");
  require_rank("channel_affine", g.shape(gamma), 1);
  require_same("channel_affine", g.shape(gamma), g.shape(beta));
  if (g.shape(gamma)[0] != xs[1]) shape_fail("channel_affine", "channel count mismatch");
  const int n = xs[0], c = xs[1];
  const std::size_t inner = numel(xs) / (static_cast<std::size_t>(n) * c);
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  Tensor<T> y(xs);
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(s) * c + ch) * inner + i;
        y[idx] = gv[ch] * xv[idx] + bv[ch];
      }
  return g.record(std::move(y), {x, gamma, beta}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    const Tensor<T>& xv = gr.value(x);
    const Tensor<T>& gv = gr.value(gamma);
    Tensor<T>* gx = gr.accumulator(x);
    Tensor<T>* gg = gr.accumulator(gamma);
    Tensor<T>* gb = gr.accumulator(beta);
    for (int ch = 0; ch < c; ++ch) {
      double acc_g = 0, acc_b = 0;
      for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(s) * c + ch) * inner + i;
          if (gx) (*gx)[idx] += gv[ch] * gy[idx];
          acc_g += static_cast<double>(gy[idx]) * xv[idx];
          acc_b += gy[idx];
        }
      if (gg) (*gg)[ch] += static_cast<T>(acc_g);
      if (gb) (*gb)[ch] += static_cast<T>(acc_b);
    }
  });
}

template <typename T>
Var temporal_conv(Graph<T>& g, Var x, Var k) {
  const Shape& xs = g.shape(x);
  const Shape& ks = g.shape(k);
  require_rank("temporal_conv", xs, 3);
  require_rank("temporal_conv", ks, 2);
  if (xs[1] < 1) shape_fail("temporal_conv", "empty sequence");
  if (ks[1] != xs[2] || ks[0] < 1) shape_fail("temporal_conv", shape_str(xs) + " vs " + shape_str(ks));
  const int n = xs[0], len = xs[1], f = xs[2], width = ks[0];
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& kv = g.value(k);
  auto at = [=](int s, int t, int c) { return (static_cast<std::size_t>(s) * len + t) * f + c; };
  Tensor<T> y(xs);
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < len; ++t)
      for (int c = 0; c < f; ++c) {
        T acc = 0;
        for (int j = 0; j < width; ++j) acc += kv[static_cast<std::size_t>(j) * f + c] * xv[at(s, std::max(t - j, 0), c)];
        y[at(s, t, c)] = acc;
      }
  return g.record(std::move(y), {x, k}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    const Tensor<T>& xv = gr.value(x);
    const Tensor<T>& kv = gr.value(k);
    Tensor<T>* gx = gr.accumulator(x);
    Tensor<T>* gk = gr.accumulator(k);
    for (int s = 0; s < n; ++s)
      for (int t = 0; t < len; ++t)
        for (int c = 0; c < f; ++c) {
          const T go = gy[at(s, t, c)];
          for (int j = 0; j < width; ++j) {
            const std::size_t src = at(s, std::max(t - j, 0), c);
            if (gx) (*gx)[src] += kv[static_cast<std::size_t>(j) * f + c] * go;
            if (gk) (*gk)[static_cast<std::size_t>(j) * f + c] += xv[src] * go;
          }
        }
  });
}

template <typename T>
Var leaky_relu(Graph<T>& g, Var x, T slope) {
  return unary(
      g, x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var tanh_act(Graph<T>& g, Var x) {
  return unary(
      g, x, [](T v) { return std::tanh(v); },
      [](T v) {
        const T t = std::tanh(v);
        return T(1) - t * t;
      });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  auto sig = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
  return unary(g, x, sig, [sig](T v) {
    const T s = sig(v);
    return s * (T(1) - s);
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same("add", g.shape(a), g.shape(b));
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& gy) {
    for (const Var v : {a, b})
      if (Tensor<T>* gv = gr.accumulator(v))
        for (std::size_t i = 0; i < gy.size(); ++i) (*gv)[i] += gy[i];
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  require_same("sub", g.shape(a), g.shape(b));
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* ga = gr.accumulator(a))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i];
    if (Tensor<T>* gb = gr.accumulator(b))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] -= gy[i];
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same("mul", g.shape(a), g.shape(b));
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& gy) {
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    if (Tensor<T>* ga = gr.accumulator(a))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * bv[i];
    if (Tensor<T>* gb = gr.accumulator(b))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * av[i];
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> y = g.value(a);
  for (auto& v : y.values()) v *= factor;
  return g.record(std::move(y), {a}, [a, factor](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* ga = gr.accumulator(a))
      for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += factor * gy[i];
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> y = g.value(x).reshaped(std::move(shape));
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
  });
}

template <typename T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) shape_fail("concat_cols", "no inputs");
  const int rows = g.shape(parts[0])[0];
  std::vector<int> widths;
  int total = 0;
  for (const Var p : parts) {
    require_rank("concat_cols", g.shape(p), 2);
    if (g.shape(p)[0] != rows) shape_fail("concat_cols", "row count mismatch");
    widths.push_back(g.shape(p)[1]);
    total += widths.back();
  }
  Tensor<T> y({rows, total});
  int offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor<T>& pv = g.value(parts[i]);
    for (int r = 0; r < rows; ++r)
      std::copy_n(pv.data() + static_cast<std::size_t>(r) * widths[i], widths[i],
                  y.data() + static_cast<std::size_t>(r) * total + offset);
    offset += widths[i];
  }
  return g.record(std::move(y), parts, [=](Graph<T>& gr, const Tensor<T>& gy) {
    int off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (Tensor<T>* gp = gr.accumulator(parts[i])) {
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < widths[i]; ++c)
            (*gp)[static_cast<std::size_t>(r) * widths[i] + c] += gy[static_cast<std::size_t>(r) * total + off + c];
      }
      off += widths[i];
    }
  });
}

template <typename T>
Var slice_cols(Graph<T>& g, Var x, int begin, int end) {
  const Shape& xs = g.shape(x);
  require_rank("slice_cols", xs, 2);
  if (begin < 0 || end > xs[1] || begin >= end) shape_fail("slice_cols", "invalid column range");
  const int rows = xs[0], cols = xs[1], width = end - begin;
  Tensor<T> y({rows, width});
  const Tensor<T>& xv = g.value(x);
  for (int r = 0; r < rows; ++r)
    std::copy_n(xv.data() + static_cast<std::size_t>(r) * cols + begin, width,
                y.data() + static_cast<std::size_t>(r) * width);
  return g.record(std::move(y), {x}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x))
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < width; ++c)
          (*gx)[static_cast<std::size_t>(r) * cols + begin + c] += gy[static_cast<std::size_t>(r) * width + c];
  });
}

template <typename T>
Var gather_rows(Graph<T>& g, Var x, const std::vector<int>& index) {
  const Shape& xs = g.shape(x);
  if (xs.empty()) shape_fail("gather_rows", "scalar input");
  const std::size_t row = numel(xs) / static_cast<std::size_t>(xs[0]);
  for (const int i : index)
    if (i < 0 || i >= xs[0]) throw IndexError("gather_rows: row " + std::to_string(i) + " out of range");
  Shape ys = xs;
  ys[0] = static_cast<int>(index.size());
  Tensor<T> y(ys);
  const Tensor<T>& xv = g.value(x);
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(xv.data() + index[r] * row, row, y.data() + r * row);
  return g.record(std::move(y), {x}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x))
      for (std::size_t r = 0; r < index.size(); ++r)
        for (std::size_t c = 0; c < row; ++c) (*gx)[index[r] * row + c] += gy[r * row + c];
  });
}

template <typename T>
Var place_blocks(Graph<T>& g, int rows, int cols, const std::vector<Placement>& blocks) {
  std::vector<char> used(static_cast<std::size_t>(rows) * cols, 0);
  std::vector<Var> inputs;
  Tensor<T> y({rows, cols});
  for (const auto& b : blocks) {
    const Shape& ps = g.shape(b.part);
    require_rank("place_blocks", ps, 2);
    if (static_cast<int>(b.rows.size()) != ps[0]) shape_fail("place_blocks", "row map length mismatch");
    if (b.col_offset < 0 || b.col_offset + ps[1] > cols) shape_fail("place_blocks", "block exceeds columns");
    const Tensor<T>& pv = g.value(b.part);
    for (int r = 0; r < ps[0]; ++r) {
      const int dst = b.rows[static_cast<std::size_t>(r)];
      if (dst < 0 || dst >= rows) throw IndexError("place_blocks: destination row out of range");
      for (int c = 0; c < ps[1]; ++c) {
        const std::size_t idx = static_cast<std::size_t>(dst) * cols + b.col_offset + c;
        if (used[idx]) shape_fail("place_blocks", "blocks overlap");
        used[idx] = 1;
        y[idx] = pv[static_cast<std::size_t>(r) * ps[1] + c];
      }
    }
    inputs.push_back(b.part);
  }
  return g.record(std::move(y), inputs, [=](Graph<T>& gr, const Tensor<T>& gy) {
    for (const auto& b : blocks) {
      Tensor<T>* gp = gr.accumulator(b.part);
      if (!gp) continue;
      const int width = gr.shape(b.part)[1];
      for (std::size_t r = 0; r < b.rows.size(); ++r)
        for (int c = 0; c < width; ++c)
          (*gp)[r * width + c] += gy[static_cast<std::size_t>(b.rows[r]) * cols + b.col_offset + c];
    }
  });
}

template <typename T>
Var mean_groups(Graph<T>& g, Var x, int group) {
  const Shape& xs = g.shape(x);
  require_rank("mean_groups", xs, 2);
  if (group < 1 || xs[0] % group != 0) shape_fail("mean_groups", "rows not divisible by group");
  const int n = xs[0] / group, f = xs[1];
  Tensor<T> y({n, f});
  const Tensor<T>& xv = g.value(x);
  const T inv = T(1) / static_cast<T>(group);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < f; ++c) {
      T acc = 0;
      for (int r = 0; r < group; ++r) acc += xv[static_cast<std::size_t>(s * group + r) * f + c];
      y[static_cast<std::size_t>(s) * f + c] = acc * inv;
    }
  return g.record(std::move(y), {x}, [=](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x))
      for (int s = 0; s < n; ++s)
        for (int r = 0; r < group; ++r)
          for (int c = 0; c < f; ++c)
            (*gx)[static_cast<std::size_t>(s * group + r) * f + c] += gy[static_cast<std::size_t>(s) * f + c] * inv;
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  double acc = 0;
  for (const T v : g.value(x).values()) acc += v;
  return g.record(Tensor<T>({1}, static_cast<T>(acc)), {x}, [x](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gx = gr.accumulator(x))
      for (auto& v : gx->values()) v += gy[0];
  });
}

template <typename T>
Var half_squared_error(Graph<T>& g, Var a, Var b) {
  require_same("half_squared_error", g.shape(a), g.shape(b));
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  return g.record(Tensor<T>({1}, static_cast<T>(0.5 * acc)), {a, b},
                  [a, b](Graph<T>& gr, const Tensor<T>& gy) {
                    const Tensor<T>& av = gr.value(a);
                    const Tensor<T>& bv = gr.value(b);
                    Tensor<T>* ga = gr.accumulator(a);
                    Tensor<T>* gb = gr.accumulator(b);
                    for (std::size_t i = 0; i < av.size(); ++i) {
                      const T d = (av[i] - bv[i]) * gy[0];
                      if (ga) (*ga)[i] += d;
                      if (gb) (*gb)[i] -= d;
                    }
                  });
}

template <typename T>
Var reparam_sample(Graph<T>& g, const GaussianPosterior& post, const Tensor<T>& eps) {
  const Shape& ms = g.shape(post.mu);
  require_same("reparam_sample", ms, g.shape(post.log_sigma));
  require_same("reparam_sample", ms, eps.shape());
  const Tensor<T>& mv = g.value(post.mu);
  const Tensor<T>& lv = g.value(post.log_sigma);
  Tensor<T> y(ms);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mv[i] + std::exp(lv[i]) * eps[i];
  const Var mu = post.mu, ls = post.log_sigma;
  return g.record(std::move(y), {mu, ls}, [mu, ls, eps](Graph<T>& gr, const Tensor<T>& gy) {
    if (Tensor<T>* gm = gr.accumulator(mu))
      for (std::size_t i = 0; i < gy.size(); ++i) (*gm)[i] += gy[i];
    if (Tensor<T>* gl = gr.accumulator(ls)) {
      const Tensor<T>& lv = gr.value(ls);
      for (std::size_t i = 0; i < gy.size(); ++i) (*gl)[i] += gy[i] * std::exp(lv[i]) * eps[i];
    }
  });
}

template <typename T>
Var kl_std_normal(Graph<T>& g, const GaussianPosterior& post) {
  require_same("kl_std_normal", g.shape(post.mu), g.shape(post.log_sigma));
  const Tensor<T>& mv = g.value(post.mu);
  const Tensor<T>& lv = g.value(post.log_sigma);
  double acc = 0;
  for (std::size_t i = 0; i < mv.size(); ++i) {
    const double m = mv[i], l = lv[i];
    acc += 0.5 * (m * m + std::exp(2.0 * l) - 1.0 - 2.0 * l);
  }
  const Var mu = post.mu, ls = post.log_sigma;
  return g.record(Tensor<T>({1}, static_cast<T>(acc)), {mu, ls},
                  [mu, ls](Graph<T>& gr, const Tensor<T>& gy) {
                    const Tensor<T>& mv = gr.value(mu);
                    const Tensor<T>& lv = gr.value(ls);
                    if (Tensor<T>* gm = gr.accumulator(mu))
                      for (std::size_t i = 0; i < mv.size(); ++i) (*gm)[i] += gy[0] * mv[i];
                    if (Tensor<T>* gl = gr.accumulator(ls))
                      for (std::size_t i = 0; i < lv.size(); ++i)
                        (*gl)[i] += gy[0] * (std::exp(T(2) * lv[i]) - T(1));
                  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank("softmax_rows", logits.shape(), 2);
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (int r = 0; r < n; ++r) {
    const T* row = logits.data() + static_cast<std::size_t>(r) * k;
    const T mx = *std::max_element(row, row + k);
    double total = 0;
    for (int c = 0; c < k; ++c) total += std::exp(static_cast<double>(row[c] - mx));
    for (int c = 0; c < k; ++c)
      p[static_cast<std::size_t>(r) * k + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / total);
  }
  return p;
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, const std::vector<int>& labels) {
  const Shape& ls = g.shape(logits);
  require_rank("softmax_cross_entropy", ls, 2);
  if (static_cast<int>(labels.size()) != ls[0]) shape_fail("softmax_cross_entropy", "label count mismatch");
  const int n = ls[0], k = ls[1];
  for (const int l : labels)
    if (l < 0 || l >= k) throw LabelError("softmax_cross_entropy: label out of range");
  Tensor<T> p = softmax_rows(g.value(logits));
  double acc = 0;
  for (int r = 0; r < n; ++r) acc -= std::log(std::max<double>(p[static_cast<std::size_t>(r) * k + labels[r]], 1e-300));
  return g.record(Tensor<T>({1}, static_cast<T>(acc / n)), {logits},
                  [=](Graph<T>& gr, const Tensor<T>& gy) {
                    Tensor<T>* gl = gr.accumulator(logits);
                    if (!gl) return;
                    const T w = gy[0] / static_cast<T>(n);
                    for (int r = 0; r < n; ++r)
                      for (int c = 0; c < k; ++c) {
                        const std::size_t idx = static_cast<std::size_t>(r) * k + c;
                        (*gl)[idx] += w * (p[idx] - (c == labels[r] ? T(1) : T(0)));
                      }
                  });
}

#define HVAE_INSTANTIATE_OPS(T)                                                          \
  template Var dense<T>(Graph<T>&, Var, Var, Var);                                       \
  template Var conv2d<T>(Graph<T>&, Var, Var, int, int);                                 \
  template Var tconv2d<T>(Graph<T>&, Var, Var, int, int);                                \
  template Var bias_channels<T>(Graph<T>&, Var, Var);                                    \
  template Var channel_affine<T>(Graph<T>&, Var, Var, Var);                              \
  template Var temporal_conv<T>(Graph<T>&, Var, Var);                                    \
  template Var leaky_relu<T>(Graph<T>&, Var, T);                                         \
  template Var tanh_act<T>(Graph<T>&, Var);                                              \
  template Var sigmoid<T>(Graph<T>&, Var);                                               \
  template Var add<T>(Graph<T>&, Var, Var);                                              \
  template Var sub<T>(Graph<T>&, Var, Var);                                              \
  template Var mul<T>(Graph<T>&, Var, Var);                                              \
  template Var scale<T>(Graph<T>&, Var, T);                                              \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                        \
  template Var concat_cols<T>(Graph<T>&, const std::vector<Var>&);                       \
  template Var slice_cols<T>(Graph<T>&, Var, int, int);                                  \
  template Var gather_rows<T>(Graph<T>&, Var, const std::vector<int>&);                  \
  template Var place_blocks<T>(Graph<T>&, int, int, const std::vector<Placement>&);      \
  template Var mean_groups<T>(Graph<T>&, Var, int);                                      \
  template Var sum<T>(Graph<T>&, Var);                                                   \
  template Var half_squared_error<T>(Graph<T>&, Var, Var);                               \
  template Var reparam_sample<T>(Graph<T>&, const GaussianPosterior&, const Tensor<T>&); \
  template Var kl_std_normal<T>(Graph<T>&, const GaussianPosterior&);                    \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, const std::vector<int>&);        \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);

HVAE_INSTANTIATE_OPS(float)
HVAE_INSTANTIATE_OPS(double)

}  // namespace hvae::nn
