#include "ganet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace ganet::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  GANET_CHECK(same_shape(a.shape(), b.shape()), ShapeError, op, ": shape mismatch ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

void check_nchw(const Tensor& x, const char* op) {
  GANET_CHECK(x.ndim() == 4, ShapeError, op, ": expected NCHW tensor, got ",
              shape_str(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::attach_node(out, "add", {a, b}, [a, b](const TensorImpl& o) mutable {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    if (a.requires_grad()) {
      double* ga = a.mutable_grad().data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      double* gb = b.mutable_grad().data();
      for (std::int64_t i = 0; i < n; ++i) gb[i] += o.grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  detail::attach_node(out, "sub", {a, b}, [a, b](const TensorImpl& o) mutable {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    if (a.requires_grad()) {
      double* ga = a.mutable_grad().data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      double* gb = b.mutable_grad().data();
      for (std::int64_t i = 0; i < n; ++i) gb[i] -= o.grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::attach_node(out, "mul", {a, b}, [a, b](const TensorImpl& o) mutable {
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    if (a.requires_grad()) {
      double* ga = a.mutable_grad().data();
      const double* pb = b.data();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += o.grad[i] * pb[i];
    }
    if (b.requires_grad()) {
      double* gb = b.mutable_grad().data();
      const double* pa = a.data();
      for (std::int64_t i = 0; i < n; ++i) gb[i] += o.grad[i] * pa[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * s;
  detail::attach_node(out, "scale", {x}, [x, s](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < n; ++i) gx[i] += o.grad[i] * s;
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  detail::attach_node(out, "relu", {x}, [x](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    const double* px = x.data();
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < n; ++i)
      if (px[i] > 0.0) gx[i] += o.grad[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
  detail::attach_node(out, "sigmoid", {x}, [x](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const double y = o.data[i];
      gx[i] += o.grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  const double* px = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(acc);
  detail::attach_node(out, "sum_all", {x}, [x](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    const double g = o.grad[0];
    double* gx = x.mutable_grad().data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  GANET_CHECK(x.numel() > 0, ShapeError, "mean_all on empty tensor");
  double acc = 0.0;
  const double* px = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  detail::attach_node(out, "mean_all", {x}, [x](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    const double g = o.grad[0] / static_cast<double>(x.numel());
    double* gx = x.mutable_grad().data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

Tensor mean_channels(const Tensor& x) {
  check_nchw(x, "mean_channels");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, 1, x.dim(2), x.dim(3)});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < hw; ++i) po[b * hw + i] += px[(b * c + ch) * hw + i];
  const double inv_c = 1.0 / static_cast<double>(c);
  for (std::int64_t i = 0; i < n * hw; ++i) po[i] *= inv_c;
  detail::attach_node(out, "mean_channels", {x}, [x, n, c, hw, inv_c](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t i = 0; i < hw; ++i)
          gx[(b * c + ch) * hw + i] += o.grad[b * hw + i] * inv_c;
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  GANET_CHECK(shape_numel(shape) == x.numel(), ShapeError, "reshape: numel mismatch ",
              shape_str(x.shape()), " -> ", shape_str(shape));
  Tensor out(std::move(shape), x.vec());
  detail::attach_node(out, "reshape", {x}, [x](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    const std::int64_t n = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < n; ++i) gx[i] += o.grad[i];
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  GANET_CHECK(!xs.empty(), ShapeError, "concat_channels: empty input list");
  check_nchw(xs[0], "concat_channels");
  const std::int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::int64_t c_total = 0;
  for (const auto& x : xs) {
    check_nchw(x, "concat_channels");
    GANET_CHECK(x.dim(0) == n && x.dim(2) == h && x.dim(3) == w, ShapeError,
                "concat_channels: incompatible shape ", shape_str(x.shape()));
    c_total += x.dim(1);
  }
  Tensor out({n, c_total, h, w});
  const std::int64_t hw = h * w;
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b) {
    std::int64_t c_off = 0;
    for (const auto& x : xs) {
      const std::int64_t c = x.dim(1);
      std::memcpy(po + (b * c_total + c_off) * hw, x.data() + b * c * hw,
                  static_cast<std::size_t>(c * hw) * sizeof(double));
      c_off += c;
    }
  }
  std::vector<Tensor> inputs = xs;
  detail::attach_node(out, "concat_channels", inputs,
                      [inputs, n, c_total, hw](const TensorImpl& o) mutable {
                        for (std::int64_t b = 0; b < n; ++b) {
                          std::int64_t c_off = 0;
                          for (auto& x : inputs) {
                            const std::int64_t c = x.dim(1);
                            if (x.requires_grad()) {
                              double* gx = x.mutable_grad().data();
                              const double* go = o.grad.data() + (b * c_total + c_off) * hw;
                              for (std::int64_t i = 0; i < c * hw; ++i)
                                gx[b * c * hw + i] += go[i];
                            }
                            c_off += c;
                          }
                        }
                      });
  return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end) {
  check_nchw(x, "slice_channels");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  GANET_CHECK(begin >= 0 && begin < end && end <= c, ShapeError, "slice_channels: range [",
              begin, ", ", end, ") invalid for C=", c);
  const std::int64_t cs = end - begin, hw = h * w;
  Tensor out({n, cs, h, w});
  double* po = out.data();
  const double* px = x.data();
  for (std::int64_t b = 0; b < n; ++b)
    std::memcpy(po + b * cs * hw, px + (b * c + begin) * hw,
                static_cast<std::size_t>(cs * hw) * sizeof(double));
  detail::attach_node(out, "slice_channels", {x},
                      [x, begin, cs, c, hw, n](const TensorImpl& o) mutable {
                        if (!x.requires_grad()) return;
                        double* gx = x.mutable_grad().data();
                        for (std::int64_t b = 0; b < n; ++b) {
                          const double* go = o.grad.data() + b * cs * hw;
                          for (std::int64_t i = 0; i < cs * hw; ++i)
                            gx[(b * c + begin) * hw + i] += go[i];
                        }
                      });
  return out;
}

Tensor nchw_to_nlc(const Tensor& x) {
  check_nchw(x, "nchw_to_nlc");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, hw, c});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t l = 0; l < hw; ++l)
        po[(b * hw + l) * c + ch] = px[(b * c + ch) * hw + l];
  detail::attach_node(out, "nchw_to_nlc", {x}, [x, n, c, hw](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t l = 0; l < hw; ++l)
          gx[(b * c + ch) * hw + l] += o.grad[(b * hw + l) * c + ch];
  });
  return out;
}

Tensor nlc_to_nchw(const Tensor& x, std::int64_t h, std::int64_t w) {
  GANET_CHECK(x.ndim() == 3, ShapeError, "nlc_to_nchw: expected [N,L,C], got ",
              shape_str(x.shape()));
  const std::int64_t n = x.dim(0), l = x.dim(1), c = x.dim(2);
  GANET_CHECK(l == h * w, ShapeError, "nlc_to_nchw: L=", l, " != h*w=", h * w);
  Tensor out({n, c, h, w});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t pos = 0; pos < l; ++pos)
      for (std::int64_t ch = 0; ch < c; ++ch)
        po[(b * c + ch) * l + pos] = px[(b * l + pos) * c + ch];
  detail::attach_node(out, "nlc_to_nchw", {x}, [x, n, l, c](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t pos = 0; pos < l; ++pos)
        for (std::int64_t ch = 0; ch < c; ++ch)
          gx[(b * l + pos) * c + ch] += o.grad[(b * c + ch) * l + pos];
  });
  return out;
}

namespace {
void check_bmm(const Tensor& a, const Tensor& b, const char* op) {
  GANET_CHECK(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0), ShapeError, op,
              ": expected matching batched matrices, got ", shape_str(a.shape()), " and ",
              shape_str(b.shape()));
}
}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) {
  check_bmm(a, b, "bmm");
  const std::int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  GANET_CHECK(b.dim(1) == k, ShapeError, "bmm: inner dims ", k, " vs ", b.dim(1));
  Tensor out({bs, m, n});
  for (std::int64_t i = 0; i < bs; ++i) {
    CMapRM ma(a.data() + i * m * k, m, k);
    CMapRM mb(b.data() + i * k * n, k, n);
    MapRM mo(out.data() + i * m * n, m, n);
    mo.noalias() = ma * mb;
  }
  detail::attach_node(out, "bmm", {a, b}, [a, b, bs, m, k, n](const TensorImpl& o) mutable {
    for (std::int64_t i = 0; i < bs; ++i) {
      CMapRM go(o.grad.data() + i * m * n, m, n);
      if (a.requires_grad()) {
        CMapRM mb(b.data() + i * k * n, k, n);
        MapRM ga(a.mutable_grad().data() + i * m * k, m, k);
        ga.noalias() += go * mb.transpose();
      }
      if (b.requires_grad()) {
        CMapRM ma(a.data() + i * m * k, m, k);
        MapRM gb(b.mutable_grad().data() + i * k * n, k, n);
        gb.noalias() += ma.transpose() * go;
      }
    }
  });
  return out;
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  check_bmm(a, b, "bmm_nt");
  const std::int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  GANET_CHECK(b.dim(2) == k, ShapeError, "bmm_nt: inner dims ", k, " vs ", b.dim(2));
  Tensor out({bs, m, n});
  for (std::int64_t i = 0; i < bs; ++i) {
    CMapRM ma(a.data() + i * m * k, m, k);
    CMapRM mb(b.data() + i * n * k, n, k);
    MapRM mo(out.data() + i * m * n, m, n);
    mo.noalias() = ma * mb.transpose();
  }
  detail::attach_node(out, "bmm_nt", {a, b}, [a, b, bs, m, k, n](const TensorImpl& o) mutable {
    for (std::int64_t i = 0; i < bs; ++i) {
      CMapRM go(o.grad.data() + i * m * n, m, n);
      if (a.requires_grad()) {
        CMapRM mb(b.data() + i * n * k, n, k);
        MapRM ga(a.mutable_grad().data() + i * m * k, m, k);
        ga.noalias() += go * mb;
      }
      if (b.requires_grad()) {
        CMapRM ma(a.data() + i * m * k, m, k);
        MapRM gb(b.mutable_grad().data() + i * n * k, n, k);
        gb.noalias() += go.transpose() * ma;
      }
    }
  });
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  GANET_CHECK(x.ndim() >= 1, ShapeError, "softmax_lastdim on 0-d tensor");
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double* orow = po + r * d;
    double mx = row[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  detail::attach_node(out, "softmax_lastdim", {x}, [x, rows, d](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * d;
      const double* gy = o.grad.data() + r * d;
      double dot = 0.0;
      for (std::int64_t j = 0; j < d; ++j) dot += gy[j] * y[j];
      for (std::int64_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (gy[j] - dot);
    }
  });
  return out;
}

namespace {

struct ConvGeom {
  std::int64_t n, ci, h, w, co, kh, kw;
  int stride, pad, dil;
  std::int64_t ho, wo;
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& weight, int stride, int padding,
                       int dilation) {
  ConvGeom g;
  g.n = x.dim(0);
  g.ci = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.co = weight.dim(0);
  GANET_CHECK(weight.dim(1) == g.ci, ShapeError, "conv2d: weight expects ", weight.dim(1),
              " input channels, tensor has ", g.ci);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.dil = dilation;
  const std::int64_t ekh = static_cast<std::int64_t>(dilation) * (g.kh - 1) + 1;
  const std::int64_t ekw = static_cast<std::int64_t>(dilation) * (g.kw - 1) + 1;
  g.ho = (g.h + 2 * padding - ekh) / stride + 1;
  g.wo = (g.w + 2 * padding - ekw) / stride + 1;
  GANET_CHECK(g.ho >= 1 && g.wo >= 1, ShapeError, "conv2d: output would be empty for input ",
              shape_str(x.shape()), " kernel ", g.kh, "x", g.kw, " stride ", stride, " pad ",
              padding, " dilation ", dilation);
  return g;
}

// Unpacks one sample into a (Ci*kh*kw) x (Ho*Wo) row-major column matrix.
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::int64_t out_area = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        double* dst = cols + ((c * g.kh + ky) * g.kw + kx) * out_area;
        const std::int64_t iy0 = ky * g.dil - g.pad;
        const std::int64_t ix0 = kx * g.dil - g.pad;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = iy0 + oy * g.stride;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            dst += g.wo;
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ix0 + ox * g.stride;
            *dst++ = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Transpose of im2col: accumulates column-matrix gradients back into dx.
void col2im_accumulate(const double* cols, const ConvGeom& g, double* dx) {
  const std::int64_t out_area = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.ci; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const double* src = cols + ((c * g.kh + ky) * g.kw + kx) * out_area;
        const std::int64_t iy0 = ky * g.dil - g.pad;
        const std::int64_t ix0 = kx * g.dil - g.pad;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = iy0 + oy * g.stride;
          if (iy >= 0 && iy < g.h) {
            double* dst = dx + (c * g.h + iy) * g.w;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ix0 + ox * g.stride;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
          src += g.wo;
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int dilation) {
  check_nchw(x, "conv2d");
  GANET_CHECK(weight.ndim() == 4, ShapeError, "conv2d: weight must be [Co,Ci,kh,kw]");
  const ConvGeom g = conv_geometry(x, weight, stride, padding, dilation);
  if (bias.defined())
    GANET_CHECK(bias.numel() == g.co, ShapeError, "conv2d: bias size ", bias.numel(),
                " vs Co=", g.co);

  Tensor out({g.n, g.co, g.ho, g.wo});
  const std::int64_t patch = g.ci * g.kh * g.kw;
  const std::int64_t out_area = g.ho * g.wo;
  std::vector<double> cols(static_cast<std::size_t>(patch * out_area));
  CMapRM wm(weight.data(), g.co, patch);
  for (std::int64_t b = 0; b < g.n; ++b) {
    im2col(x.data() + b * g.ci * g.h * g.w, g, cols.data());
    CMapRM cm(cols.data(), patch, out_area);
    MapRM om(out.data() + b * g.co * out_area, g.co, out_area);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      const double* pb = bias.data();
      for (std::int64_t c = 0; c < g.co; ++c) om.row(c).array() += pb[c];
    }
  }

  std::vector<Tensor> inputs = {x, weight};
  if (bias.defined()) inputs.push_back(bias);
  detail::attach_node(out, "conv2d", inputs, [x, weight, bias, g](const TensorImpl& o) mutable {
    const std::int64_t patch = g.ci * g.kh * g.kw;
    const std::int64_t out_area = g.ho * g.wo;
    std::vector<double> cols(static_cast<std::size_t>(patch * out_area));
    const bool need_dx = x.requires_grad();
    const bool need_dw = weight.requires_grad();
    const bool need_db = bias.defined() && bias.requires_grad();
    std::vector<double> dcols(need_dx ? static_cast<std::size_t>(patch * out_area) : 0);
    CMapRM wm(weight.data(), g.co, patch);
    for (std::int64_t b = 0; b < g.n; ++b) {
      CMapRM go(o.grad.data() + b * g.co * out_area, g.co, out_area);
      if (need_dw) {
        im2col(x.data() + b * g.ci * g.h * g.w, g, cols.data());
        CMapRM cm(cols.data(), patch, out_area);
        MapRM gw(weight.mutable_grad().data(), g.co, patch);
        gw.noalias() += go * cm.transpose();
      }
      if (need_db) {
        double* gb = bias.mutable_grad().data();
        for (std::int64_t c = 0; c < g.co; ++c) gb[c] += go.row(c).sum();
      }
      if (need_dx) {
        MapRM dc(dcols.data(), patch, out_area);
        dc.noalias() = wm.transpose() * go;
        col2im_accumulate(dcols.data(), g, x.mutable_grad().data() + b * g.ci * g.h * g.w);
      }
    }
  });
  return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  check_nchw(x, "max_pool2d");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = (h + 2 * padding - kernel) / stride + 1;
  const std::int64_t wo = (w + 2 * padding - kernel) / stride + 1;
  GANET_CHECK(ho >= 1 && wo >= 1, ShapeError, "max_pool2d: empty output");
  Tensor out({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(n * c * ho * wo));
  const double* px = x.data();
  double* po = out.data();
  std::int64_t oidx = 0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* plane = px + (b * c + ch) * h * w;
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t ky = 0; ky < kernel; ++ky) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t kx = 0; kx < kernel; ++kx) {
              const std::int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              const double v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = (b * c + ch) * h * w + iy * w + ix;
              }
            }
          }
          po[oidx] = best;
          (*argmax)[static_cast<std::size_t>(oidx)] = best_idx;
          ++oidx;
        }
      }
    }
  }
  detail::attach_node(out, "max_pool2d", {x}, [x, argmax](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    const std::int64_t m = static_cast<std::int64_t>(o.grad.size());
    for (std::int64_t i = 0; i < m; ++i) {
      const std::int64_t src = (*argmax)[static_cast<std::size_t>(i)];
      if (src >= 0) gx[src] += o.grad[i];
    }
  });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  check_nchw(x, "global_avg_pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c, 1, 1});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::int64_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) acc += px[i * hw + j];
    po[i] = acc * inv;
  }
  detail::attach_node(out, "global_avg_pool", {x}, [x, n, c, hw, inv](const TensorImpl& o) mutable {
    if (!x.requires_grad()) return;
    double* gx = x.mutable_grad().data();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const double g = o.grad[i] * inv;
      for (std::int64_t j = 0; j < hw; ++j) gx[i * hw + j] += g;
    }
  });
  return out;
}

namespace {
struct LerpAxis {
  std::vector<std::int64_t> lo, hi;
  std::vector<double> t;
};

// Half-pixel (align_corners=false) source coordinates.
LerpAxis make_axis(std::int64_t in, std::int64_t out) {
  LerpAxis ax;
  ax.lo.resize(static_cast<std::size_t>(out));
  ax.hi.resize(static_cast<std::size_t>(out));
  ax.t.resize(static_cast<std::size_t>(out));
  const double s = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * s - 0.5;
    if (src < 0.0) src = 0.0;
    const double mx = static_cast<double>(in - 1);
    if (src > mx) src = mx;
    const std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
    const std::int64_t hi = std::min(lo + 1, in - 1);
    ax.lo[static_cast<std::size_t>(i)] = lo;
    ax.hi[static_cast<std::size_t>(i)] = hi;
    ax.t[static_cast<std::size_t>(i)] = src - static_cast<double>(lo);
  }
  return ax;
}
}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  check_nchw(x, "bilinear_resize");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  GANET_CHECK(out_h >= 1 && out_w >= 1, ShapeError, "bilinear_resize: empty target");
  if (out_h == h && out_w == w) {
    Tensor out(x.shape(), x.vec());
    detail::attach_node(out, "bilinear_resize_id", {x}, [x](const TensorImpl& o) mutable {
      if (!x.requires_grad()) return;
      double* gx = x.mutable_grad().data();
      const std::int64_t m = static_cast<std::int64_t>(o.grad.size());
      for (std::int64_t i = 0; i < m; ++i) gx[i] += o.grad[i];
    });
    return out;
  }
  auto ay = std::make_shared<LerpAxis>(make_axis(h, out_h));
  auto axx = std::make_shared<LerpAxis>(make_axis(w, out_w));
  Tensor out({n, c, out_h, out_w});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const double* plane = px + p * h * w;
    double* oplane = po + p * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const std::int64_t y0 = ay->lo[oy], y1 = ay->hi[oy];
      const double ty = ay->t[oy];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const std::int64_t x0 = axx->lo[ox], x1 = axx->hi[ox];
        const double tx = axx->t[ox];
        const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
        const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
        const double top = v00 + (v01 - v00) * tx;
        const double bot = v10 + (v11 - v10) * tx;
        oplane[oy * out_w + ox] = top + (bot - top) * ty;
      }
    }
  }
  detail::attach_node(
      out, "bilinear_resize", {x},
      [x, ay, axx, n, c, h, w, out_h, out_w](const TensorImpl& o) mutable {
        if (!x.requires_grad()) return;
        double* gx = x.mutable_grad().data();
        for (std::int64_t p = 0; p < n * c; ++p) {
          double* gplane = gx + p * h * w;
          const double* goplane = o.grad.data() + p * out_h * out_w;
          for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const std::int64_t y0 = ay->lo[oy], y1 = ay->hi[oy];
            const double ty = ay->t[oy];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
              const std::int64_t x0 = axx->lo[ox], x1 = axx->hi[ox];
              const double tx = axx->t[ox];
              const double g = goplane[oy * out_w + ox];
              gplane[y0 * w + x0] += g * (1.0 - ty) * (1.0 - tx);
              gplane[y0 * w + x1] += g * (1.0 - ty) * tx;
              gplane[y1 * w + x0] += g * ty * (1.0 - tx);
              gplane[y1 * w + x1] += g * ty * tx;
            }
          }
        }
      });
  return out;
}

BatchMoments batch_moments(const Tensor& x) {
  check_nchw(x, "batch_moments");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t m = n * hw;
  BatchMoments stats;
  stats.mean.assign(static_cast<std::size_t>(c), 0.0);
  stats.var.assign(static_cast<std::size_t>(c), 0.0);
  stats.count = m;
  const double* px = x.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* plane = px + (b * c + ch) * hw;
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
      stats.mean[static_cast<std::size_t>(ch)] += acc;
    }
  for (auto& v : stats.mean) v /= static_cast<double>(m);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* plane = px + (b * c + ch) * hw;
      const double mu = stats.mean[static_cast<std::size_t>(ch)];
      double acc = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = plane[i] - mu;
        acc += d * d;
      }
      stats.var[static_cast<std::size_t>(ch)] += acc;
    }
  for (auto& v : stats.var) v /= static_cast<double>(m);
  return stats;
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchMoments* saved) {
  check_nchw(x, "batch_norm_train");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  GANET_CHECK(gamma.numel() == c && beta.numel() == c, ShapeError,
              "batch_norm: affine parameter size mismatch");
  BatchMoments stats = batch_moments(x);
  if (saved) *saved = stats;
  auto mean = std::make_shared<std::vector<double>>(stats.mean);
  auto invstd = std::make_shared<std::vector<double>>(stats.var);
  for (auto& v : *invstd) v = 1.0 / std::sqrt(v + eps);

  Tensor out(x.shape());
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mu = (*mean)[static_cast<std::size_t>(ch)];
      const double is = (*invstd)[static_cast<std::size_t>(ch)];
      const double g = pg[ch], bt = pb[ch];
      const double* src = px + (b * c + ch) * hw;
      double* dst = po + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * is * g + bt;
    }

  const std::int64_t m = n * hw;
  detail::attach_node(
      out, "batch_norm_train", {x, gamma, beta},
      [x, gamma, beta, mean, invstd, n, c, hw, m](const TensorImpl& o) mutable {
        const double* px = x.data();
        const double* pg = gamma.data();
        // Per-channel sums of dy and dy*xhat.
        std::vector<double> sum_dy(static_cast<std::size_t>(c), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const double mu = (*mean)[static_cast<std::size_t>(ch)];
            const double is = (*invstd)[static_cast<std::size_t>(ch)];
            const double* src = px + (b * c + ch) * hw;
            const double* gy = o.grad.data() + (b * c + ch) * hw;
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) {
              s1 += gy[i];
              s2 += gy[i] * (src[i] - mu) * is;
            }
            sum_dy[static_cast<std::size_t>(ch)] += s1;
            sum_dy_xhat[static_cast<std::size_t>(ch)] += s2;
          }
        if (gamma.requires_grad()) {
          double* gg = gamma.mutable_grad().data();
          for (std::int64_t ch = 0; ch < c; ++ch)
            gg[ch] += sum_dy_xhat[static_cast<std::size_t>(ch)];
        }
        if (beta.requires_grad()) {
          double* gb = beta.mutable_grad().data();
          for (std::int64_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[static_cast<std::size_t>(ch)];
        }
        if (x.requires_grad()) {
          double* gx = x.mutable_grad().data();
          const double invm = 1.0 / static_cast<double>(m);
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const double mu = (*mean)[static_cast<std::size_t>(ch)];
              const double is = (*invstd)[static_cast<std::size_t>(ch)];
              const double k = pg[ch] * is;
              const double mdy = sum_dy[static_cast<std::size_t>(ch)] * invm;
              const double mdyx = sum_dy_xhat[static_cast<std::size_t>(ch)] * invm;
              const double* src = px + (b * c + ch) * hw;
              const double* gy = o.grad.data() + (b * c + ch) * hw;
              double* dst = gx + (b * c + ch) * hw;
              for (std::int64_t i = 0; i < hw; ++i) {
                const double xhat = (src[i] - mu) * is;
                dst[i] += k * (gy[i] - mdy - xhat * mdyx);
              }
            }
        }
      });
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps) {
  check_nchw(x, "batch_norm_eval");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  GANET_CHECK(gamma.numel() == c && beta.numel() == c &&
                  static_cast<std::int64_t>(running_mean.size()) == c &&
                  static_cast<std::int64_t>(running_var.size()) == c,
              ShapeError, "batch_norm_eval: parameter size mismatch");
  auto invstd = std::make_shared<std::vector<double>>(running_var);
  for (auto& v : *invstd) v = 1.0 / std::sqrt(v + eps);
  auto mean = std::make_shared<std::vector<double>>(running_mean);

  Tensor out(x.shape());
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mu = (*mean)[static_cast<std::size_t>(ch)];
      const double scale = pg[ch] * (*invstd)[static_cast<std::size_t>(ch)];
      const double shift = pb[ch];
      const double* src = px + (b * c + ch) * hw;
      double* dst = po + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * scale + shift;
    }
  detail::attach_node(out, "batch_norm_eval", {x, gamma, beta},
                      [x, gamma, beta, mean, invstd, n, c, hw](const TensorImpl& o) mutable {
                        const double* px = x.data();
                        const double* pg = gamma.data();
                        for (std::int64_t b = 0; b < n; ++b)
                          for (std::int64_t ch = 0; ch < c; ++ch) {
                            const double mu = (*mean)[static_cast<std::size_t>(ch)];
                            const double is = (*invstd)[static_cast<std::size_t>(ch)];
                            const double* src = px + (b * c + ch) * hw;
                            const double* gy = o.grad.data() + (b * c + ch) * hw;
                            if (x.requires_grad()) {
                              double* gx = x.mutable_grad().data() + (b * c + ch) * hw;
                              const double k = pg[ch] * is;
                              for (std::int64_t i = 0; i < hw; ++i) gx[i] += gy[i] * k;
                            }
                            if (gamma.requires_grad()) {
                              double* gg = gamma.mutable_grad().data();
                              double acc = 0.0;
                              for (std::int64_t i = 0; i < hw; ++i)
                                acc += gy[i] * (src[i] - mu) * is;
                              gg[ch] += acc;
                            }
                            if (beta.requires_grad()) {
                              double* gb = beta.mutable_grad().data();
                              double acc = 0.0;
                              for (std::int64_t i = 0; i < hw; ++i) acc += gy[i];
                              gb[ch] += acc;
                            }
                          }
                      });
  return out;
}

}  // namespace ganet::ops
