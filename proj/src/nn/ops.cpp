#include "drgn/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "drgn/core/errors.hpp"

namespace drgn::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_4d(const Var& x, const char* op) {
  if (x.value().ndim() != 4) {
    throw ShapeError(std::string(op) + ": expected NCHW tensor, got " +
                     to_string(x.shape()));
  }
}

// Applies f elementwise and records g(x, y, gout) -> dx.
template <typename Fwd, typename Bwd>
Var unary(const Var& x, Fwd f, Bwd df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, df](const Node& self) {
    Tensor g(xn->value.shape());
    const Tensor& xv = xn->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = df(xv[i], self.value[i]) * self.grad[i];
    }
    accumulate_grad(*xn, g);
  });
}

void im2col(const double* x, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* x) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    double* xc = x + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + static_cast<std::size_t>((c * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          double* dst = xc + static_cast<std::size_t>(iy) * width;
          const double* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void add_bias(Tensor& out, const Tensor& bias) {
  const int batch = out.dim(0), ch = out.dim(1);
  const std::size_t plane = static_cast<std::size_t>(out.dim(2)) * out.dim(3);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      double* p = out.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
      const double v = bias[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) p[i] += v;
    }
  }
}

Tensor bias_grad(const Tensor& gout) {
  const int batch = gout.dim(0), ch = gout.dim(1);
  const std::size_t plane = static_cast<std::size_t>(gout.dim(2)) * gout.dim(3);
  Tensor g(Shape{ch}, 0.0);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < ch; ++c) {
      const double* p = gout.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      g[static_cast<std::size_t>(c)] += s;
    }
  }
  return g;
}

}  // namespace

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result(std::move(out), {a, b}, [an, bn](const Node& self) {
    accumulate_grad(*an, self.grad);
    accumulate_grad(*bn, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result(std::move(out), {a, b}, [an, bn](const Node& self) {
    accumulate_grad(*an, self.grad);
    if (bn->requires_grad) {
      Tensor g = self.grad;
      for (auto& v : g.values()) v = -v;
      accumulate_grad(*bn, g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result(std::move(out), {a, b}, [an, bn](const Node& self) {
    if (an->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * bn->value[i];
      accumulate_grad(*an, g);
    }
    if (bn->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * an->value[i];
      accumulate_grad(*bn, g);
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_result(std::move(out), {a, b}, [an, bn](const Node& self) {
    if (an->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] / bn->value[i];
      accumulate_grad(*an, g);
    }
    if (bn->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = -self.grad[i] * self.value[i] / bn->value[i];
      }
      accumulate_grad(*bn, g);
    }
  });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; },
               [s](double, double) { return s; });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) {
                 return (v >= lo && v <= hi) ? 1.0 : 0.0;
               });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
  return unary(x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Var log_clamped(const Var& x, double floor) {
  return unary(x, [floor](double v) { return std::log(std::max(v, floor)); },
               [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  auto xn = x.node();
  return make_result(Tensor::scalar(s), {x}, [xn](const Node& self) {
    accumulate_grad(*xn, Tensor(xn->value.shape(), self.grad[0]));
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return mul_scalar(sum(x), 1.0 / n);
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  for (const auto& x : xs) require_4d(x, "concat_channels");
  const int batch = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int total = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != batch || x.dim(2) != h || x.dim(3) != w) {
      throw ShapeError("concat_channels: spatial mismatch " +
                       to_string(xs[0].shape()) + " vs " + to_string(x.shape()));
    }
    total += x.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(Shape{batch, total, h, w});
  for (int b = 0; b < batch; ++b) {
    double* dst = out.data() + static_cast<std::size_t>(b) * total * plane;
    for (const auto& x : xs) {
      const std::size_t n = static_cast<std::size_t>(x.dim(1)) * plane;
      const double* src = x.value().data() + static_cast<std::size_t>(b) * n;
      std::copy(src, src + n, dst);
      dst += n;
    }
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& x : xs) nodes.push_back(x.node());
  return make_result(std::move(out), xs, [nodes, batch, total, plane](const Node& self) {
    int offset = 0;
    for (const auto& n : nodes) {
      const int ch = n->value.dim(1);
      if (n->requires_grad) {
        Tensor g(n->value.shape());
        for (int b = 0; b < batch; ++b) {
          const double* src = self.grad.data() +
                              (static_cast<std::size_t>(b) * total + offset) * plane;
          std::copy(src, src + ch * plane,
                    g.data() + static_cast<std::size_t>(b) * ch * plane);
        }
        accumulate_grad(*n, g);
      }
      offset += ch;
    }
  });
}

Var channel_mean(const Var& x) {
  require_4d(x, "channel_mean");
  const int batch = x.dim(0), ch = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out(Shape{batch, 1, x.dim(2), x.dim(3)}, 0.0);
  for (int b = 0; b < batch; ++b) {
    double* dst = out.data() + b * plane;
    for (int c = 0; c < ch; ++c) {
      const double* src = x.value().data() + (static_cast<std::size_t>(b) * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < plane; ++i) dst[i] /= ch;
  }
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, batch, ch, plane](const Node& self) {
    Tensor g(xn->value.shape());
    for (int b = 0; b < batch; ++b) {
      const double* src = self.grad.data() + b * plane;
      for (int c = 0; c < ch; ++c) {
        double* dst = g.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] / ch;
      }
    }
    accumulate_grad(*xn, g);
  });
}

Var global_avg_pool(const Var& x) {
  require_4d(x, "global_avg_pool");
  const int batch = x.dim(0), ch = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out(Shape{batch, ch, 1, 1});
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch) * ch; ++bc) {
    const double* src = x.value().data() + bc * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += src[i];
    out[bc] = s / static_cast<double>(plane);
  }
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, batch, ch, plane](const Node& self) {
    Tensor g(xn->value.shape());
    for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch) * ch; ++bc) {
      const double v = self.grad[bc] / static_cast<double>(plane);
      std::fill(g.data() + bc * plane, g.data() + (bc + 1) * plane, v);
    }
    accumulate_grad(*xn, g);
  });
}

Var scale_channels(const Var& x, const Var& s) {
  require_4d(x, "scale_channels");
  const int batch = x.dim(0), ch = x.dim(1);
  if (s.shape() != Shape{batch, ch, 1, 1}) {
    throw ShapeError("scale_channels: scale " + to_string(s.shape()) +
                     " does not match " + to_string(x.shape()));
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out(x.shape());
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(batch) * ch; ++bc) {
    const double* src = x.value().data() + bc * plane;
    double* dst = out.data() + bc * plane;
    const double k = s.value()[bc];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
  }
  auto xn = x.node(), sn = s.node();
  return make_result(std::move(out), {x, s}, [xn, sn, batch, ch, plane](const Node& self) {
    const std::size_t planes = static_cast<std::size_t>(batch) * ch;
    if (xn->requires_grad) {
      Tensor g(xn->value.shape());
      for (std::size_t bc = 0; bc < planes; ++bc) {
        const double k = sn->value[bc];
        for (std::size_t i = 0; i < plane; ++i) {
          g[bc * plane + i] = self.grad[bc * plane + i] * k;
        }
      }
      accumulate_grad(*xn, g);
    }
    if (sn->requires_grad) {
      Tensor g(sn->value.shape());
      for (std::size_t bc = 0; bc < planes; ++bc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          acc += self.grad[bc * plane + i] * xn->value[bc * plane + i];
        }
        g[bc] = acc;
      }
      accumulate_grad(*sn, g);
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad) {
  require_4d(x, "conv2d");
  require_4d(weight, "conv2d weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) +
                     " incompatible with input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + to_string(bias.shape()));
  }
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (oh <= 0 || ow <= 0) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) +
                     " too small for kernel " + std::to_string(k));
  }
  const int patch = cin * k * k;
  const int plane = oh * ow;
  // A 1x1 stride-1 unpadded convolution is a plain matrix product.
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor out(Shape{batch, cout, oh, ow});
  std::vector<double> col(pointwise ? 0 : static_cast<std::size_t>(patch) * plane);
  CMapR wm(weight.value().data(), cout, patch);
  for (int b = 0; b < batch; ++b) {
    const double* xb = x.value().data() + static_cast<std::size_t>(b) * cin * h * w;
    const double* colp = xb;
    if (!pointwise) {
      im2col(xb, cin, h, w, k, stride, pad, oh, ow, col.data());
      colp = col.data();
    }
    MapR y(out.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
    y.noalias() = wm * CMapR(colp, patch, plane);
  }
  if (bias.defined()) add_bias(out, bias.value());

  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      std::move(out), inputs,
      [=](const Node& self) {
        std::vector<double> colbuf(pointwise ? 0 : static_cast<std::size_t>(patch) * plane);
        Tensor* gw = wn->requires_grad ? &grad_buffer(*wn) : nullptr;
        Tensor gx;
        if (xn->requires_grad) gx = Tensor(xn->value.shape(), 0.0);
        CMapR wm(wn->value.data(), cout, patch);
        for (int b = 0; b < batch; ++b) {
          CMapR gy(self.grad.data() + static_cast<std::size_t>(b) * cout * plane, cout, plane);
          const double* xb = xn->value.data() + static_cast<std::size_t>(b) * cin * h * w;
          if (gw) {
            const double* colp = xb;
            if (!pointwise) {
              im2col(xb, cin, h, w, k, stride, pad, oh, ow, colbuf.data());
              colp = colbuf.data();
            }
            MapR(gw->data(), cout, patch).noalias() +=
                gy * CMapR(colp, patch, plane).transpose();
          }
          if (!gx.empty()) {
            double* gxb = gx.data() + static_cast<std::size_t>(b) * cin * h * w;
            if (pointwise) {
              MapR(gxb, patch, plane).noalias() = wm.transpose() * gy;
            } else {
              MapR(colbuf.data(), patch, plane).noalias() = wm.transpose() * gy;
              col2im(colbuf.data(), cin, h, w, k, stride, pad, oh, ow, gxb);
            }
          }
        }
        if (!gx.empty()) accumulate_grad(*xn, gx);
        if (bn && bn->requires_grad) accumulate_grad(*bn, bias_grad(self.grad));
      });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias,
                     int stride, int pad) {
  require_4d(x, "conv_transpose2d");
  require_4d(weight, "conv_transpose2d weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin || weight.dim(3) != k) {
    throw ShapeError("conv_transpose2d: weight " + to_string(weight.shape()) +
                     " incompatible with input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv_transpose2d: bias " + to_string(bias.shape()));
  }
  const int oh = (h - 1) * stride - 2 * pad + k;
  const int ow = (w - 1) * stride - 2 * pad + k;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
  const int patch = cout * k * k;
  const int plane = h * w;

  Tensor out(Shape{batch, cout, oh, ow}, 0.0);
  std::vector<double> col(static_cast<std::size_t>(patch) * plane);
  CMapR wm(weight.value().data(), cin, patch);
  for (int b = 0; b < batch; ++b) {
    CMapR xb(x.value().data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
    MapR(col.data(), patch, plane).noalias() = wm.transpose() * xb;
    col2im(col.data(), cout, oh, ow, k, stride, pad, h, w,
           out.data() + static_cast<std::size_t>(b) * cout * oh * ow);
  }
  if (bias.defined()) add_bias(out, bias.value());

  auto xn = x.node(), wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      std::move(out), inputs,
      [=](const Node& self) {
        std::vector<double> colbuf(static_cast<std::size_t>(patch) * plane);
        Tensor* gw = wn->requires_grad ? &grad_buffer(*wn) : nullptr;
        Tensor gx;
        if (xn->requires_grad) gx = Tensor(xn->value.shape(), 0.0);
        CMapR wm(wn->value.data(), cin, patch);
        for (int b = 0; b < batch; ++b) {
          im2col(self.grad.data() + static_cast<std::size_t>(b) * cout * oh * ow,
                 cout, oh, ow, k, stride, pad, h, w, colbuf.data());
          CMapR gcol(colbuf.data(), patch, plane);
          if (gw) {
            CMapR xb(xn->value.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane);
            MapR(gw->data(), cin, patch).noalias() += xb * gcol.transpose();
          }
          if (!gx.empty()) {
            MapR(gx.data() + static_cast<std::size_t>(b) * cin * plane, cin, plane)
                .noalias() = wm * gcol;
          }
        }
        if (!gx.empty()) accumulate_grad(*xn, gx);
        if (bn && bn->requires_grad) accumulate_grad(*bn, bias_grad(self.grad));
      });
}

Var filter2d(const Var& x, const Tensor& kernel, int stride, Border border) {
  require_4d(x, "filter2d");
  if (kernel.ndim() != 2) throw ShapeError("filter2d: kernel must be 2-D");
  const int kh = kernel.dim(0), kw = kernel.dim(1);
  const int batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ph = border == Border::reflect ? kh / 2 : 0;
  const int pw = border == Border::reflect ? kw / 2 : 0;
  const int oh = (h + 2 * ph - kh) / stride + 1;
  const int ow = (w + 2 * pw - kw) / stride + 1;
  if (h + 2 * ph < kh || w + 2 * pw < kw) {
    throw ShapeError("filter2d: input " + to_string(x.shape()) +
                     " smaller than window " + std::to_string(kh) + "x" +
                     std::to_string(kw));
  }
  // Precomputed source index per output tap, shared by forward and backward.
  std::vector<int> rows(static_cast<std::size_t>(oh) * kh), cols(static_cast<std::size_t>(ow) * kw);
  for (int oy = 0; oy < oh; ++oy)
    for (int ky = 0; ky < kh; ++ky)
      rows[static_cast<std::size_t>(oy) * kh + ky] = reflect_index(oy * stride - ph + ky, h);
  for (int ox = 0; ox < ow; ++ox)
    for (int kx = 0; kx < kw; ++kx)
      cols[static_cast<std::size_t>(ox) * kw + kx] = reflect_index(ox * stride - pw + kx, w);

  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t planes = static_cast<std::size_t>(batch) * ch;
  Tensor out(Shape{batch, ch, oh, ow}, 0.0);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.value().data() + p * in_plane;
    double* dst = out.data() + p * out_plane;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ky = 0; ky < kh; ++ky) {
        const double* srow = src + static_cast<std::size_t>(rows[static_cast<std::size_t>(oy) * kh + ky]) * w;
        const double* krow = kernel.data() + static_cast<std::size_t>(ky) * kw;
        double* drow = dst + static_cast<std::size_t>(oy) * ow;
        for (int ox = 0; ox < ow; ++ox) {
          const int* ci = cols.data() + static_cast<std::size_t>(ox) * kw;
          double acc = 0.0;
          for (int kx = 0; kx < kw; ++kx) acc += krow[kx] * srow[ci[kx]];
          drow[ox] += acc;
        }
      }
    }
  }
  auto xn = x.node();
  return make_result(std::move(out), {x}, [=](const Node& self) {
    Tensor g(xn->value.shape(), 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
      double* gsrc = g.data() + p * in_plane;
      const double* gdst = self.grad.data() + p * out_plane;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ky = 0; ky < kh; ++ky) {
          double* grow = gsrc + static_cast<std::size_t>(rows[static_cast<std::size_t>(oy) * kh + ky]) * w;
          const double* krow = kernel.data() + static_cast<std::size_t>(ky) * kw;
          const double* drow = gdst + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int* ci = cols.data() + static_cast<std::size_t>(ox) * kw;
            const double go = drow[ox];
            for (int kx = 0; kx < kw; ++kx) grow[ci[kx]] += krow[kx] * go;
          }
        }
      }
    }
    accumulate_grad(*xn, g);
  });
}

}  // namespace drgn::nn
