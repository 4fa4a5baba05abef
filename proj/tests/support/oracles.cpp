#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

double psnr(const ImageTensor& a, const ImageTensor& b) {
  long double sse = 0.0L;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      for (int c = 0; c < a.channels(); ++c) {
        const long double d = static_cast<long double>(a.at(y, x, c)) - b.at(y, x, c);
        sse += d * d;
      }
    }
  }
  const long double mse = sse / static_cast<long double>(a.size());
  if (mse == 0.0L) return INFINITY;
  return static_cast<double>(-10.0L * std::log10(mse));
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  const int win = 11, r = 5;
  const double sigma = 1.5;
  std::vector<double> g(win * win);
  double gsum = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      g[(dy + r) * win + (dx + r)] = v;
      gsum += v;
    }
  }
  for (auto& v : g) v /= gsum;

  auto lum = [](const ImageTensor& img, int y, int x) {
    double s = 0.0;
    for (int c = 0; c < img.channels(); ++c) s += img.at(y, x, c);
    return s / img.channels();
  };
  const double c1 = 1e-4, c2 = 9e-4;
  long double total = 0.0L;
  int count = 0;
  for (int y = r; y < a.height() - r; ++y) {
    for (int x = r; x < a.width() - r; ++x) {
      double mx = 0, my = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double w = g[(dy + r) * win + (dx + r)];
          mx += w * lum(a, y + dy, x + dx);
          my += w * lum(b, y + dy, x + dx);
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const double w = g[(dy + r) * win + (dx + r)];
          const double ex = lum(a, y + dy, x + dx) - mx;
          const double ey = lum(b, y + dy, x + dx) - my;
          vx += w * ex * ex;
          vy += w * ey * ey;
          cxy += w * ex * ey;
        }
      }
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return static_cast<double>(total / count);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, co, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (int i = 0; i < ci; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                s += x[((static_cast<std::size_t>(b) * ci + i) * h + iy) * wd + ix] *
                     w[((static_cast<std::size_t>(o) * ci + i) * k + ky) * k + kx];
              }
          out[((static_cast<std::size_t>(b) * co + o) * oh + y) * ow + xx] = s;
        }
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(1), k = w.dim(2);
  const int oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
  Tensor out({n, co, oh, ow});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          out[((static_cast<std::size_t>(b) * co + o) * oh + y) * ow + xx] =
              bias.empty() ? 0.0 : bias[o];
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < ci; ++i)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          const double v = x[((static_cast<std::size_t>(b) * ci + i) * h + y) * wd + xx];
          for (int o = 0; o < co; ++o)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = y * stride - pad + ky, ox = xx * stride - pad + kx;
                if (oy < 0 || ox < 0 || oy >= oh || ox >= ow) continue;
                out[((static_cast<std::size_t>(b) * co + o) * oh + oy) * ow + ox] +=
                    v * w[((static_cast<std::size_t>(i) * co + o) * k + ky) * k + kx];
              }
        }
  return out;
}

Tensor gaussian_blur(const Tensor& x) {
  double k1[5], s = 0;
  for (int i = -2; i <= 2; ++i) s += (k1[i + 2] = std::exp(-0.5 * i * i));
  for (double& v : k1) v /= s;
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
  };
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double acc = 0;
          for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx)
              acc += k1[dy + 2] * k1[dx + 2] *
                     x[((static_cast<std::size_t>(b) * c + ch) * h + mirror(y + dy, h)) * w +
                       mirror(xx + dx, w)];
          out[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + xx] = acc;
        }
  return out;
}

std::vector<double> soft_histogram(const std::vector<double>& values) {
  std::vector<double> h(64, 0.0);
  for (double v : values) {
    const double u = std::min(63.0, std::max(0.0, 64.0 * v - 0.5));
    for (int k = 0; k < 64; ++k) h[k] += std::max(0.0, 1.0 - std::abs(u - k));
  }
  double total = 0.0;
  for (auto& c : h) total += (c = c / values.size() + 1e-8);
  for (auto& c : h) c /= total;
  return h;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

double gradient_error(const std::function<Var(const std::vector<Var>&)>& f,
                      std::vector<Tensor> inputs, double h) {
  std::vector<Var> vars;
  for (auto& t : inputs) vars.emplace_back(t, true);
  const Var out = f(vars);
  drgn::nn::backward(out);
  long double diff2 = 0, a2 = 0, n2 = 0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const Tensor analytic = vars[j].has_grad() ? vars[j].grad() : Tensor(inputs[j].shape(), 0.0);
    for (std::size_t i = 0; i < inputs[j].size(); ++i) {
      auto eval = [&](double delta) {
        drgn::nn::NoGradGuard guard;
        std::vector<Var> probe;
        for (std::size_t m = 0; m < inputs.size(); ++m) {
          Tensor t = inputs[m];
          if (m == j) t[i] += delta;
          probe.emplace_back(t, false);
        }
        return f(probe).value().item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double d = analytic[i] - numeric;
      diff2 += d * d;
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
  }
  const long double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12L});
  return static_cast<double>(std::sqrt(diff2) / scale);
}

}  // namespace oracle
