#pragma once

#include <vector>

#include "drgn/nn/autograd.hpp"

namespace drgn::nn {

// Elementwise arithmetic. Binary ops require identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
// Gradient passes where lo <= x <= hi.
Var clamp(const Var& x, double lo, double hi);
Var square(const Var& x);
Var sqrt(const Var& x);
// log(max(x, floor)); zero gradient below the floor.
Var log_clamped(const Var& x, double floor);

Var sum(const Var& x);
Var mean(const Var& x);

// NCHW channel utilities.
Var concat_channels(const std::vector<Var>& xs);
Var channel_mean(const Var& x);             // [B,C,H,W] -> [B,1,H,W]
Var global_avg_pool(const Var& x);          // [B,C,H,W] -> [B,C,1,1]
Var scale_channels(const Var& x, const Var& s);  // x * s, s is [B,C,1,1]

// Zero-padded cross-correlation; weight [Co,Ci,k,k], bias [Co] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int pad);
// Adjoint of conv2d; weight [Ci,Co,k,k]. Output side (H-1)*stride - 2*pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias,
                     int stride, int pad);

enum class Border { reflect, valid };

// Fixed depthwise 2-D filter applied to every channel independently.
// `reflect` pads by half the kernel with mirror-101 indexing; `valid` does not
// pad. Gradients flow to x only.
Var filter2d(const Var& x, const Tensor& kernel, int stride, Border border);

// Mirror-101 index folding valid for any offset and any n >= 1.
int reflect_index(int i, int n);

}  // namespace drgn::nn
