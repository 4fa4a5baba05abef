#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's numerical kernels.

#include <functional>
#include <vector>

#include "drgn/core/image.hpp"
#include "drgn/nn/autograd.hpp"

namespace oracle {

using drgn::ImageTensor;
using drgn::nn::Tensor;
using drgn::nn::Var;

// Direct-loop PSNR with long double accumulation.
double psnr(const ImageTensor& a, const ImageTensor& b);

// Windowed SSIM evaluated pixel by pixel: luminance = channel mean, 11x11
// Gaussian (sigma 1.5) rebuilt here, two-pass weighted moments, no padding.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Zero-padded cross-correlation by nested loops; w is [Co,Ci,k,k].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// Scatter form of the transposed convolution; w is [Ci,Co,k,k].
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// 5x5 sigma-1 Gaussian blur with mirror borders (edge pixel not repeated).
Tensor gaussian_blur(const Tensor& x);

// Histogram with weight max(0, 1 - |u - k|) per bin, u = clamp(64 v - 0.5).
std::vector<double> soft_histogram(const std::vector<double>& values);

// Forward KL by direct summation.
double kl(const std::vector<double>& p, const std::vector<double>& q);

// Central-difference check of d f / d inputs: ||analytic - numeric|| /
// max(||analytic||, ||numeric||, tiny) over the gradients of all inputs taken
// as one vector. Tensors whose gradients are near zero (attention gates in
// tiny networks) would otherwise be judged on finite-difference roundoff.
double gradient_error(const std::function<Var(const std::vector<Var>&)>& f,
                      std::vector<Tensor> inputs, double h = 1e-6);

}  // namespace oracle
