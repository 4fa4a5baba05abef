#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "drgn/core/checkpoint.hpp"
#include "drgn/core/config.hpp"
#include "drgn/core/image.hpp"
#include "drgn/nn/autograd.hpp"

// Multi-resolution fusion network: a Gaussian image pyramid feeds parallel
// branches; coarser branches receive strided copies of the finer initial
// features (MSR), each branch runs a residual group of channel-attention
// blocks, and transposed convolutions bring every branch back to full
// resolution for a 1x1 fusion and a 3x3 reconstruction head.
namespace drgn::mfn {

enum class OutputMode { direct, residual };
// tanh for degradation maps, clamp to [0,1] for refined images.
enum class HeadRange { tanh, unit_clamp };

struct Conv {
  nn::Var weight;
  nn::Var bias;
};

struct RcabParams {
  Conv conv1;
  Conv conv2;
  Conv attention_down;  // 1x1, C -> C/16
  Conv attention_up;    // 1x1, C/16 -> C
};

struct BranchParams {
  Conv initial;
  // down_paths[j]: stride-2 convs taking branch j's features to this level.
  std::vector<std::vector<Conv>> down_paths;
  Conv msr_fuse;  // undefined for the finest branch
  std::vector<RcabParams> rcabs;
  Conv long_fuse;
  std::vector<Conv> upsamplers;  // one transposed conv per octave
};

// Shape-determining description derived from a RunConfig.
struct Architecture {
  int levels = 3;
  int channels = 64;
  std::vector<int> rcabs;
  std::vector<int> kernels;
  bool multi_scale = true;

  static Architecture from_config(const RunConfig& cfg);
  int attention_channels() const { return channels >= 16 ? channels / 16 : 1; }
};

std::size_t parameter_count(const Architecture& arch);

// Builds the single-branch stand-in used when MSR is ablated: one full-
// resolution branch whose RCAB count is chosen so the parameter total is as
// close as possible to the multi-scale model.
Architecture single_scale_equivalent(const Architecture& full);

// Copies alias the same parameter storage; use clone() for an independent set.
class MfnParams {
 public:
  // Fan-in scaled normal weights, zero biases, attention gates near 0.5.
  static MfnParams create(const Architecture& arch, OutputMode mode,
                          HeadRange head, std::uint64_t seed);
  // Every weight and bias zero.
  static MfnParams zeros(const Architecture& arch, OutputMode mode, HeadRange head);

  MfnParams clone() const;

  const Architecture& architecture() const { return arch_; }
  OutputMode output_mode() const { return mode_; }
  HeadRange head_range() const { return head_; }
  int levels() const { return static_cast<int>(branches.size()); }

  std::vector<std::pair<std::string, nn::Var>> named_parameters() const;
  std::size_t parameter_count() const;
  NamedTensors state() const;
  // Throws FormatError on missing names or shape mismatch.
  void load_state(const NamedTensors& tensors);
  void set_requires_grad(bool on);
  bool all_finite() const;

  std::vector<BranchParams> branches;
  Conv fusion;
  Conv reconstruction;

 private:
  MfnParams(Architecture arch, OutputMode mode, HeadRange head)
      : arch_(std::move(arch)), mode_(mode), head_(head) {}

  Architecture arch_;
  OutputMode mode_;
  HeadRange head_;
};

// 5x5 Gaussian, sigma 1, normalized to unit sum.
const nn::Tensor& gaussian_kernel();

// Reflection-bordered Gaussian blur (no decimation).
nn::Var gaussian_blur(const nn::Var& x);
// Blur then keep every second row and column. Odd sides raise ShapeError.
nn::Var gaussian_downsample(const nn::Var& x);
ImageTensor gaussian_downsample(const ImageTensor& img);

// Level 0 is the input; level i+1 = gaussian_downsample(level i).
std::vector<nn::Var> build_pyramid(const nn::Var& x, int levels);
std::vector<ImageTensor> build_pyramid(const ImageTensor& img, int levels);

nn::Var initial_features(const nn::Var& level_image, const BranchParams& branch);

// finer[j] holds branch j's initial features for every j below this branch.
// With `enabled` false (or no finer branches) returns f_ini unchanged.
nn::Var msr_fuse(const nn::Var& f_ini, const std::vector<nn::Var>& finer,
                 const BranchParams& branch, bool enabled = true);

// f + CA(conv(relu(conv(f)))), CA = sigmoid-gated channel scaling.
nn::Var rcab_forward(const nn::Var& f, const RcabParams& rcab);
// The sigmoid gate of an RCAB for input features f, shape [B,C,1,1].
nn::Var rcab_attention(const nn::Var& f, const RcabParams& rcab);

nn::Var residual_group(const nn::Var& f_msr, const BranchParams& branch);

// Upsamples branches 1..n-1 to full resolution and fuses with branch 0.
nn::Var upsample_fuse(const std::vector<nn::Var>& f_long, const MfnParams& params);

// Input sides must be multiples of 2^(levels-1); output keeps the input shape
// with 3 channels.
nn::Var mfn_forward(const nn::Var& image, const MfnParams& params);
ImageTensor mfn_forward(const ImageTensor& image, const MfnParams& params);

}  // namespace drgn::mfn
