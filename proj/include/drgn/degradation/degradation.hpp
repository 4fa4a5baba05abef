#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "drgn/core/dataset.hpp"
#include "drgn/core/image.hpp"
#include "drgn/mfn/mfn.hpp"

namespace drgn::degradation {

inline constexpr int kHistogramBins = 64;
inline constexpr double kHistogramSmoothing = 1e-8;
inline constexpr double kLogFloor = 1e-12;

enum class DiscRole { low, de };

// Four 3x3 stride-2 convolutions (32, 64, 128, 256 channels) with leaky ReLU,
// a 1x1 projection to one logit map, global average, sigmoid.
class DiscParams {
 public:
  static DiscParams create(DiscRole role, std::uint64_t seed);

  DiscRole role() const { return role_; }
  std::vector<std::pair<std::string, nn::Var>> named_parameters() const;
  NamedTensors state() const;
  void load_state(const NamedTensors& tensors);
  void set_requires_grad(bool on);

  std::vector<mfn::Conv> layers;
  mfn::Conv head;

 private:
  explicit DiscParams(DiscRole role) : role_(role) {}
  DiscRole role_;
};

struct Stage1Losses {
  double adv_low = 0.0;
  double adv_de = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Differentiable stage-1 terms. `kl` is undefined when the term is ablated.
struct Stage1Terms {
  nn::Var adv_low;
  nn::Var adv_de;
  nn::Var kl;
  nn::Var total;
  Stage1Losses values() const;
};

// I_D = DeG(I_L). The image is padded to the pyramid multiple and the map
// cropped back, so any size is accepted.
DegradationMap predict_degradation(const ImageTensor& lowlight, const mfn::MfnParams& deg);
nn::Var predict_degradation(const nn::Var& lowlight, const mfn::MfnParams& deg);

// I_B = clamp(I_L - I_D, 0, 1).
ImageTensor base_enhance(const ImageTensor& lowlight, const DegradationMap& degradation);
nn::Var base_enhance(const nn::Var& lowlight, const nn::Var& degradation);

// I_L,ref = clamp(I_ref + I_D, 0, 1); I_D is bilinearly resized to I_ref.
ImageTensor compose_synthetic(const ImageTensor& reference, const DegradationMap& degradation);
nn::Var compose_synthetic(const nn::Var& reference, const nn::Var& degradation);

// Maps a [-1,1] degradation batch to [0,1].
nn::Var to_unit_range(const nn::Var& degradation);

// Per-sample discriminator probabilities, shape [B,1,1,1].
nn::Var discriminate(const nn::Var& input, const DiscParams& d);
double discriminate(const ImageTensor& input, const DiscParams& d);

// -log D(real) - log(1 - D(fake)) with the log argument floored at 1e-12.
double adversarial_objective(double d_real, double d_fake);
// Batch mean of the same objective over score tensors.
nn::Var adversarial_objective(const nn::Var& d_real, const nn::Var& d_fake);

// L_adv,low: real = I_L, fake = I_L,ref.
nn::Var adv_loss_low(const nn::Var& lowlight, const nn::Var& synthetic_lowlight,
                     const DiscParams& d_low);
// L_adv,de: real = I_D, fake = I_D,ref, both mapped to [0,1].
nn::Var adv_loss_de(const nn::Var& degradation, const nn::Var& degradation_ref,
                    const DiscParams& d_de);

// Generator-side counterparts with the labels swapped, so minimizing them
// drives the discriminators toward confusing the two sources.
nn::Var generator_loss_low(const nn::Var& synthetic_lowlight, const DiscParams& d_low);
nn::Var generator_loss_de(const nn::Var& degradation, const nn::Var& degradation_ref,
                          const DiscParams& d_de);

// Triangular soft assignment of values in [0,1] to 64 bins, plus 1e-8
// smoothing, normalized to sum 1. Values outside [0,1] saturate at the end bins.
std::vector<double> soft_histogram(std::span<const double> values);
// Row g of the result is the histogram of the g-th contiguous block of x;
// `groups` must divide x's element count. Output shape [groups, 64].
nn::Var soft_histogram(const nn::Var& x, int groups);

// Forward KL sum p ln(p/q). Throws DistributionError for mismatched lengths,
// non-positive entries or sums off by more than 1e-6.
double kl_div(std::span<const double> p, std::span<const double> q);
// Mean over rows of the row-wise forward KL, for [G,64] histograms.
nn::Var kl_div(const nn::Var& p, const nn::Var& q);

// alpha * (adv_low + adv_de) + kl.
double compose_stage1_total(double adv_low, double adv_de, double kl, double alpha);

// Full stage-1 loss. The KL term compares per-sample histograms of
// (I_D+1)/2 and (I_D,ref+1)/2; `use_kl` false leaves it out.
Stage1Terms stage1_loss(const nn::Var& lowlight, const nn::Var& synthetic_lowlight,
                        const nn::Var& degradation, const nn::Var& degradation_ref,
                        const DiscParams& d_low, const DiscParams& d_de,
                        double alpha, bool use_kl = true);

// -log D(real) - log(1 - D(fake)); both inputs are detached first so only the
// discriminator receives gradients.
nn::Var discriminator_loss(const nn::Var& real, const nn::Var& fake, const DiscParams& d);

// One synthetic pair per reference: a low-light source is drawn uniformly
// with an rng seeded by seed + index, its degradation predicted and added to
// the reference. Throws EmptyReferenceError / EmptyDatasetError.
std::vector<SyntheticPair> augment_dataset(std::span<const SamplePair> pairs,
                                           std::span<const ImageTensor> refs,
                                           const mfn::MfnParams& deg, std::uint64_t seed);

// Index of the low-light source augment_dataset uses for reference `index`.
std::size_t augmentation_source(std::size_t pair_count, std::uint64_t seed, std::size_t index);

}  // namespace drgn::degradation
