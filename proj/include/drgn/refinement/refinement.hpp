#pragma once

#include "drgn/core/config.hpp"
#include "drgn/core/image.hpp"
#include "drgn/mfn/mfn.hpp"

namespace drgn::refinement {

struct Stage2Losses {
  double con_img = 0.0;
  double ssim_term = 0.0;
  double total = 0.0;
};

// Differentiable stage-2 terms; `ssim_term` is undefined when ablated.
struct Stage2Terms {
  nn::Var con_img;
  nn::Var ssim_term;
  nn::Var total;
  Stage2Losses values() const;
};

// I* = ReG(I_B). With residual mode this is clamp(I_B + MFN(I_B), 0, 1).
nn::Var refine(const nn::Var& base, const mfn::MfnParams& re);
// Pads to the network multiple and crops back.
ImageTensor refine(const ImageTensor& base, const mfn::MfnParams& re);

// mean(sqrt((a - b)^2 + eps^2)).
double charbonnier(const ImageTensor& a, const ImageTensor& b, double eps);
nn::Var charbonnier(const nn::Var& a, const nn::Var& b, double eps);

// con_img = charb(I*, I) + charb(I*_ref, I_ref)
// ssim_term = SSIM(I*, I) + SSIM(I*_ref, I_ref)
// total = con_img + lambda * ssim_term
// The ref pair is skipped when undefined or when ablation.dl_da is off; the
// SSIM term is skipped when ablation.ssim is off.
Stage2Terms stage2_loss(const nn::Var& pred, const nn::Var& target, const nn::Var& pred_ref,
                        const nn::Var& target_ref, const RunConfig& cfg);
Stage2Losses stage2_loss(const ImageTensor& pred, const ImageTensor& target,
                         const ImageTensor& pred_ref, const ImageTensor& target_ref,
                         const RunConfig& cfg);

// I_L -> pad -> DeG -> clamp(I_L - I_D) -> ReG -> crop. Any input size.
ImageTensor enhance(const ImageTensor& lowlight, const mfn::MfnParams& deg,
                    const mfn::MfnParams& re);

// The same pipeline on an NCHW batch whose sides already fit both networks.
nn::Var enhance(const nn::Var& lowlight, const mfn::MfnParams& deg, const mfn::MfnParams& re);

}  // namespace drgn::refinement
