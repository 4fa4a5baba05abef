#include "drgn/refinement/refinement.hpp"

#include <algorithm>
#include <cmath>

#include "drgn/core/errors.hpp"
#include "drgn/degradation/degradation.hpp"
#include "drgn/metrics/metrics.hpp"
#include "drgn/nn/ops.hpp"

namespace drgn::refinement {

using nn::Var;

namespace {

int network_multiple(const mfn::MfnParams& a, const mfn::MfnParams& b) {
  return 1 << (std::max(a.levels(), b.levels()) - 1);
}

}  // namespace

Stage2Losses Stage2Terms::values() const {
  Stage2Losses out;
  out.con_img = con_img.value().item();
  out.ssim_term = ssim_term.defined() ? ssim_term.value().item() : 0.0;
  out.total = total.value().item();
  return out;
}

Var refine(const Var& base, const mfn::MfnParams& re) { return mfn::mfn_forward(base, re); }

ImageTensor refine(const ImageTensor& base, const mfn::MfnParams& re) {
  const auto padded = pad_to_multiple(base, 1 << (re.levels() - 1));
  return crop(mfn::mfn_forward(padded.image, re), 0, 0, base.height(), base.width());
}

double charbonnier(const ImageTensor& a, const ImageTensor& b, double eps) {
  if (!a.same_shape(b)) throw ShapeError("charbonnier: image shapes differ");
  nn::NoGradGuard guard;
  return charbonnier(Var(to_batch(a)), Var(to_batch(b)), eps).value().item();
}

Var charbonnier(const Var& a, const Var& b, double eps) {
  if (a.shape() != b.shape()) {
    throw ShapeError("charbonnier: " + nn::to_string(a.shape()) + " vs " +
                     nn::to_string(b.shape()));
  }
  if (!(eps > 0.0)) throw Error("charbonnier: eps must be positive");
  return nn::mean(nn::sqrt(nn::add_scalar(nn::square(nn::sub(a, b)), eps * eps)));
}

Stage2Terms stage2_loss(const Var& pred, const Var& target, const Var& pred_ref,
                        const Var& target_ref, const RunConfig& cfg) {
  const bool use_ref = cfg.ablation.dl_da && pred_ref.defined() && target_ref.defined();
  Stage2Terms t;
  t.con_img = charbonnier(pred, target, cfg.epsilon_charb);
  if (use_ref) t.con_img = nn::add(t.con_img, charbonnier(pred_ref, target_ref, cfg.epsilon_charb));
  t.total = t.con_img;
  if (cfg.ablation.ssim) {
    t.ssim_term = metrics::ssim(pred, target);
    if (use_ref) t.ssim_term = nn::add(t.ssim_term, metrics::ssim(pred_ref, target_ref));
    t.total = nn::add(t.con_img, nn::mul_scalar(t.ssim_term, cfg.lambda_ssim));
  }
  return t;
}

Stage2Losses stage2_loss(const ImageTensor& pred, const ImageTensor& target,
                         const ImageTensor& pred_ref, const ImageTensor& target_ref,
                         const RunConfig& cfg) {
  if (!pred.same_shape(target) || !pred_ref.same_shape(target_ref)) {
    throw ShapeError("stage2_loss: paired shapes differ");
  }
  nn::NoGradGuard guard;
  return stage2_loss(Var(to_batch(pred)), Var(to_batch(target)), Var(to_batch(pred_ref)),
                     Var(to_batch(target_ref)), cfg)
      .values();
}

Var enhance(const Var& lowlight, const mfn::MfnParams& deg, const mfn::MfnParams& re) {
  const Var degradation = degradation::predict_degradation(lowlight, deg);
  return refine(degradation::base_enhance(lowlight, degradation), re);
}

ImageTensor enhance(const ImageTensor& lowlight, const mfn::MfnParams& deg,
                    const mfn::MfnParams& re) {
  if (lowlight.channels() != 3) throw ShapeError("enhance expects a 3-channel image");
  const auto padded = pad_to_multiple(lowlight, network_multiple(deg, re));
  nn::NoGradGuard guard;
  const Var out = enhance(Var(to_batch(padded.image)), deg, re);
  return crop(from_batch(out.value(), 0, Role::image), 0, 0, lowlight.height(),
              lowlight.width());
}

}  // namespace drgn::refinement
