#include "drgn/degradation/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "drgn/core/errors.hpp"
#include "drgn/nn/ops.hpp"

namespace drgn::degradation {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr int kDiscWidths[4] = {32, 64, 128, 256};

Var one_minus(const Var& x) { return nn::add_scalar(nn::mul_scalar(x, -1.0), 1.0); }

Var neg_log(const Var& x) { return nn::mul_scalar(nn::log_clamped(x, kLogFloor), -1.0); }

mfn::Conv disc_conv(std::mt19937_64& rng, int cin, int cout, int k) {
  Tensor w(Shape{cout, cin, k, k});
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
  for (auto& v : w.values()) v = dist(rng);
  return mfn::Conv{Var(std::move(w), true), Var(Tensor(Shape{cout}, 0.0), true)};
}

// Bin positions: value v lands at u = 64 v - 0.5, between centres floor(u)
// and floor(u) + 1, clamped to the first and last centre.
struct BinSplit {
  int lower;
  int upper;
  double upper_weight;
  bool saturated;
};

BinSplit split(double v) {
  const double raw = v * kHistogramBins - 0.5;
  const double u = std::clamp(raw, 0.0, static_cast<double>(kHistogramBins - 1));
  const int lower = std::min(static_cast<int>(u), kHistogramBins - 1);
  const int upper = std::min(lower + 1, kHistogramBins - 1);
  return BinSplit{lower, upper, u - lower, raw <= 0.0 || raw >= kHistogramBins - 1};
}

}  // namespace

DiscParams DiscParams::create(DiscRole role, std::uint64_t seed) {
  DiscParams d(role);
  std::mt19937_64 rng(seed);
  int cin = 3;
  for (int width : kDiscWidths) {
    d.layers.push_back(disc_conv(rng, cin, width, 3));
    cin = width;
  }
  d.head = disc_conv(rng, cin, 1, 1);
  return d;
}

std::vector<std::pair<std::string, Var>> DiscParams::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back("conv" + std::to_string(i) + ".weight", layers[i].weight);
    out.emplace_back("conv" + std::to_string(i) + ".bias", layers[i].bias);
  }
  out.emplace_back("head.weight", head.weight);
  out.emplace_back("head.bias", head.bias);
  return out;
}

NamedTensors DiscParams::state() const {
  NamedTensors out;
  for (const auto& [name, v] : named_parameters()) out.emplace(name, v.value());
  return out;
}

void DiscParams::load_state(const NamedTensors& tensors) {
  auto params = named_parameters();
  if (tensors.size() != params.size()) throw FormatError("discriminator tensor count mismatch");
  for (auto& [name, v] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end() || it->second.shape() != v.shape()) {
      throw FormatError("discriminator parameter " + name + " missing or misshapen");
    }
    v.mutable_value() = it->second;
  }
}

void DiscParams::set_requires_grad(bool on) {
  for (auto& [_, v] : named_parameters()) v.set_requires_grad(on);
}

Stage1Losses Stage1Terms::values() const {
  Stage1Losses out;
  out.adv_low = adv_low.value().item();
  out.adv_de = adv_de.value().item();
  out.kl = kl.defined() ? kl.value().item() : 0.0;
  out.total = total.value().item();
  return out;
}

Var predict_degradation(const Var& lowlight, const mfn::MfnParams& deg) {
  return mfn::mfn_forward(lowlight, deg);
}

DegradationMap predict_degradation(const ImageTensor& lowlight, const mfn::MfnParams& deg) {
  if (lowlight.channels() != 3) {
    throw ShapeError("predict_degradation expects a 3-channel image");
  }
  const auto padded = pad_to_multiple(lowlight, 1 << (deg.levels() - 1));
  ImageTensor field = mfn::mfn_forward(padded.image, deg);
  return DegradationMap(crop(field, 0, 0, lowlight.height(), lowlight.width()));
}

Var base_enhance(const Var& lowlight, const Var& degradation) {
  return nn::clamp(nn::sub(lowlight, degradation), 0.0, 1.0);
}

ImageTensor base_enhance(const ImageTensor& lowlight, const DegradationMap& degradation) {
  if (!lowlight.same_shape(degradation.field())) {
    throw ShapeError("base_enhance: image and degradation shapes differ");
  }
  ImageTensor out(lowlight.height(), lowlight.width(), lowlight.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = std::clamp(lowlight.values()[i] - degradation.field().values()[i], 0.0, 1.0);
  }
  return out;
}

Var compose_synthetic(const Var& reference, const Var& degradation) {
  return nn::clamp(nn::add(reference, degradation), 0.0, 1.0);
}

ImageTensor compose_synthetic(const ImageTensor& reference, const DegradationMap& degradation) {
  const ImageTensor field =
      degradation.height() == reference.height() && degradation.width() == reference.width()
          ? degradation.field()
          : resize_bilinear(degradation.field(), reference.height(), reference.width());
  if (field.channels() != reference.channels()) {
    throw ShapeError("compose_synthetic: channel mismatch");
  }
  ImageTensor out(reference.height(), reference.width(), reference.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values()[i] = std::clamp(reference.values()[i] + field.values()[i], 0.0, 1.0);
  }
  return out;
}

Var to_unit_range(const Var& degradation) {
  return nn::add_scalar(nn::mul_scalar(degradation, 0.5), 0.5);
}

Var discriminate(const Var& input, const DiscParams& d) {
  Var h = input;
  for (const auto& layer : d.layers) {
    h = nn::leaky_relu(nn::conv2d(h, layer.weight, layer.bias, 2, 1), 0.2);
  }
  h = nn::conv2d(h, d.head.weight, d.head.bias, 1, 0);
  return nn::sigmoid(nn::global_avg_pool(h));
}

double discriminate(const ImageTensor& input, const DiscParams& d) {
  nn::NoGradGuard guard;
  return discriminate(Var(to_batch(input)), d).value().item();
}

double adversarial_objective(double d_real, double d_fake) {
  return -std::log(std::max(d_real, kLogFloor)) - std::log(std::max(1.0 - d_fake, kLogFloor));
}

Var adversarial_objective(const Var& d_real, const Var& d_fake) {
  return nn::add(nn::mean(neg_log(d_real)), nn::mean(neg_log(one_minus(d_fake))));
}

Var adv_loss_low(const Var& lowlight, const Var& synthetic_lowlight, const DiscParams& d_low) {
  return adversarial_objective(discriminate(lowlight, d_low),
                               discriminate(synthetic_lowlight, d_low));
}

Var adv_loss_de(const Var& degradation, const Var& degradation_ref, const DiscParams& d_de) {
  return adversarial_objective(discriminate(to_unit_range(degradation), d_de),
                               discriminate(to_unit_range(degradation_ref), d_de));
}

Var generator_loss_low(const Var& synthetic_lowlight, const DiscParams& d_low) {
  return nn::mean(neg_log(discriminate(synthetic_lowlight, d_low)));
}

Var generator_loss_de(const Var& degradation, const Var& degradation_ref, const DiscParams& d_de) {
  return adversarial_objective(discriminate(to_unit_range(degradation_ref), d_de),
                               discriminate(to_unit_range(degradation), d_de));
}

std::vector<double> soft_histogram(std::span<const double> values) {
  if (values.empty()) throw ShapeError("soft_histogram of an empty tensor");
  std::vector<double> counts(kHistogramBins, 0.0);
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("soft_histogram: non-finite input");
    const auto s = split(v);
    counts[static_cast<std::size_t>(s.lower)] += 1.0 - s.upper_weight;
    counts[static_cast<std::size_t>(s.upper)] += s.upper_weight;
  }
  const double n = static_cast<double>(values.size());
  const double norm = 1.0 + kHistogramBins * kHistogramSmoothing;
  for (auto& c : counts) c = (c / n + kHistogramSmoothing) / norm;
  return counts;
}

Var soft_histogram(const Var& x, int groups) {
  const std::size_t total = x.value().size();
  if (groups < 1 || total == 0 || total % static_cast<std::size_t>(groups) != 0) {
    throw ShapeError("soft_histogram: " + std::to_string(total) +
                     " values cannot be split into " + std::to_string(groups) + " groups");
  }
  const std::size_t per_group = total / static_cast<std::size_t>(groups);
  Tensor out(Shape{groups, kHistogramBins});
  for (int g = 0; g < groups; ++g) {
    auto row = soft_histogram(
        std::span<const double>(x.value().data() + static_cast<std::size_t>(g) * per_group, per_group));
    std::copy(row.begin(), row.end(), out.data() + static_cast<std::size_t>(g) * kHistogramBins);
  }
  auto xn = x.node();
  return make_result(std::move(out), {x}, [xn, per_group](const nn::Node& self) {
    const double scale =
        1.0 / (static_cast<double>(per_group) * (1.0 + kHistogramBins * kHistogramSmoothing));
    Tensor g(xn->value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto s = split(xn->value[i]);
      if (s.saturated || s.lower == s.upper) continue;
      const double* grow = self.grad.data() + (i / per_group) * kHistogramBins;
      // d(upper_weight)/dv = 64 while unsaturated.
      g[i] = scale * kHistogramBins * (grow[s.upper] - grow[s.lower]);
    }
    accumulate_grad(*xn, g);
  });
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw DistributionError("kl_div: distributions differ in length");
  }
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(q[i] > 0.0)) {
      throw DistributionError("kl_div: entries must be strictly positive");
    }
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
    throw DistributionError("kl_div: inputs must sum to 1");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

Var kl_div(const Var& p, const Var& q) {
  if (p.shape() != q.shape() || p.value().ndim() != 2) {
    throw ShapeError("kl_div: expects two [G,bins] tensors of equal shape");
  }
  const Var log_ratio =
      nn::sub(nn::log_clamped(p, 1e-300), nn::log_clamped(q, 1e-300));
  return nn::mul_scalar(nn::sum(nn::mul(p, log_ratio)), 1.0 / p.dim(0));
}

double compose_stage1_total(double adv_low, double adv_de, double kl, double alpha) {
  return alpha * (adv_low + adv_de) + kl;
}

Stage1Terms stage1_loss(const Var& lowlight, const Var& synthetic_lowlight,
                        const Var& degradation, const Var& degradation_ref,
                        const DiscParams& d_low, const DiscParams& d_de, double alpha,
                        bool use_kl) {
  Stage1Terms t;
  t.adv_low = adv_loss_low(lowlight, synthetic_lowlight, d_low);
  t.adv_de = adv_loss_de(degradation, degradation_ref, d_de);
  t.total = nn::mul_scalar(nn::add(t.adv_low, t.adv_de), alpha);
  if (use_kl) {
    const int batch = degradation.dim(0);
    t.kl = kl_div(soft_histogram(to_unit_range(degradation), batch),
                  soft_histogram(to_unit_range(degradation_ref), batch));
    t.total = nn::add(t.total, t.kl);
  }
  return t;
}

Var discriminator_loss(const Var& real, const Var& fake, const DiscParams& d) {
  return adversarial_objective(discriminate(real.detach(), d), discriminate(fake.detach(), d));
}

std::size_t augmentation_source(std::size_t pair_count, std::uint64_t seed, std::size_t index) {
  std::mt19937_64 rng(seed + index);
  std::uniform_int_distribution<std::size_t> pick(0, pair_count - 1);
  return pick(rng);
}

std::vector<SyntheticPair> augment_dataset(std::span<const SamplePair> pairs,
                                           std::span<const ImageTensor> refs,
                                           const mfn::MfnParams& deg, std::uint64_t seed) {
  if (refs.empty()) throw EmptyReferenceError("augment_dataset: no reference images");
  if (pairs.empty()) throw EmptyDatasetError("augment_dataset: no low-light sources");
  std::vector<SyntheticPair> out;
  out.reserve(refs.size());
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const auto& source = pairs[augmentation_source(pairs.size(), seed, k)];
    const DegradationMap map = predict_degradation(source.lowlight, deg);
    out.push_back(SyntheticPair{refs[k], compose_synthetic(refs[k], map), source.id});
  }
  return out;
}

}  // namespace drgn::degradation
