#include "drgn/mfn/mfn.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "drgn/core/errors.hpp"
#include "drgn/nn/ops.hpp"

namespace drgn::mfn {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

std::size_t conv_count(int cin, int cout, int k) {
  return static_cast<std::size_t>(cout) * cin * k * k + static_cast<std::size_t>(cout);
}

// Creates parameters in a fixed order so a seed fully determines the weights.
class Builder {
 public:
  Builder(std::uint64_t seed, bool zero) : rng_(seed), zero_(zero) {}

  Conv conv(int cin, int cout, int k, double gain = 1.0) {
    return make({cout, cin, k, k}, cout, gain / std::sqrt(static_cast<double>(cin * k * k)));
  }
  Conv transposed(int cin, int cout, int k, int stride) {
    const double fan_in = static_cast<double>(cin * k * k) / (stride * stride);
    return make({cin, cout, k, k}, cout, 1.0 / std::sqrt(fan_in));
  }
  Conv attention(int cin, int cout) { return make({cout, cin, 1, 1}, cout, 0.01); }

 private:
  Conv make(Shape shape, int bias, double stddev) {
    Tensor w(std::move(shape), 0.0);
    if (!zero_) {
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& v : w.values()) v = dist(rng_);
    }
    return Conv{Var(std::move(w), true), Var(Tensor(Shape{bias}, 0.0), true)};
  }

  std::mt19937_64 rng_;
  bool zero_;
};

MfnParams build(const Architecture& arch, Builder& b, MfnParams params) {
  const int c = arch.channels;
  const int n = arch.levels;
  for (int i = 0; i < n; ++i) {
    BranchParams br;
    br.initial = b.conv(3, c, 3);
    if (arch.multi_scale && i > 0) {
      for (int j = 0; j < i; ++j) {
        std::vector<Conv> path;
        for (int s = 0; s < i - j; ++s) path.push_back(b.conv(c, c, 3));
        br.down_paths.push_back(std::move(path));
      }
      br.msr_fuse = b.conv((i + 1) * c, c, 1);
    }
    const int k = arch.kernels[static_cast<std::size_t>(i)];
    for (int r = 0; r < arch.rcabs[static_cast<std::size_t>(i)]; ++r) {
      RcabParams rcab;
      rcab.conv1 = b.conv(c, c, k);
      rcab.conv2 = b.conv(c, c, k);
      rcab.attention_down = b.attention(c, arch.attention_channels());
      rcab.attention_up = b.attention(arch.attention_channels(), c);
      br.rcabs.push_back(std::move(rcab));
    }
    br.long_fuse = b.conv(2 * c, c, 1);
    for (int s = 0; s < i; ++s) br.upsamplers.push_back(b.transposed(c, c, 4, 2));
    params.branches.push_back(std::move(br));
  }
  params.fusion = b.conv(n * c, c, 1);
  // Small head so residual instances start close to the identity.
  params.reconstruction = b.conv(c, 3, 3, 0.1);
  return params;
}

void push(std::vector<std::pair<std::string, Var>>& out, const std::string& name,
          const Conv& conv) {
  if (!conv.weight.defined()) return;
  out.emplace_back(name + ".weight", conv.weight);
  out.emplace_back(name + ".bias", conv.bias);
}

Var apply(const Var& x, const Conv& conv, int stride = 1) {
  const int k = conv.weight.dim(2);
  return nn::conv2d(x, conv.weight, conv.bias, stride, stride == 1 ? k / 2 : 1);
}

}  // namespace

Architecture Architecture::from_config(const RunConfig& cfg) {
  Architecture full;
  full.levels = cfg.pyramid_levels;
  full.channels = cfg.base_channels;
  full.rcabs = cfg.rcabs_per_branch;
  full.kernels = cfg.rcab_depth;
  full.multi_scale = true;
  if (cfg.ablation.msr) return full;
  return single_scale_equivalent(full);
}

std::size_t parameter_count(const Architecture& arch) {
  const int c = arch.channels;
  const int cr = arch.attention_channels();
  std::size_t total = 0;
  for (int i = 0; i < arch.levels; ++i) {
    total += conv_count(3, c, 3);
    if (arch.multi_scale && i > 0) {
      total += static_cast<std::size_t>(i * (i + 1) / 2) * conv_count(c, c, 3);
      total += conv_count((i + 1) * c, c, 1);
    }
    const int k = arch.kernels[static_cast<std::size_t>(i)];
    total += static_cast<std::size_t>(arch.rcabs[static_cast<std::size_t>(i)]) *
             (2 * conv_count(c, c, k) + conv_count(c, cr, 1) + conv_count(cr, c, 1));
    total += conv_count(2 * c, c, 1);
    total += static_cast<std::size_t>(i) * conv_count(c, c, 4);
  }
  total += conv_count(arch.levels * c, c, 1);
  total += conv_count(c, 3, 3);
  return total;
}

Architecture single_scale_equivalent(const Architecture& full) {
  Architecture multi = full;
  multi.multi_scale = true;
  const std::size_t target = parameter_count(multi);
  Architecture single;
  single.levels = 1;
  single.channels = full.channels;
  single.kernels = {full.kernels.front()};
  single.multi_scale = false;
  single.rcabs = {0};
  std::size_t best_diff = std::numeric_limits<std::size_t>::max();
  int best = 0;
  for (int r = 0;; ++r) {
    single.rcabs = {r};
    const std::size_t count = parameter_count(single);
    const std::size_t diff = count > target ? count - target : target - count;
    if (diff < best_diff) {
      best_diff = diff;
      best = r;
    }
    if (count > target) break;
  }
  single.rcabs = {best};
  return single;
}

MfnParams MfnParams::create(const Architecture& arch, OutputMode mode,
                            HeadRange head, std::uint64_t seed) {
  Builder b(seed, false);
  return build(arch, b, MfnParams(arch, mode, head));
}

MfnParams MfnParams::zeros(const Architecture& arch, OutputMode mode, HeadRange head) {
  Builder b(0, true);
  return build(arch, b, MfnParams(arch, mode, head));
}

MfnParams MfnParams::clone() const {
  MfnParams copy = zeros(arch_, mode_, head_);
  copy.load_state(state());
  return copy;
}

std::vector<std::pair<std::string, Var>> MfnParams::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& br = branches[i];
    const std::string p = "branch" + std::to_string(i);
    push(out, p + ".initial", br.initial);
    for (std::size_t j = 0; j < br.down_paths.size(); ++j)
      for (std::size_t s = 0; s < br.down_paths[j].size(); ++s)
        push(out, p + ".msr.from" + std::to_string(j) + ".down" + std::to_string(s),
             br.down_paths[j][s]);
    push(out, p + ".msr.fuse", br.msr_fuse);
    for (std::size_t r = 0; r < br.rcabs.size(); ++r) {
      const std::string q = p + ".rcab" + std::to_string(r);
      push(out, q + ".conv1", br.rcabs[r].conv1);
      push(out, q + ".conv2", br.rcabs[r].conv2);
      push(out, q + ".attention_down", br.rcabs[r].attention_down);
      push(out, q + ".attention_up", br.rcabs[r].attention_up);
    }
    push(out, p + ".long_fuse", br.long_fuse);
    for (std::size_t s = 0; s < br.upsamplers.size(); ++s)
      push(out, p + ".up" + std::to_string(s), br.upsamplers[s]);
  }
  push(out, "fusion", fusion);
  push(out, "reconstruction", reconstruction);
  return out;
}

std::size_t MfnParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : named_parameters()) n += v.value().size();
  return n;
}

NamedTensors MfnParams::state() const {
  NamedTensors out;
  for (const auto& [name, v] : named_parameters()) out.emplace(name, v.value());
  return out;
}

void MfnParams::load_state(const NamedTensors& tensors) {
  auto params = named_parameters();
  if (tensors.size() != params.size()) {
    throw FormatError("parameter set has " + std::to_string(tensors.size()) +
                      " tensors, network expects " + std::to_string(params.size()));
  }
  for (auto& [name, v] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("missing parameter " + name);
    if (it->second.shape() != v.shape()) {
      throw FormatError("parameter " + name + " has shape " +
                        nn::to_string(it->second.shape()) + ", expected " +
                        nn::to_string(v.shape()));
    }
    v.mutable_value() = it->second;
  }
}

void MfnParams::set_requires_grad(bool on) {
  for (auto& [_, v] : named_parameters()) v.set_requires_grad(on);
}

bool MfnParams::all_finite() const {
  for (const auto& [_, v] : named_parameters()) {
    if (!v.value().all_finite()) return false;
  }
  return true;
}

const Tensor& gaussian_kernel() {
  static const Tensor kernel = [] {
    Tensor k(Shape{5, 5});
    double taps[5];
    double total = 0.0;
    for (int i = 0; i < 5; ++i) {
      taps[i] = std::exp(-0.5 * (i - 2) * (i - 2));
      total += taps[i];
    }
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x)
        k[static_cast<std::size_t>(y * 5 + x)] = taps[y] * taps[x] / (total * total);
    return k;
  }();
  return kernel;
}

Var gaussian_blur(const Var& x) {
  return nn::filter2d(x, gaussian_kernel(), 1, nn::Border::reflect);
}

Var gaussian_downsample(const Var& x) {
  if (x.value().ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("gaussian_downsample needs even sides, got " + nn::to_string(x.shape()));
  }
  return nn::filter2d(x, gaussian_kernel(), 2, nn::Border::reflect);
}

ImageTensor gaussian_downsample(const ImageTensor& img) {
  nn::NoGradGuard guard;
  return from_batch(gaussian_downsample(Var(to_batch(img))).value(), 0, img.role());
}

std::vector<Var> build_pyramid(const Var& x, int levels) {
  if (levels < 1) throw ShapeError("pyramid needs at least one level");
  const int m = 1 << (levels - 1);
  if (x.value().ndim() != 4 || x.dim(2) % m != 0 || x.dim(3) % m != 0) {
    throw ShapeError("input " + nn::to_string(x.shape()) + " not divisible by " +
                     std::to_string(m) + " for a " + std::to_string(levels) +
                     "-level pyramid");
  }
  std::vector<Var> out{x};
  for (int i = 1; i < levels; ++i) out.push_back(gaussian_downsample(out.back()));
  return out;
}

std::vector<ImageTensor> build_pyramid(const ImageTensor& img, int levels) {
  nn::NoGradGuard guard;
  std::vector<ImageTensor> out;
  for (const auto& level : build_pyramid(Var(to_batch(img)), levels)) {
    out.push_back(from_batch(level.value(), 0, img.role()));
  }
  return out;
}

Var initial_features(const Var& level_image, const BranchParams& branch) {
  if (level_image.value().ndim() != 4 || level_image.dim(1) != 3) {
    throw ShapeError("initial_features expects a 3-channel image batch, got " +
                     nn::to_string(level_image.shape()));
  }
  return apply(level_image, branch.initial);
}

Var msr_fuse(const Var& f_ini, const std::vector<Var>& finer,
             const BranchParams& branch, bool enabled) {
  if (!enabled || finer.empty()) return f_ini;
  if (finer.size() != branch.down_paths.size()) {
    throw ShapeError("msr_fuse: branch expects " + std::to_string(branch.down_paths.size()) +
                     " finer inputs, got " + std::to_string(finer.size()));
  }
  std::vector<Var> parts{f_ini};
  for (std::size_t j = 0; j < finer.size(); ++j) {
    Var f = finer[j];
    for (const auto& conv : branch.down_paths[j]) f = apply(f, conv, 2);
    if (f.dim(2) != f_ini.dim(2) || f.dim(3) != f_ini.dim(3)) {
      throw ShapeError("msr_fuse: strided features " + nn::to_string(f.shape()) +
                       " do not reach " + nn::to_string(f_ini.shape()));
    }
    parts.push_back(f);
  }
  return apply(nn::concat_channels(parts), branch.msr_fuse);
}

namespace {

Var rcab_body(const Var& f, const RcabParams& rcab) {
  return apply(nn::relu(apply(f, rcab.conv1)), rcab.conv2);
}

Var channel_gate(const Var& h, const RcabParams& rcab) {
  Var squeeze = nn::relu(apply(nn::global_avg_pool(h), rcab.attention_down));
  return nn::sigmoid(apply(squeeze, rcab.attention_up));
}

}  // namespace

Var rcab_attention(const Var& f, const RcabParams& rcab) {
  return channel_gate(rcab_body(f, rcab), rcab);
}

Var rcab_forward(const Var& f, const RcabParams& rcab) {
  Var h = rcab_body(f, rcab);
  return nn::add(f, nn::scale_channels(h, channel_gate(h, rcab)));
}

Var residual_group(const Var& f_msr, const BranchParams& branch) {
  Var h = f_msr;
  for (const auto& rcab : branch.rcabs) h = rcab_forward(h, rcab);
  return apply(nn::concat_channels({h, f_msr}), branch.long_fuse);
}

Var upsample_fuse(const std::vector<Var>& f_long, const MfnParams& params) {
  if (static_cast<int>(f_long.size()) != params.levels()) {
    throw ShapeError("upsample_fuse: expected " + std::to_string(params.levels()) +
                     " levels, got " + std::to_string(f_long.size()));
  }
  std::vector<Var> parts{f_long[0]};
  for (std::size_t j = 1; j < f_long.size(); ++j) {
    Var f = f_long[j];
    for (const auto& up : params.branches[j].upsamplers) {
      f = nn::conv_transpose2d(f, up.weight, up.bias, 2, 1);
    }
    if (f.dim(2) != f_long[0].dim(2) || f.dim(3) != f_long[0].dim(3)) {
      throw ShapeError("upsample_fuse: level " + std::to_string(j) + " reached " +
                       nn::to_string(f.shape()) + ", expected " +
                       nn::to_string(f_long[0].shape()));
    }
    parts.push_back(f);
  }
  return apply(nn::concat_channels(parts), params.fusion);
}

Var mfn_forward(const Var& image, const MfnParams& params) {
  const auto pyramid = build_pyramid(image, params.levels());
  const bool multi_scale = params.architecture().multi_scale;
  std::vector<Var> ini;
  std::vector<Var> f_long;
  for (int i = 0; i < params.levels(); ++i) {
    const auto& br = params.branches[static_cast<std::size_t>(i)];
    ini.push_back(initial_features(pyramid[static_cast<std::size_t>(i)], br));
    std::vector<Var> finer(ini.begin(), ini.begin() + i);
    Var f_msr = msr_fuse(ini.back(), finer, br, multi_scale);
    f_long.push_back(residual_group(f_msr, br));
  }
  Var fused = upsample_fuse(f_long, params);
  Var out = apply(fused, params.reconstruction);
  if (params.output_mode() == OutputMode::residual) out = nn::add(image, out);
  return params.head_range() == HeadRange::tanh ? nn::tanh(out)
                                                : nn::clamp(out, 0.0, 1.0);
}

ImageTensor mfn_forward(const ImageTensor& image, const MfnParams& params) {
  nn::NoGradGuard guard;
  Var out = mfn_forward(Var(to_batch(image)), params);
  return from_batch(out.value(), 0,
                    params.head_range() == HeadRange::tanh ? Role::feature : Role::image);
}

}  // namespace drgn::mfn
