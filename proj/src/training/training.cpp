#include "drgn/training/training.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "drgn/core/errors.hpp"
#include "drgn/degradation/degradation.hpp"
#include "drgn/nn/ops.hpp"
#include "drgn/refinement/refinement.hpp"

namespace drgn::training {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;
using nn::Var;

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<GridCell> patch_grid(int height, int width, int size) {
  if (size <= 0) throw ShapeError("patch size must be positive");
  const int rows = std::max(1, height / size);
  const int cols = std::max(1, width / size);
  std::vector<GridCell> cells;
  cells.reserve(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) cells.push_back(GridCell{r * size, c * size});
  }
  return cells;
}

ImageTensor crop_cell(const ImageTensor& image, int size, GridCell cell) {
  if (image.height() < size || image.width() < size) {
    return crop(pad_to_multiple(image, size).image, cell.top, cell.left, size, size);
  }
  return crop(image, cell.top, cell.left, size, size);
}

CropPair crop_cell(const SamplePair& pair, int size, GridCell cell) {
  return CropPair{crop_cell(pair.lowlight, size, cell), crop_cell(pair.normal, size, cell)};
}

namespace {

GridCell draw_cell(int height, int width, int size, Rng& rng) {
  const auto cells = patch_grid(height, width, size);
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
  return cells[pick(rng)];
}

}  // namespace

CropPair sample_patches(const SamplePair& pair, int size, Rng& rng) {
  if (!pair.lowlight.same_shape(pair.normal)) {
    throw ShapeError("pair " + pair.id + " has mismatched image sizes");
  }
  return crop_cell(pair, size, draw_cell(pair.lowlight.height(), pair.lowlight.width(), size, rng));
}

ImageTensor sample_patch(const ImageTensor& image, int size, Rng& rng) {
  return crop_cell(image, size, draw_cell(image.height(), image.width(), size, rng));
}

GeometricTransform draw_transform(Rng& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> scale(0, 2);
  GeometricTransform t;
  t.flip = coin(rng) == 1;
  t.scale = kScaleChoices[scale(rng)];
  return t;
}

ImageTensor apply_transform(const ImageTensor& image, const GeometricTransform& t) {
  ImageTensor out = image;
  if (t.scale != 1.0) {
    const int h = std::max(1, static_cast<int>(std::lround(image.height() * t.scale)));
    const int w = std::max(1, static_cast<int>(std::lround(image.width() * t.scale)));
    out = resize_bilinear(resize_bilinear(out, h, w), image.height(), image.width());
  }
  if (t.flip) out = flip_horizontal(out);
  return out;
}

CropPair augment_geometric(const CropPair& crops, Rng& rng) {
  const auto t = draw_transform(rng);
  return CropPair{apply_transform(crops.low, t), apply_transform(crops.normal, t)};
}

double lr_schedule(std::int64_t step, const RunConfig& cfg) {
  if (step < 0) throw Error("lr_schedule: negative step");
  const double k = static_cast<double>(step / cfg.lr_decay_steps);
  // Keep 15 significant digits so decimal schedules land on the nearest double
  // instead of accumulating one-ulp drift (5e-4 * 0.9 != 4.5e-4 in binary).
  const double raw = cfg.lr0 * std::pow(cfg.lr_decay, k);
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), raw, std::chars_format::general, 15);
  double lr = raw;
  std::from_chars(buf, res.ptr, lr);
  return lr;
}

void adam_step(const ParamList& params, AdamState& state, double lr) {
  for (const auto& [name, p] : params) {
    if (p.has_grad() && !p.grad().all_finite()) {
      throw GradientError("non-finite gradient for parameter " + name);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (const auto& [name, p] : params) {
    Var param = p;
    Tensor& w = param.mutable_value();
    auto [mit, m_new] = state.m.try_emplace(name, w.shape(), 0.0);
    auto [vit, v_new] = state.v.try_emplace(name, w.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape() != w.shape() || v.shape() != w.shape()) {
      throw ShapeError("optimizer state for " + name + " does not match the parameter");
    }
    const bool has = param.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? param.grad()[i] : 0.0;
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g * g;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
    param.zero_grad();
  }
}

TrainLog::TrainLog(const fs::path& csv_path) {
  const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  file_.open(csv_path, std::ios::app);
  if (!file_) throw Error("cannot open " + csv_path.string());
  if (fresh) file_ << "step,stage,term,value\n";
}

void TrainLog::add(std::int64_t step, int stage, const std::string& term, double value) {
  rows_.push_back(LogRow{step, stage, term, value});
  if (file_.is_open()) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    file_ << step << ',' << stage << ',' << term << ',' << std::string_view(buf, res.ptr - buf)
          << '\n';
    file_.flush();
  }
}

mfn::MfnParams make_deg(const RunConfig& cfg) {
  return mfn::MfnParams::create(mfn::Architecture::from_config(cfg), mfn::OutputMode::direct,
                                mfn::HeadRange::tanh, derive_seed(cfg.seed, {1}));
}

mfn::MfnParams make_reg(const RunConfig& cfg) {
  return mfn::MfnParams::create(mfn::Architecture::from_config(cfg), mfn::OutputMode::residual,
                                mfn::HeadRange::unit_clamp, derive_seed(cfg.seed, {2}));
}

mfn::MfnParams load_deg(const Checkpoint& ck) {
  if (!ck.deg_params) throw FormatError("checkpoint has no degradation generator");
  auto deg = make_deg(ck.config);
  deg.load_state(*ck.deg_params);
  return deg;
}

mfn::MfnParams load_reg(const Checkpoint& ck) {
  if (!ck.re_params) throw FormatError("checkpoint has no refinement generator");
  auto re = make_reg(ck.config);
  re.load_state(*ck.re_params);
  return re;
}

namespace {

struct CellRef {
  std::size_t pair = 0;
  GridCell cell;
};

std::vector<CellRef> enumerate_cells(const std::vector<SamplePair>& pairs, int size) {
  std::vector<CellRef> out;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (const auto& c : patch_grid(pairs[p].lowlight.height(), pairs[p].lowlight.width(), size)) {
      out.push_back(CellRef{p, c});
    }
  }
  return out;
}

struct Batch {
  Var low;
  Var normal;
  Var ref;  // undefined without references
};

// One epoch-independent batch recipe: every item's crop, transform and
// reference draw come from an rng seeded by (stage, epoch, batch index).
Batch make_batch(const std::vector<SamplePair>& s, const std::vector<ImageTensor>& r,
                 std::span<const CellRef> cells, int size, Rng& rng) {
  std::vector<ImageTensor> lows, normals, refs;
  for (const auto& c : cells) {
    auto crops = augment_geometric(crop_cell(s[c.pair], size, c.cell), rng);
    lows.push_back(std::move(crops.low));
    normals.push_back(std::move(crops.normal));
    if (!r.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, r.size() - 1);
      const auto& img = r[pick(rng)];
      refs.push_back(apply_transform(sample_patch(img, size, rng), draw_transform(rng)));
    }
  }
  Batch b{Var(to_batch(lows)), Var(to_batch(normals)), Var()};
  if (!refs.empty()) b.ref = Var(to_batch(refs));
  return b;
}

void store_optimizer(Checkpoint& ck, const std::string& name, const AdamState& st) {
  for (const auto& [p, t] : st.m) ck.optimizer_tensors.emplace(name + "/m/" + p, t);
  for (const auto& [p, t] : st.v) ck.optimizer_tensors.emplace(name + "/v/" + p, t);
  ck.optimizer_meta["optimizers"][name] = {{"t", st.t}};
}

void store_state(Checkpoint& ck, const TrainState& st) {
  ck.step = st.global_step;
  ck.optimizer_meta["global_step"] = st.global_step;
  ck.optimizer_meta["epoch"] = st.epoch;
  ck.optimizer_meta["lr"] = st.current_lr;
  for (const auto& [name, opt] : st.optimizers) store_optimizer(ck, name, opt);
}

void write_if(const TrainOptions& options, const Checkpoint& ck, const std::string& file) {
  if (options.out_dir.empty()) return;
  fs::create_directories(options.out_dir);
  save_checkpoint(ck, options.out_dir / file);
}

bool periodic(const RunConfig& cfg, std::int64_t step) {
  return cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0;
}

void log_term(const TrainOptions& options, std::int64_t step, int stage, const char* term,
              const Var& v) {
  if (options.log && v.defined()) options.log->add(step, stage, term, v.value().item());
}

Checkpoint stage1_checkpoint(const RunConfig& cfg, const mfn::MfnParams& deg,
                             const degradation::DiscParams* d_low,
                             const degradation::DiscParams* d_de, const TrainState& st) {
  Checkpoint ck;
  ck.stage = 1;
  ck.config = cfg;
  ck.config_digest = config_digest(cfg);
  ck.deg_params = deg.state();
  if (d_low) ck.disc_low = d_low->state();
  if (d_de) ck.disc_de = d_de->state();
  store_state(ck, st);
  return ck;
}

Checkpoint stage2_checkpoint(const RunConfig& cfg, const mfn::MfnParams& deg,
                             const mfn::MfnParams& re, const TrainState& st) {
  Checkpoint ck;
  ck.stage = 2;
  ck.config = cfg;
  ck.config_digest = config_digest(cfg);
  ck.deg_params = deg.state();
  ck.re_params = re.state();
  store_state(ck, st);
  return ck;
}

std::vector<CellRef> shuffled(std::vector<CellRef> cells, std::uint64_t seed) {
  Rng rng(seed);
  std::shuffle(cells.begin(), cells.end(), rng);
  return cells;
}

}  // namespace

Checkpoint train_stage1(const RunConfig& cfg, const std::vector<SamplePair>& dataset_s,
                        const std::vector<ImageTensor>& dataset_r, const TrainOptions& options) {
  namespace dg = degradation;
  cfg.validate();
  if (dataset_s.empty()) throw EmptyDatasetError("stage 1: no training pairs");
  auto deg = make_deg(cfg);
  TrainState st;
  st.stage = 1;
  st.current_lr = lr_schedule(0, cfg);

  if (!cfg.ablation.dl_da) {
    auto ck = stage1_checkpoint(cfg, deg, nullptr, nullptr, st);
    write_if(options, ck, "stage1.ckpt");
    return ck;
  }
  if (dataset_r.empty()) throw EmptyReferenceError("stage 1: no reference images");

  auto d_low = dg::DiscParams::create(dg::DiscRole::low, derive_seed(cfg.seed, {3}));
  auto d_de = dg::DiscParams::create(dg::DiscRole::de, derive_seed(cfg.seed, {4}));
  const auto deg_params = deg.named_parameters();
  const auto low_params = d_low.named_parameters();
  const auto de_params = d_de.named_parameters();
  auto& opt_deg = st.optimizers["deg"];
  auto& opt_low = st.optimizers["disc_low"];
  auto& opt_de = st.optimizers["disc_de"];

  const auto cells = enumerate_cells(dataset_s, cfg.patch_size);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::int64_t steps = 0;
  for (int epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
    st.epoch = epoch;
    const auto order = shuffled(cells, derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t start = 0, bi = 0; start < order.size(); start += batch, ++bi) {
      if (options.max_steps > 0 && steps >= options.max_steps) break;
      Rng rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch), bi}));
      const std::span<const CellRef> items(order.data() + start,
                                           std::min(batch, order.size() - start));
      const Batch b = make_batch(dataset_s, dataset_r, items, cfg.patch_size, rng);
      const double lr = lr_schedule(st.global_step, cfg);
      st.current_lr = lr;

      deg.set_requires_grad(true);
      const Var i_d = dg::predict_degradation(b.low, deg);
      const Var i_lref = dg::compose_synthetic(b.ref, i_d);
      const Var i_dref = dg::predict_degradation(i_lref, deg);

      // Discriminators first, on detached samples.
      d_low.set_requires_grad(true);
      d_de.set_requires_grad(true);
      nn::backward(nn::add(dg::discriminator_loss(b.low, i_lref, d_low),
                           dg::discriminator_loss(dg::to_unit_range(i_d),
                                                  dg::to_unit_range(i_dref), d_de)));
      adam_step(low_params, opt_low, lr);
      adam_step(de_params, opt_de, lr);
      d_low.set_requires_grad(false);
      d_de.set_requires_grad(false);

      // Generator: swapped-label adversarial terms plus the KL match.
      Var kl;
      if (cfg.ablation.kl) {
        const int n = i_d.dim(0);
        kl = dg::kl_div(dg::soft_histogram(dg::to_unit_range(i_d), n),
                        dg::soft_histogram(dg::to_unit_range(i_dref), n));
      }
      Var objective = nn::mul_scalar(nn::add(dg::generator_loss_low(i_lref, d_low),
                                             dg::generator_loss_de(i_d, i_dref, d_de)),
                                     cfg.alpha);
      if (kl.defined()) objective = nn::add(objective, kl);
      Var adv_low, adv_de;
      {
        nn::NoGradGuard guard;
        adv_low = dg::adv_loss_low(b.low, i_lref, d_low);
        adv_de = dg::adv_loss_de(i_d, i_dref, d_de);
      }
      nn::backward(objective);
      adam_step(deg_params, opt_deg, lr);

      ++st.global_step;
      ++steps;
      log_term(options, st.global_step, 1, "adv_low", adv_low);
      log_term(options, st.global_step, 1, "adv_de", adv_de);
      log_term(options, st.global_step, 1, "kl", kl);
      if (periodic(cfg, st.global_step)) {
        write_if(options, stage1_checkpoint(cfg, deg, &d_low, &d_de, st),
                 "stage1_step" + std::to_string(st.global_step) + ".ckpt");
      }
    }
  }
  deg.set_requires_grad(false);
  auto ck = stage1_checkpoint(cfg, deg, &d_low, &d_de, st);
  write_if(options, ck, "stage1.ckpt");
  return ck;
}

Checkpoint train_stage2(const RunConfig& cfg, const std::vector<SamplePair>& dataset_s,
                        const Checkpoint& stage1, const std::vector<ImageTensor>& dataset_r,
                        const TrainOptions& options) {
  namespace dg = degradation;
  cfg.validate();
  if (dataset_s.empty()) throw EmptyDatasetError("stage 2: no training pairs");
  if (architecture_digest(stage1.config) != architecture_digest(cfg)) {
    throw ConfigMismatchError("stage-1 checkpoint was trained with a different architecture");
  }
  const bool use_refs = cfg.ablation.dl_da;
  if (use_refs && dataset_r.empty()) throw EmptyReferenceError("stage 2: no reference images");

  auto deg = load_deg(stage1);
  auto re = make_reg(cfg);
  // Without DL-DA there is no stage-1 signal, so DeG learns through ReG's loss.
  const bool joint = !use_refs;
  deg.set_requires_grad(joint);
  re.set_requires_grad(true);
  const auto deg_params = deg.named_parameters();
  const auto re_params = re.named_parameters();

  TrainState st;
  st.stage = 2;
  st.global_step = stage1.step;
  st.current_lr = lr_schedule(st.global_step, cfg);
  auto& opt_re = st.optimizers["re"];
  if (joint) st.optimizers["deg"];

  const std::vector<ImageTensor> no_refs;
  const auto& refs = use_refs ? dataset_r : no_refs;
  const auto cells = enumerate_cells(dataset_s, cfg.patch_size);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::int64_t steps = 0;
  for (int epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
    st.epoch = epoch;
    const auto order = shuffled(cells, derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t start = 0, bi = 0; start < order.size(); start += batch, ++bi) {
      if (options.max_steps > 0 && steps >= options.max_steps) break;
      Rng rng(derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(epoch), bi}));
      const std::span<const CellRef> items(order.data() + start,
                                           std::min(batch, order.size() - start));
      const Batch b = make_batch(dataset_s, refs, items, cfg.patch_size, rng);
      const double lr = lr_schedule(st.global_step, cfg);
      st.current_lr = lr;

      Var i_b;
      Var i_bref;
      if (joint) {
        i_b = dg::base_enhance(b.low, dg::predict_degradation(b.low, deg));
      } else {
        nn::NoGradGuard guard;
        const Var i_d = dg::predict_degradation(b.low, deg);
        i_b = dg::base_enhance(b.low, i_d);
        // Fresh synthetic pair: the batch's own degradations on the references.
        const Var i_lref = dg::compose_synthetic(b.ref, i_d);
        i_bref = dg::base_enhance(i_lref, dg::predict_degradation(i_lref, deg));
      }
      const Var pred = refinement::refine(i_b, re);
      const Var pred_ref = i_bref.defined() ? refinement::refine(i_bref, re) : Var();
      const auto terms = refinement::stage2_loss(pred, b.normal, pred_ref, b.ref, cfg);
      nn::backward(terms.total);
      adam_step(re_params, opt_re, lr);
      if (joint) adam_step(deg_params, st.optimizers["deg"], lr);

      ++st.global_step;
      ++steps;
      log_term(options, st.global_step, 2, "con_img", terms.con_img);
      log_term(options, st.global_step, 2, "ssim_term", terms.ssim_term);
      if (periodic(cfg, st.global_step)) {
        write_if(options, stage2_checkpoint(cfg, deg, re, st),
                 "stage2_step" + std::to_string(st.global_step) + ".ckpt");
      }
    }
  }
  deg.set_requires_grad(false);
  re.set_requires_grad(false);
  auto ck = stage2_checkpoint(cfg, deg, re, st);
  write_if(options, ck, "stage2.ckpt");
  return ck;
}

Checkpoint train_all(const RunConfig& cfg, const TrainDirs& dirs, std::int64_t max_steps) {
  cfg.validate();
  const auto pairs = load_dataset(dirs.data);
  if (pairs.empty()) throw EmptyDatasetError("no training pairs under " + dirs.data.string());
  std::vector<ImageTensor> refs;
  if (cfg.ablation.dl_da) {
    if (dirs.refs.empty()) throw EmptyReferenceError("DL-DA needs a reference directory");
    for (auto& item : load_image_dir(dirs.refs)) refs.push_back(std::move(item.image));
    if (refs.empty()) throw EmptyReferenceError("no reference images in " + dirs.refs.string());
  }
  fs::create_directories(dirs.out);
  save_config(dirs.out / "config.json", cfg);
  TrainLog log(dirs.out / "train_log.csv");
  TrainOptions options{dirs.out, &log, max_steps};
  const auto stage1 = train_stage1(cfg, pairs, refs, options);
  return train_stage2(cfg, pairs, stage1, refs, options);
}

}  // namespace drgn::training
