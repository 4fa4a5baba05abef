#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "drgn/core/checkpoint.hpp"
#include "drgn/core/config.hpp"
#include "drgn/core/dataset.hpp"
#include "drgn/mfn/mfn.hpp"

namespace drgn::training {

using Rng = std::mt19937_64;

// Deterministic child seed for (seed, tags...).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

struct CropPair {
  ImageTensor low;
  ImageTensor normal;
};

struct GridCell {
  int top = 0;
  int left = 0;
};

// Non-overlapping size x size cells of an h x w image, row-major. Sides
// smaller than `size` count as one cell (the image is padded before cropping).
std::vector<GridCell> patch_grid(int height, int width, int size);

// Crops one cell from both images of a pair, padding first if needed.
CropPair crop_cell(const SamplePair& pair, int size, GridCell cell);
ImageTensor crop_cell(const ImageTensor& image, int size, GridCell cell);

// A uniformly drawn grid cell, cropped at the same place in both images.
CropPair sample_patches(const SamplePair& pair, int size, Rng& rng);
ImageTensor sample_patch(const ImageTensor& image, int size, Rng& rng);

inline constexpr double kScaleChoices[3] = {1.0, 0.8, 0.6};

struct GeometricTransform {
  bool flip = false;
  double scale = 1.0;
};

GeometricTransform draw_transform(Rng& rng);
// Downscale by `scale`, bilinear back to the original size, then flip.
ImageTensor apply_transform(const ImageTensor& image, const GeometricTransform& t);
// Draws one transform and applies it to both crops.
CropPair augment_geometric(const CropPair& crops, Rng& rng);

double lr_schedule(std::int64_t step, const RunConfig& cfg);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
  std::int64_t t = 0;
  NamedTensors m;
  NamedTensors v;
};

using ParamList = std::vector<std::pair<std::string, nn::Var>>;

// Bias-corrected Adam on every parameter's accumulated gradient (missing
// gradients count as zero). A non-finite gradient raises GradientError naming
// the parameter before anything is modified.
void adam_step(const ParamList& params, AdamState& state, double lr);

struct TrainState {
  int stage = 1;
  std::int64_t global_step = 0;
  int epoch = 0;
  double current_lr = 0.0;
  std::map<std::string, AdamState> optimizers;
};

struct LogRow {
  std::int64_t step = 0;
  int stage = 0;
  std::string term;
  double value = 0.0;
};

// Rows of train_log.csv (`step,stage,term,value`), kept in memory and
// appended to the file when one is given.
class TrainLog {
 public:
  TrainLog() = default;
  explicit TrainLog(const std::filesystem::path& csv_path);

  void add(std::int64_t step, int stage, const std::string& term, double value);
  const std::vector<LogRow>& rows() const { return rows_; }

 private:
  std::vector<LogRow> rows_;
  std::ofstream file_;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints written
  TrainLog* log = nullptr;
  std::int64_t max_steps = 0;     // per stage; 0 runs every epoch
};

mfn::MfnParams make_deg(const RunConfig& cfg);
mfn::MfnParams make_reg(const RunConfig& cfg);
// FormatError when the checkpoint lacks the group.
mfn::MfnParams load_deg(const Checkpoint& ck);
mfn::MfnParams load_reg(const Checkpoint& ck);

// Stage 1: per batch one discriminator update then one DeG update. With
// dl_da off nothing is trained and the checkpoint holds the initial DeG only.
Checkpoint train_stage1(const RunConfig& cfg, const std::vector<SamplePair>& dataset_s,
                        const std::vector<ImageTensor>& dataset_r,
                        const TrainOptions& options = {});

// Stage 2: ReG on (I_B, I) plus freshly synthesized reference pairs; DeG is
// frozen unless dl_da is off, in which case DeG and ReG train jointly.
// ConfigMismatchError when the stage-1 architecture differs from cfg.
Checkpoint train_stage2(const RunConfig& cfg, const std::vector<SamplePair>& dataset_s,
                        const Checkpoint& stage1, const std::vector<ImageTensor>& dataset_r,
                        const TrainOptions& options = {});

struct TrainDirs {
  std::filesystem::path data;  // holds low/ and high/
  std::filesystem::path refs;  // may be empty when dl_da is off
  std::filesystem::path out;
};

// Loads both datasets, runs both stages, writes stage1.ckpt, stage2.ckpt,
// train_log.csv and config.json into dirs.out.
Checkpoint train_all(const RunConfig& cfg, const TrainDirs& dirs, std::int64_t max_steps = 0);

}  // namespace drgn::training
