#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "drgn/core/image.hpp"
#include "drgn/nn/autograd.hpp"

namespace drgn::metrics {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// 10 log10(1 / MSE) over all channels, peak 1.0. Identical images give +inf.
double psnr(const ImageTensor& a, const ImageTensor& b);
// "inf" for the identical-image sentinel, shortest round-trip decimal otherwise.
std::string format_psnr(double db);

// 11x11 Gaussian, sigma 1.5, unit sum.
const nn::Tensor& ssim_window();

// Mean local SSIM of the channel-mean luminance, windows without padding.
// Batches [B,C,H,W] reduce to the mean over samples. Differentiable in both.
nn::Var ssim(const nn::Var& a, const nn::Var& b);
double ssim_index(const ImageTensor& a, const ImageTensor& b);

struct ImageScore {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> per_image;  // sorted by id
  double mean_psnr = 0.0;             // +inf when any entry is inf
  double mean_ssim = 0.0;
  std::string pred_dir;
  std::string gt_dir;
  std::string timestamp;
};

// Pairs files by stem. PairingError names the first orphan; EmptyDatasetError
// when no pairs exist.
MetricReport evaluate_dirs(const std::filesystem::path& pred_dir,
                           const std::filesystem::path& gt_dir);

// Recomputes the aggregates from per_image.
void update_aggregate(MetricReport& report);

nlohmann::json report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);
// Writes the JSON report and a CSV with the same stem next to it.
void write_report(const MetricReport& report, const std::filesystem::path& json_path);

}  // namespace drgn::metrics
