#include "drgn/metrics/metrics.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>

#include "drgn/core/dataset.hpp"
#include "drgn/core/errors.hpp"
#include "drgn/nn/ops.hpp"

namespace drgn::metrics {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;
using nn::Var;

double psnr(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw ShapeError("psnr: image shapes differ");
  if (a.empty()) throw ShapeError("psnr of empty images");
  // Compensated long-double sum: a plain double accumulation drifts by an ulp
  // or more over a full image, enough to miss round values such as 20 dB.
  const auto va = a.values();
  const auto vb = b.values();
  long double sse = 0.0L;
  long double carry = 0.0L;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const long double d = static_cast<long double>(va[i]) - vb[i];
    const long double term = d * d;
    const long double t = sse + term;
    carry += std::fabs(sse) >= term ? (sse - t) + term : (term - t) + sse;
    sse = t;
  }
  sse += carry;
  if (sse == 0.0L) return std::numeric_limits<double>::infinity();
  return static_cast<double>(10.0L * std::log10(static_cast<long double>(va.size()) / sse));
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), db);
  return std::string(buf, res.ptr);
}

const Tensor& ssim_window() {
  static const Tensor window = [] {
    Tensor w(nn::Shape{kSsimWindow, kSsimWindow});
    const int r = kSsimWindow / 2;
    double total = 0.0;
    for (int y = 0; y < kSsimWindow; ++y) {
      for (int x = 0; x < kSsimWindow; ++x) {
        const double d2 = static_cast<double>((y - r) * (y - r) + (x - r) * (x - r));
        w[static_cast<std::size_t>(y * kSsimWindow + x)] =
            std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
        total += w[static_cast<std::size_t>(y * kSsimWindow + x)];
      }
    }
    for (auto& v : w.values()) v /= total;
    return w;
  }();
  return window;
}

Var ssim(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().ndim() != 4) {
    throw ShapeError("ssim: expects two NCHW tensors of equal shape");
  }
  if (a.dim(2) < kSsimWindow || a.dim(3) < kSsimWindow) {
    throw ShapeError("ssim: image " + std::to_string(a.dim(2)) + "x" +
                     std::to_string(a.dim(3)) + " is smaller than the 11x11 window");
  }
  const Tensor& w = ssim_window();
  auto blur = [&](const Var& x) { return nn::filter2d(x, w, 1, nn::Border::valid); };
  const Var x = nn::channel_mean(a);
  const Var y = nn::channel_mean(b);
  const Var mu_x = blur(x);
  const Var mu_y = blur(y);
  const Var mu_xx = nn::square(mu_x);
  const Var mu_yy = nn::square(mu_y);
  const Var mu_xy = nn::mul(mu_x, mu_y);
  const Var var_x = nn::sub(blur(nn::square(x)), mu_xx);
  const Var var_y = nn::sub(blur(nn::square(y)), mu_yy);
  const Var cov = nn::sub(blur(nn::mul(x, y)), mu_xy);
  const Var num = nn::mul(nn::add_scalar(nn::mul_scalar(mu_xy, 2.0), kSsimC1),
                          nn::add_scalar(nn::mul_scalar(cov, 2.0), kSsimC2));
  const Var den = nn::mul(nn::add_scalar(nn::add(mu_xx, mu_yy), kSsimC1),
                          nn::add_scalar(nn::add(var_x, var_y), kSsimC2));
  return nn::mean(nn::div(num, den));
}

double ssim_index(const ImageTensor& a, const ImageTensor& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim_index: image shapes differ");
  nn::NoGradGuard guard;
  return ssim(Var(to_batch(a)), Var(to_batch(b))).value().item();
}

void update_aggregate(MetricReport& report) {
  double sp = 0.0, ss = 0.0;
  for (const auto& s : report.per_image) {
    sp += s.psnr;
    ss += s.ssim;
  }
  const double n = static_cast<double>(report.per_image.size());
  report.mean_psnr = n > 0 ? sp / n : 0.0;
  report.mean_ssim = n > 0 ? ss / n : 0.0;
}

MetricReport evaluate_dirs(const fs::path& pred_dir, const fs::path& gt_dir) {
  const auto pairs = load_dataset(pred_dir, gt_dir);
  if (pairs.empty()) {
    throw EmptyDatasetError("no images to evaluate in " + pred_dir.string());
  }
  MetricReport report;
  report.pred_dir = pred_dir.string();
  report.gt_dir = gt_dir.string();
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &utc);
  report.timestamp = stamp;
  for (const auto& p : pairs) {
    report.per_image.push_back(
        ImageScore{p.id, psnr(p.lowlight, p.normal), ssim_index(p.lowlight, p.normal)});
  }
  update_aggregate(report);
  return report;
}

namespace {

json psnr_json(double db) {
  if (std::isinf(db)) return "inf";
  return db;
}

}  // namespace

json report_to_json(const MetricReport& report) {
  json per = json::array();
  for (const auto& s : report.per_image) {
    per.push_back({{"id", s.id}, {"psnr", psnr_json(s.psnr)}, {"ssim", s.ssim}});
  }
  return json{
      {"per_image", per},
      {"aggregate", {{"mean_psnr", psnr_json(report.mean_psnr)}, {"mean_ssim", report.mean_ssim}}},
      {"meta",
       {{"pred_dir", report.pred_dir}, {"gt_dir", report.gt_dir}, {"timestamp", report.timestamp}}},
  };
}

std::string report_to_csv(const MetricReport& report) {
  std::string out = "id,psnr,ssim\n";
  for (const auto& s : report.per_image) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), s.ssim);
    out += s.id + "," + format_psnr(s.psnr) + "," + std::string(buf, res.ptr) + "\n";
  }
  return out;
}

void write_report(const MetricReport& report, const fs::path& json_path) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  {
    std::ofstream out(json_path);
    if (!out) throw Error("cannot write " + json_path.string());
    out << report_to_json(report).dump(2) << "\n";
  }
  fs::path csv_path = json_path;
  csv_path.replace_extension(".csv");
  std::ofstream out(csv_path);
  if (!out) throw Error("cannot write " + csv_path.string());
  out << report_to_csv(report);
}

}  // namespace drgn::metrics
