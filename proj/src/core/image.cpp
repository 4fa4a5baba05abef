#include "drgn/core/image.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "drgn/core/errors.hpp"
#include "drgn/nn/ops.hpp"

namespace drgn {

ImageTensor::ImageTensor(int height, int width, int channels, Role role, double fill)
    : height_(height), width_(width), channels_(channels), role_(role) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ShapeError("negative image dimension");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor::ImageTensor(int height, int width, int channels,
                         std::vector<double> data, Role role)
    : height_(height), width_(width), channels_(channels), role_(role),
      data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError("image data size does not match " + std::to_string(height) +
                     "x" + std::to_string(width) + "x" + std::to_string(channels));
  }
}

void ImageTensor::validate() const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw Error("image contains a non-finite value");
  }
  if (role_ == Role::image) {
    if (channels_ != 3) {
      throw ShapeError("image-role tensor must have 3 channels, got " +
                       std::to_string(channels_));
    }
    for (double v : data_) {
      if (v < 0.0 || v > 1.0) throw Error("image value outside [0,1]");
    }
  }
}

DegradationMap::DegradationMap(ImageTensor field) : field_(std::move(field)) {
  for (double v : field_.values()) {
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
      throw Error("degradation value outside [-1,1]");
    }
  }
}

PaddedImage pad_to_multiple(const ImageTensor& img, int m) {
  if (m < 1) throw Error("pad_to_multiple: m must be >= 1");
  const int h = img.height(), w = img.width(), c = img.channels();
  const int ph = (h + m - 1) / m * m;
  const int pw = (w + m - 1) / m * m;
  ImageTensor out(ph, pw, c, img.role());
  for (int y = 0; y < ph; ++y) {
    const int sy = nn::reflect_index(y, h);
    for (int x = 0; x < pw; ++x) {
      const int sx = nn::reflect_index(x, w);
      for (int k = 0; k < c; ++k) out.at(y, x, k) = img.at(sy, sx, k);
    }
  }
  return PaddedImage{std::move(out), h, w};
}

ImageTensor crop(const ImageTensor& img, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || height < 0 || width < 0 ||
      top + height > img.height() || left + width > img.width()) {
    throw ShapeError("crop window outside image");
  }
  ImageTensor out(height, width, img.channels(), img.role());
  const std::size_t row = static_cast<std::size_t>(width) * img.channels();
  for (int y = 0; y < height; ++y) {
    const double* src = img.data() + (static_cast<std::size_t>(top + y) * img.width() + left) * img.channels();
    std::copy(src, src + row, &out.at(y, 0, 0));
  }
  return out;
}

ImageTensor crop_to_original(const PaddedImage& padded) {
  return crop(padded.image, 0, 0, padded.original_height, padded.original_width);
}

ImageTensor resize_bilinear(const ImageTensor& img, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resize to empty image");
  if (height == img.height() && width == img.width()) return img;
  const int h = img.height(), w = img.width(), c = img.channels();
  ImageTensor out(height, width, c, img.role());
  const double sy = static_cast<double>(h) / height;
  const double sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (int k = 0; k < c; ++k) {
        const double top = img.at(y0, x0, k) * (1.0 - ax) + img.at(y0, x1, k) * ax;
        const double bot = img.at(y1, x0, k) * (1.0 - ax) + img.at(y1, x1, k) * ax;
        out.at(y, x, k) = top * (1.0 - ay) + bot * ay;
      }
    }
  }
  return out;
}

ImageTensor flip_horizontal(const ImageTensor& img) {
  ImageTensor out(img.height(), img.width(), img.channels(), img.role());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < img.channels(); ++k)
        out.at(y, img.width() - 1 - x, k) = img.at(y, x, k);
  return out;
}

nn::Tensor to_batch(std::span<const ImageTensor> images) {
  if (images.empty()) throw ShapeError("to_batch: no images");
  const int h = images[0].height(), w = images[0].width(), c = images[0].channels();
  const int n = static_cast<int>(images.size());
  nn::Tensor out(nn::Shape{n, c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const auto& img = images[static_cast<std::size_t>(b)];
    if (img.height() != h || img.width() != w || img.channels() != c) {
      throw ShapeError("to_batch: images differ in shape");
    }
    double* dst = out.data() + static_cast<std::size_t>(b) * c * plane;
    const double* src = img.data();
    for (std::size_t p = 0; p < plane; ++p)
      for (int k = 0; k < c; ++k) dst[k * plane + p] = src[p * c + k];
  }
  return out;
}

nn::Tensor to_batch(const ImageTensor& image) {
  return to_batch(std::span<const ImageTensor>(&image, 1));
}

ImageTensor from_batch(const nn::Tensor& batch, int b, Role role) {
  if (batch.ndim() != 4 || b < 0 || b >= batch.dim(0)) {
    throw ShapeError("from_batch: bad batch index or shape " + nn::to_string(batch.shape()));
  }
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ImageTensor out(h, w, c, role);
  const double* src = batch.data() + static_cast<std::size_t>(b) * c * plane;
  double* dst = out.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (int k = 0; k < c; ++k) dst[p * c + k] = src[k * plane + p];
  return out;
}

ImageTensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DecodeError("cannot decode image " + path.string());
  ImageTensor out(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<unsigned char>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(y, x, 0) = row[3 * x + 2] / 255.0;
      out.at(y, x, 1) = row[3 * x + 1] / 255.0;
      out.at(y, x, 2) = row[3 * x + 0] / 255.0;
    }
  }
  return out;
}

std::vector<unsigned char> quantize_8bit(const ImageTensor& img) {
  const int prev = std::fegetround();
  std::fesetround(FE_TONEAREST);
  std::vector<unsigned char> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.values()[i], 0.0, 1.0) * 255.0;
    out[i] = static_cast<unsigned char>(std::nearbyint(v));
  }
  std::fesetround(prev);
  return out;
}

void write_image(const std::filesystem::path& path, const ImageTensor& img) {
  if (img.channels() != 3) throw ShapeError("write_image expects 3 channels");
  const auto bytes = quantize_8bit(img);
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<unsigned char>(y);
    const unsigned char* src = bytes.data() + static_cast<std::size_t>(y) * img.width() * 3;
    for (int x = 0; x < img.width(); ++x) {
      row[3 * x + 0] = src[3 * x + 2];
      row[3 * x + 1] = src[3 * x + 1];
      row[3 * x + 2] = src[3 * x + 0];
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error("cannot write image " + path.string());
  }
}

}  // namespace drgn
