#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "drgn/nn/tensor.hpp"

namespace drgn {

enum class Role { image, feature };

// Channels-last H x W x C array of doubles. Image-role tensors hold RGB
// values in [0, 1]; feature-role tensors are unbounded.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, Role role = Role::image,
              double fill = 0.0);
  ImageTensor(int height, int width, int channels, std::vector<double> data,
              Role role = Role::image);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Role role() const { return role_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  // Throws ShapeError / Error when the role invariants do not hold.
  void validate() const;

  bool operator==(const ImageTensor& other) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Role role_ = Role::image;
  std::vector<double> data_;
};

// Signed additive degradation field with values in [-1, 1].
class DegradationMap {
 public:
  DegradationMap() = default;
  explicit DegradationMap(ImageTensor field);

  const ImageTensor& field() const { return field_; }
  int height() const { return field_.height(); }
  int width() const { return field_.width(); }
  int channels() const { return field_.channels(); }
  double at(int y, int x, int c) const { return field_.at(y, x, c); }

  bool operator==(const DegradationMap& other) const = default;

 private:
  ImageTensor field_;
};

struct PaddedImage {
  ImageTensor image;
  int original_height = 0;
  int original_width = 0;
};

// Reflection-pads bottom/right so both sides become the smallest multiples
// of m. Mirror indexing folds repeatedly, so any m works on any size.
PaddedImage pad_to_multiple(const ImageTensor& img, int m);
ImageTensor crop(const ImageTensor& img, int top, int left, int height, int width);
ImageTensor crop_to_original(const PaddedImage& padded);

// Half-pixel-centred bilinear resampling (edge samples clamp).
ImageTensor resize_bilinear(const ImageTensor& img, int height, int width);
ImageTensor flip_horizontal(const ImageTensor& img);

// Stacks equally shaped images into an NCHW tensor.
nn::Tensor to_batch(std::span<const ImageTensor> images);
nn::Tensor to_batch(const ImageTensor& image);
// Extracts sample b of an NCHW tensor as a channels-last image.
ImageTensor from_batch(const nn::Tensor& batch, int b, Role role = Role::image);

// 8-bit PNG/JPEG decode into [0,1] RGB. Throws DecodeError.
ImageTensor read_image(const std::filesystem::path& path);
// Clamps to [0,1], quantizes with round-half-even and writes 8-bit RGB.
void write_image(const std::filesystem::path& path, const ImageTensor& img);
// The 8-bit values write_image would store, in HWC RGB order.
std::vector<unsigned char> quantize_8bit(const ImageTensor& img);

}  // namespace drgn
