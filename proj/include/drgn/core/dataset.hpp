#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drgn/core/image.hpp"

namespace drgn {

// One entry of the paired training set S = {I, I_L}.
struct SamplePair {
  ImageTensor lowlight;
  ImageTensor normal;
  std::string id;
};

// One entry of the synthesized set T = {I_ref, I_L,ref}.
struct SyntheticPair {
  ImageTensor reference;
  ImageTensor synthetic_lowlight;
  std::string source_degradation_id;
};

struct NamedImage {
  std::string id;
  ImageTensor image;
};

// Image files (png/jpg/jpeg, any case) directly inside dir, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Loads matching basenames from the two directories in lexicographic order.
// Throws PairingError naming the first orphan file, DecodeError on unreadable
// files, ShapeError when a pair differs in size.
std::vector<SamplePair> load_dataset(const std::filesystem::path& dir_lowlight,
                                     const std::filesystem::path& dir_normal);

// LOL layout: <root>/low and <root>/high.
std::vector<SamplePair> load_dataset(const std::filesystem::path& root);

std::vector<NamedImage> load_image_dir(const std::filesystem::path& dir);

// Worker count for decoding, capped by DRGN_NUM_WORKERS when set.
int data_workers();

}  // namespace drgn
