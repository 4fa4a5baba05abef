#include "drgn/core/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "drgn/core/errors.hpp"

namespace drgn {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Decodes every path, in parallel when workers allow; results keep input order.
std::vector<ImageTensor> decode_all(const std::vector<fs::path>& paths) {
  std::vector<ImageTensor> out(paths.size());
  const int workers = std::min<int>(data_workers(), static_cast<int>(paths.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < paths.size(); ++i) out[i] = read_image(paths[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < paths.size(); i = next++) {
        try {
          out[i] = read_image(paths[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

int data_workers() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("DRGN_NUM_WORKERS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DecodeError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return files;
}

std::vector<SamplePair> load_dataset(const fs::path& dir_lowlight,
                                     const fs::path& dir_normal) {
  const auto low_files = list_images(dir_lowlight);
  const auto high_files = list_images(dir_normal);
  std::map<std::string, fs::path> low_by_id, high_by_id;
  for (const auto& p : low_files) low_by_id[p.stem().string()] = p;
  for (const auto& p : high_files) high_by_id[p.stem().string()] = p;

  // Report the lexicographically first orphan from either side.
  std::vector<std::string> orphans;
  for (const auto& [id, p] : low_by_id) {
    if (!high_by_id.count(id)) orphans.push_back(p.filename().string());
  }
  for (const auto& [id, p] : high_by_id) {
    if (!low_by_id.count(id)) orphans.push_back(p.filename().string());
  }
  if (!orphans.empty()) {
    throw PairingError(*std::min_element(orphans.begin(), orphans.end()));
  }

  std::vector<fs::path> paths;
  std::vector<std::string> ids;
  for (const auto& [id, p] : low_by_id) {
    ids.push_back(id);
    paths.push_back(p);
    paths.push_back(high_by_id.at(id));
  }
  auto images = decode_all(paths);
  std::vector<SamplePair> pairs;
  pairs.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& low = images[2 * i];
    auto& high = images[2 * i + 1];
    if (!low.same_shape(high)) {
      throw ShapeError("pair " + ids[i] + " has mismatched image sizes");
    }
    pairs.push_back(SamplePair{std::move(low), std::move(high), ids[i]});
  }
  return pairs;
}

std::vector<SamplePair> load_dataset(const fs::path& root) {
  return load_dataset(root / "low", root / "high");
}

std::vector<NamedImage> load_image_dir(const fs::path& dir) {
  const auto files = list_images(dir);
  auto images = decode_all(files);
  std::vector<NamedImage> out;
  out.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    out.push_back(NamedImage{files[i].stem().string(), std::move(images[i])});
  }
  return out;
}

}  // namespace drgn
