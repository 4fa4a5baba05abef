#include "toy_data.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "drgn/cli/cli.hpp"

namespace toy {

namespace fs = std::filesystem;
using drgn::ImageTensor;

ImageTensor normal_image(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img(height, width, 3);
  double fa[3], fb[3], ph[3];
  for (int c = 0; c < 3; ++c) {
    fa[c] = 6.0 * u(rng);
    fb[c] = 6.0 * u(rng);
    ph[c] = 6.0 * u(rng);
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = 0.5 + 0.3 * std::sin(fa[c] * x / 96.0 + fb[c] * y / 96.0 + ph[c]);
      }
    }
  }
  for (int d = 0; d < 3; ++d) {
    const double cy = u(rng) * height, cx = u(rng) * width, r = 8.0 + 12.0 * u(rng);
    double colour[3];
    for (double& v : colour) v = 0.2 + 0.6 * u(rng);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r) {
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = colour[c];
        }
      }
    }
  }
  return img;
}

ImageTensor darken(const ImageTensor& normal) {
  ImageTensor out = normal;
  for (auto& v : out.values()) v = 0.25 * std::pow(v, 1.3);
  return out;
}

std::vector<drgn::SamplePair> pairs(int count, int height, int width, std::uint64_t seed) {
  std::vector<drgn::SamplePair> out;
  for (int i = 0; i < count; ++i) {
    auto n = normal_image(height, width, seed + static_cast<std::uint64_t>(i));
    out.push_back(drgn::SamplePair{darken(n), n, "p" + std::to_string(i)});
  }
  return out;
}

std::vector<ImageTensor> refs(int count, int height, int width, std::uint64_t seed) {
  std::vector<ImageTensor> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(normal_image(height, width, seed + 1000 + static_cast<std::uint64_t>(i)));
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<drgn::SamplePair>& pairs,
                   const std::vector<ImageTensor>& refs) {
  fs::create_directories(root / "low");
  fs::create_directories(root / "high");
  fs::create_directories(root / "refs");
  for (const auto& p : pairs) {
    drgn::write_image(root / "low" / (p.id + ".png"), p.lowlight);
    drgn::write_image(root / "high" / (p.id + ".png"), p.normal);
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    drgn::write_image(root / "refs" / ("r" + std::to_string(i) + ".png"), refs[i]);
  }
}

fs::path scratch(const std::string& name) {
  const char* env = std::getenv("DRGN_TEST_TMP");
  const fs::path base = env ? fs::path(env) : fs::temp_directory_path() / "drgn-tests";
  const fs::path dir = base / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"drgn"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return drgn::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

drgn::RunConfig tiny_config() {
  drgn::RunConfig cfg;
  cfg.pyramid_levels = 2;
  cfg.rcabs_per_branch = {1, 1};
  cfg.rcab_depth = {3, 3};
  cfg.base_channels = 4;
  cfg.patch_size = 16;
  cfg.batch_size = 2;
  cfg.epochs_stage1 = 1;
  cfg.epochs_stage2 = 1;
  cfg.seed = 7;
  return cfg;
}

}  // namespace toy
