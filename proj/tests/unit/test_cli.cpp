#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "drgn/cli/cli.hpp"
#include "drgn/core/checkpoint.hpp"
#include "drgn/core/image.hpp"
#include "drgn/mfn/mfn.hpp"
#include "drgn/training/training.hpp"
#include "support/toy_data.hpp"

using namespace drgn;
namespace fs = std::filesystem;

namespace {

// Tiny-model overrides for `train`.
std::vector<std::string> tiny_overrides() {
  return {"--set", "model.pyramid_levels=2", "model.rcabs_per_branch=[1,1]",
          "model.rcab_depth=[3,3]", "model.base_channels=4", "training.patch_size=16",
          "training.batch_size=2", "training.epochs_stage1=1", "training.epochs_stage2=1"};
}

std::vector<std::string> train_args(const fs::path& root, const fs::path& out) {
  std::vector<std::string> args{"train",        "--data", root.string(), "--refs",
                                (root / "refs").string(), "--out",  out.string()};
  for (auto& s : tiny_overrides()) args.push_back(s);
  return args;
}

// One shared tiny training run for the commands that need a checkpoint.
const fs::path& trained_root() {
  static const fs::path root = [] {
    const fs::path r = toy::scratch("cli_trained");
    toy::write_dataset(r, toy::pairs(2, 32, 32, 1), toy::refs(10, 24, 20, 2));
    REQUIRE(toy::cli(train_args(r, r / "run")) == cli::kExitOk);
    return r;
  }();
  return root;
}

std::string slurp_dir(const fs::path& dir) {
  std::string all;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + toy::read_text(f);
  return all;
}

}  // namespace

TEST_CASE("train writes both stages") {
  const fs::path root = trained_root();
  CHECK(fs::exists(root / "run" / "stage1.ckpt"));
  CHECK(fs::exists(root / "run" / "stage2.ckpt"));
  const auto cfg = load_config(root / "run" / "config.json");
  CHECK(cfg.base_channels == 4);
  const auto ck = load_checkpoint(root / "run" / "stage2.ckpt", cfg);
  CHECK(ck.stage == 2);
}

TEST_CASE("train reports configuration errors with exit 2") {
  const fs::path root = trained_root();
  auto args = train_args(root, root / "bad");
  args.push_back("training.bogus=1");
  CHECK(toy::cli(args) == cli::kExitUsage);
  CHECK(toy::cli({"train", "--data", root.string()}) == cli::kExitUsage);
  CHECK(toy::cli({"frobnicate"}) == cli::kExitUsage);
}

TEST_CASE("train with the SSIM ablation logs no ssim term") {
  const fs::path root = trained_root();
  const fs::path out = toy::scratch("cli_no_ssim");
  auto args = train_args(root, out);
  args.push_back("ablation.ssim=false");
  args.push_back("--max-steps");
  args.push_back("2");
  REQUIRE(toy::cli(args) == cli::kExitOk);
  const auto log = toy::read_text(out / "train_log.csv");
  CHECK(log.find("ssim_term") == std::string::npos);
  CHECK(log.find(",2,con_img,") != std::string::npos);
}

TEST_CASE("train stage 2 alone resumes from a stage-1 checkpoint") {
  const fs::path root = trained_root();
  const fs::path out = toy::scratch("cli_stage2");
  auto args = train_args(root, out);
  for (const char* s : {"--stage", "2", "--checkpoint"}) args.push_back(s);
  args.push_back((root / "run" / "stage1.ckpt").string());
  CHECK(toy::cli(args) == cli::kExitOk);
  CHECK(fs::exists(out / "stage2.ckpt"));
}

TEST_CASE("augment is reproducible") {
  const fs::path root = trained_root();
  const fs::path a = toy::scratch("cli_aug_a");
  const fs::path b = toy::scratch("cli_aug_b");
  for (const auto& out : {a, b}) {
    REQUIRE(toy::cli({"augment", "--checkpoint", (root / "run" / "stage1.ckpt").string(),
                      "--lowlight", (root / "low").string(), "--refs", (root / "refs").string(),
                      "--out", out.string(), "--seed", "42"}) == cli::kExitOk);
  }
  int pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 20);
  std::ifstream in(a / "manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  CHECK(manifest["items"].size() == 10);
  CHECK(manifest["seed"] == 42);
  CHECK(manifest["checkpoint_digest"] == file_digest(root / "run" / "stage1.ckpt"));
  CHECK(slurp_dir(a) == slurp_dir(b));
}

TEST_CASE("augment and enhance map data errors to exit 3") {
  const fs::path root = trained_root();
  const fs::path empty = toy::scratch("cli_empty_refs");
  CHECK(toy::cli({"augment", "--checkpoint", (root / "run" / "stage1.ckpt").string(),
                  "--lowlight", (root / "low").string(), "--refs", empty.string(), "--out",
                  (empty / "out").string()}) == cli::kExitData);

  // enhance needs both generators.
  CHECK(toy::cli({"enhance", "--checkpoint", (root / "run" / "stage1.ckpt").string(), "--input",
                  (root / "low").string(), "--out", (empty / "enh").string()}) ==
        cli::kExitUsage);
}

TEST_CASE("enhance handles mixed sizes and bad files") {
  const fs::path root = trained_root();
  const fs::path in = toy::scratch("cli_enh_in");
  write_image(in / "a.png", toy::darken(toy::normal_image(33, 47, 3)));
  write_image(in / "b.png", toy::darken(toy::normal_image(16, 16, 4)));
  const auto ck = (root / "run" / "stage2.ckpt").string();
  const fs::path o1 = toy::scratch("cli_enh_o1");
  const fs::path o2 = toy::scratch("cli_enh_o2");
  REQUIRE(toy::cli({"enhance", "--checkpoint", ck, "--input", in.string(), "--out", o1.string()}) ==
          cli::kExitOk);
  REQUIRE(toy::cli({"enhance", "--checkpoint", ck, "--input", in.string(), "--out", o2.string()}) ==
          cli::kExitOk);
  const auto a = read_image(o1 / "a.png");
  CHECK(a.height() == 33);
  CHECK(a.width() == 47);
  CHECK(slurp_dir(o1) == slurp_dir(o2));

  std::ofstream(in / "c.png") << "broken";
  CHECK(toy::cli({"enhance", "--checkpoint", ck, "--input", in.string(), "--out",
                  (in / "o3").string()}) == cli::kExitData);
  CHECK(fs::exists(in / "o3" / "b.png"));
}

TEST_CASE("evaluate scores directories") {
  const fs::path root = trained_root();
  const fs::path out = toy::scratch("cli_eval");
  CHECK(toy::cli({"evaluate", "--pred", (root / "high").string(), "--gt",
                  (root / "high").string(), "--out", (out / "r.json").string()}) == cli::kExitOk);
  std::ifstream in(out / "r.json");
  const auto report = nlohmann::json::parse(in);
  CHECK(report["aggregate"]["mean_ssim"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(report["per_image"][0]["psnr"] == "inf");
  CHECK(fs::exists(out / "r.csv"));
  CHECK(toy::cli({"evaluate", "--pred", (root / "low").string(), "--gt",
                  (root / "refs").string(), "--out", (out / "x.json").string()}) ==
        cli::kExitData);
}

TEST_CASE("the installed binary runs as a separate process") {
#ifndef DRGN_CLI_PATH
  MESSAGE("built without the drgn binary path; skipped");
#else
  const char* bin = DRGN_CLI_PATH;
  const fs::path root = trained_root();
  const fs::path out = toy::scratch("cli_process");
  const std::string cmd = std::string(bin) + " evaluate --pred " + (root / "high").string() +
                          " --gt " + (root / "high").string() + " --out " +
                          (out / "r.json").string() + " > " + (out / "stdout.txt").string();
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(toy::read_text(out / "stdout.txt").rfind("images=2 mean_psnr=inf mean_ssim=1", 0) == 0);
  const std::string bad = std::string(bin) + " train --data /nonexistent > /dev/null 2>&1";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == cli::kExitUsage);
#endif
}
