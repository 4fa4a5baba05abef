#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "drgn/core/checkpoint.hpp"
#include "drgn/core/config.hpp"
#include "drgn/core/dataset.hpp"
#include "drgn/core/errors.hpp"
#include "drgn/core/image.hpp"
#include "support/toy_data.hpp"

using namespace drgn;
namespace fs = std::filesystem;

namespace {

ImageTensor ramp(int h, int w) {
  ImageTensor img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = ((y * 7 + x * 3 + c) % 256) / 255.0;
  return img;
}

}  // namespace

TEST_CASE("run config defaults follow the training recipe") {
  const RunConfig cfg;
  CHECK(cfg.pyramid_levels == 3);
  CHECK(cfg.rcabs_per_branch == std::vector<int>{2, 3, 4});
  CHECK(cfg.rcab_depth == std::vector<int>{3, 3, 3});
  CHECK(cfg.patch_size == 96);
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.lr0 == 5e-4);
  CHECK(cfg.lr_decay == 0.9);
  CHECK(cfg.lr_decay_steps == 6000);
  CHECK(cfg.epochs_stage1 + cfg.epochs_stage2 == 60);
  CHECK(cfg.alpha == 1e-5);
  CHECK(cfg.lambda_ssim == -0.2);
  CHECK(cfg.epsilon_charb == 1e-3);
  CHECK(cfg.ablation == AblationFlags{});
  CHECK_NOTHROW(cfg.validate());
  const RunConfig desk = desk_profile();
  CHECK(desk.base_channels == 16);
  CHECK(desk.batch_size == 2);
}

TEST_CASE("config json round trip and overrides") {
  RunConfig cfg;
  apply_override(cfg, "ablation.ssim=false");
  apply_override(cfg, "training.epochs_stage1=1");
  apply_override(cfg, "loss.alpha=2e-5");
  CHECK_FALSE(cfg.ablation.ssim);
  CHECK(cfg.epochs_stage1 == 1);
  CHECK(cfg.alpha == 2e-5);
  CHECK(config_from_json(to_json(cfg)) == cfg);
  CHECK(config_digest(cfg) != config_digest(RunConfig{}));

  // Architecture fields can be changed together in any order.
  apply_override(cfg, "model.pyramid_levels=2");
  apply_override(cfg, "model.rcabs_per_branch=[1,1]");
  apply_override(cfg, "model.rcab_depth=[3,3]");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config rejects unknown keys and invalid values") {
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(apply_override(cfg, "foo=1"), doctest::Contains("foo"), ConfigError);
  CHECK_THROWS_WITH_AS(apply_override(cfg, "model.width=3"), doctest::Contains("model.width"),
                       ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "training.batch_size=abc"), ConfigError);
  auto doc = to_json(cfg);
  doc["training"]["extra"] = 1;
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  cfg.patch_size = 90;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.rcab_depth = {3, 3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("architecture digest ignores training-only fields") {
  RunConfig a, b;
  b.epochs_stage2 = 7;
  b.ablation.ssim = false;
  CHECK(architecture_digest(a) == architecture_digest(b));
  b.pyramid_levels = 4;
  b.rcabs_per_branch = {1, 1, 1, 1};
  b.rcab_depth = {3, 3, 3, 3};
  CHECK(architecture_digest(a) != architecture_digest(b));
}

TEST_CASE("pad_to_multiple then crop is the identity") {
  const ImageTensor img = ramp(95, 61);
  for (int m : {1, 2, 4, 8}) {
    const auto padded = pad_to_multiple(img, m);
    CHECK(padded.image.height() % m == 0);
    CHECK(padded.image.width() % m == 0);
    CHECK(padded.image.height() < 95 + m);
    CHECK(crop_to_original(padded) == img);
  }
  CHECK(pad_to_multiple(ramp(95, 95), 4).image.height() == 96);
  CHECK(pad_to_multiple(ramp(96, 96), 4).image == ramp(96, 96));
  // Mirror border: the row after the last is the one before it.
  const auto p = pad_to_multiple(ramp(5, 5), 8).image;
  CHECK(p.at(5, 0, 0) == p.at(3, 0, 0));
}

TEST_CASE("resize and flip") {
  const ImageTensor img = ramp(8, 6);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_horizontal(img).at(2, 0, 1) == img.at(2, 5, 1));
  CHECK(resize_bilinear(img, 8, 6) == img);
  ImageTensor flat(10, 10, 3, Role::image, 0.3);
  const auto small = resize_bilinear(flat, 7, 4);
  for (double v : small.values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("8-bit quantization rounds half to even") {
  ImageTensor img(1, 2, 3);
  img.at(0, 0, 0) = 0.5 / 255.0;  // 0.5 -> 0
  img.at(0, 0, 1) = 1.5 / 255.0;  // 1.5 -> 2
  img.at(0, 0, 2) = 1.0;
  img.at(0, 1, 0) = -0.2;
  img.at(0, 1, 1) = 1.7;
  img.at(0, 1, 2) = 2.5 / 255.0;  // 2.5 -> 2
  const auto q = quantize_8bit(img);
  CHECK(q[0] == 0);
  CHECK(q[1] == 2);
  CHECK(q[2] == 255);
  CHECK(q[3] == 0);
  CHECK(q[4] == 255);
  CHECK(q[5] == 2);
}

TEST_CASE("PNG round trip maps 255 to 1.0") {
  const fs::path dir = toy::scratch("core_png");
  const ImageTensor img = ramp(5, 7);
  write_image(dir / "a.png", img);
  const ImageTensor back = read_image(dir / "a.png");
  CHECK(back.height() == 5);
  CHECK(back.width() == 7);
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(back.values()[i] == doctest::Approx(img.values()[i]).epsilon(1e-12));
  }
  ImageTensor white(2, 2, 3, Role::image, 1.0);
  write_image(dir / "w.png", white);
  CHECK(read_image(dir / "w.png").at(1, 1, 2) == 1.0);
  std::ofstream(dir / "bad.png") << "not an image";
  CHECK_THROWS_AS(read_image(dir / "bad.png"), DecodeError);
}

TEST_CASE("load_dataset pairs by name and reports orphans") {
  const fs::path dir = toy::scratch("core_dataset");
  fs::create_directories(dir / "low");
  fs::create_directories(dir / "high");
  for (const char* name : {"b", "a"}) {
    write_image(dir / "low" / (std::string(name) + ".png"), ramp(4, 4));
    write_image(dir / "high" / (std::string(name) + ".png"), ramp(4, 4));
  }
  const auto pairs = load_dataset(dir);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].id == "a");
  CHECK(pairs[1].id == "b");
  const auto again = load_dataset(dir / "low", dir / "high");
  CHECK(again[1].normal == pairs[1].normal);

  write_image(dir / "high" / "c.png", ramp(4, 4));
  try {
    load_dataset(dir);
    FAIL("expected PairingError");
  } catch (const PairingError& e) {
    CHECK(e.orphan() == "c.png");
  }
  fs::remove(dir / "high" / "c.png");
  write_image(dir / "high" / "a.png", ramp(4, 5));
  CHECK_THROWS_AS(load_dataset(dir), ShapeError);
}

TEST_CASE("DRGN_NUM_WORKERS caps decoding threads") {
  setenv("DRGN_NUM_WORKERS", "1", 1);
  CHECK(data_workers() == 1);
  unsetenv("DRGN_NUM_WORKERS");
  CHECK(data_workers() >= 1);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const fs::path dir = toy::scratch("core_ckpt");
  Checkpoint ck;
  ck.stage = 2;
  ck.config = desk_profile();
  ck.deg_params = NamedTensors{{"w", nn::Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 0.1})}};
  ck.re_params = NamedTensors{{"b", nn::Tensor({1}, std::vector<double>{-3.25})}};
  ck.optimizer_tensors = {{"re/m/b", nn::Tensor({1}, std::vector<double>{1e-300})}};
  ck.optimizer_meta = {{"global_step", 12}};
  ck.step = 12;
  save_checkpoint(ck, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt", ck.config);
  CHECK(back.stage == 2);
  CHECK(back.step == 12);
  CHECK(*back.deg_params == *ck.deg_params);
  CHECK(*back.re_params == *ck.re_params);
  CHECK(back.optimizer_tensors == ck.optimizer_tensors);
  CHECK(back.optimizer_meta == ck.optimizer_meta);
  CHECK_FALSE(back.disc_low.has_value());
  CHECK(back.config == ck.config);

  RunConfig other = ck.config;
  other.pyramid_levels = 4;
  other.rcabs_per_branch = {1, 1, 1, 1};
  other.rcab_depth = {3, 3, 3, 3};
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other), ConfigMismatchError);

  const std::string bytes = toy::read_text(dir / "a.ckpt");
  std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), FormatError);
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  std::ofstream(dir / "f.ckpt", std::ios::binary) << flipped;
  CHECK_THROWS_AS(load_checkpoint(dir / "f.ckpt"), FormatError);
  std::ofstream(dir / "j.ckpt", std::ios::binary) << "garbage";
  CHECK_THROWS_AS(load_checkpoint(dir / "j.ckpt"), FormatError);

  ck.re_params.reset();
  save_checkpoint(ck, dir / "s2.ckpt");
  CHECK_THROWS_AS(load_checkpoint(dir / "s2.ckpt"), FormatError);
}

TEST_CASE("image role invariants") {
  ImageTensor img(2, 2, 3);
  CHECK_NOTHROW(img.validate());
  img.at(0, 0, 0) = 1.5;
  CHECK_THROWS(img.validate());
  ImageTensor feat(2, 2, 5, Role::feature, 4.0);
  CHECK_NOTHROW(feat.validate());
  ImageTensor field(1, 1, 3, Role::feature, 2.0);
  CHECK_THROWS(DegradationMap{field});
}
