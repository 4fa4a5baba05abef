#include "drgn/cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "drgn/core/checkpoint.hpp"
#include "drgn/core/config.hpp"
#include "drgn/core/dataset.hpp"
#include "drgn/core/errors.hpp"
#include "drgn/degradation/degradation.hpp"
#include "drgn/metrics/metrics.hpp"
#include "drgn/refinement/refinement.hpp"
#include "drgn/training/training.hpp"

namespace drgn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TrainArgs {
  std::string config;
  std::string profile = "paper";
  std::string stage = "all";
  std::string data;
  std::string refs;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::int64_t max_steps = 0;
};

struct AugmentArgs {
  std::string checkpoint;
  std::string lowlight;
  std::string refs;
  std::string out;
  std::uint64_t seed = 0;
};

struct EnhanceArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
};

struct EvaluateArgs {
  std::string pred;
  std::string gt;
  std::string out;
};

RunConfig resolve_config(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? (a.profile == "desk" ? desk_profile() : RunConfig{})
                                   : load_config(a.config);
  for (const auto& o : a.overrides) apply_override(cfg, o);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

std::vector<ImageTensor> load_refs(const std::string& dir) {
  std::vector<ImageTensor> refs;
  if (dir.empty()) return refs;
  for (auto& item : load_image_dir(dir)) refs.push_back(std::move(item.image));
  return refs;
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = resolve_config(a);
  const fs::path out(a.out);
  if (a.stage == "all") {
    training::train_all(cfg, training::TrainDirs{a.data, a.refs, out}, a.max_steps);
  } else {
    const auto pairs = load_dataset(a.data);
    const auto refs = cfg.ablation.dl_da ? load_refs(a.refs) : std::vector<ImageTensor>{};
    fs::create_directories(out);
    save_config(out / "config.json", cfg);
    training::TrainLog log(out / "train_log.csv");
    const training::TrainOptions options{out, &log, a.max_steps};
    if (a.stage == "1") {
      training::train_stage1(cfg, pairs, refs, options);
    } else {
      const fs::path ck_path = a.checkpoint.empty() ? out / "stage1.ckpt" : fs::path(a.checkpoint);
      training::train_stage2(cfg, pairs, load_checkpoint(ck_path), refs, options);
    }
  }
  std::cout << "training finished; checkpoints in " << out.string() << "\n";
  return kExitOk;
}

int cmd_augment(const AugmentArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto deg = training::load_deg(ck);
  std::vector<SamplePair> sources;
  for (auto& item : load_image_dir(a.lowlight)) {
    sources.push_back(SamplePair{std::move(item.image), ImageTensor(), item.id});
  }
  const auto refs = load_image_dir(a.refs);
  if (refs.empty()) throw EmptyReferenceError("no reference images in " + a.refs);
  std::vector<ImageTensor> ref_images;
  for (const auto& r : refs) ref_images.push_back(r.image);
  const auto synthetic = degradation::augment_dataset(sources, ref_images, deg, a.seed);

  const fs::path out(a.out);
  fs::create_directories(out / "ref");
  fs::create_directories(out / "low");
  json items = json::array();
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    const std::string name = refs[i].id + ".png";
    write_image(out / "ref" / name, synthetic[i].reference);
    write_image(out / "low" / name, synthetic[i].synthetic_lowlight);
    items.push_back({{"id", refs[i].id},
                     {"ref", "ref/" + name},
                     {"low", "low/" + name},
                     {"source", synthetic[i].source_degradation_id}});
  }
  const json manifest{{"seed", a.seed},
                      {"checkpoint_digest", file_digest(a.checkpoint)},
                      {"count", synthetic.size()},
                      {"items", items}};
  std::ofstream(out / "manifest.json") << manifest.dump(2) << "\n";
  std::cout << "wrote " << synthetic.size() << " synthetic pairs to " << out.string() << "\n";
  return kExitOk;
}

int cmd_enhance(const EnhanceArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  const auto deg = training::load_deg(ck);
  const auto re = training::load_reg(ck);
  const fs::path input(a.input);
  const std::vector<fs::path> files =
      fs::is_directory(input) ? list_images(input) : std::vector<fs::path>{input};
  const fs::path out(a.out);
  fs::create_directories(out);
  int failures = 0;
  for (const auto& f : files) {
    ImageTensor img;
    try {
      img = read_image(f);
    } catch (const DecodeError& e) {
      std::cerr << "error: " << e.what() << "\n";
      ++failures;
      continue;
    }
    write_image(out / (f.stem().string() + ".png"), refinement::enhance(img, deg, re));
  }
  std::cout << "enhanced " << files.size() - static_cast<std::size_t>(failures) << " of "
            << files.size() << " images\n";
  return failures > 0 ? kExitData : kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const auto report = metrics::evaluate_dirs(a.pred, a.gt);
  metrics::write_report(report, a.out);
  std::cout << "images=" << report.per_image.size()
            << " mean_psnr=" << metrics::format_psnr(report.mean_psnr)
            << " mean_ssim=" << report.mean_ssim << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Two-stage low-light enhancement: train, augment, enhance, evaluate"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train DeG (stage 1) and ReG (stage 2)");
  t->add_option("--config", train.config, "JSON run configuration")->check(CLI::ExistingFile);
  t->add_option("--profile", train.profile, "Defaults when no config is given")
      ->check(CLI::IsMember({"paper", "desk"}));
  t->add_option("--stage", train.stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  t->add_option("--data", train.data, "Directory with low/ and high/")->required();
  t->add_option("--refs", train.refs, "Normal-light reference images");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--checkpoint", train.checkpoint, "Stage-1 checkpoint for --stage 2");
  t->add_option("--set", train.overrides, "section.key=value override")->take_all();
  t->add_option("--seed", train.seed, "Overrides training.seed");
  t->add_option("--max-steps", train.max_steps, "Cap on steps per stage (0: no cap)");

  AugmentArgs augment;
  auto* g = app.add_subcommand("augment", "Synthesize low-light pairs from references");
  g->add_option("--checkpoint", augment.checkpoint)->required()->check(CLI::ExistingFile);
  g->add_option("--lowlight", augment.lowlight, "Low-light source images")->required();
  g->add_option("--refs", augment.refs, "Normal-light reference images")->required();
  g->add_option("--out", augment.out)->required();
  g->add_option("--seed", augment.seed);

  EnhanceArgs enhance;
  auto* e = app.add_subcommand("enhance", "Enhance low-light images with a stage-2 checkpoint");
  e->add_option("--checkpoint", enhance.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--input", enhance.input, "Image file or directory")->required()
      ->check(CLI::ExistingPath);
  e->add_option("--out", enhance.out)->required();

  EvaluateArgs evaluate;
  auto* v = app.add_subcommand("evaluate", "PSNR/SSIM of predictions against ground truth");
  v->add_option("--pred", evaluate.pred)->required();
  v->add_option("--gt", evaluate.gt)->required();
  v->add_option("--out", evaluate.out, "report.json path; the CSV goes next to it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (g->parsed()) return cmd_augment(augment);
    if (e->parsed()) return cmd_enhance(enhance);
    return cmd_evaluate(evaluate);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const ConfigMismatchError& err) {
    std::cerr << "config mismatch: " << err.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& err) {
    std::cerr << "checkpoint error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const PairingError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const DecodeError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const EmptyDatasetError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const EmptyReferenceError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const ShapeError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace drgn::cli
