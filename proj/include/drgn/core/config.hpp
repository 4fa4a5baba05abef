#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace drgn {

struct AblationFlags {
  bool dl_da = true;  // degradation learning + data augmentation
  bool msr = true;    // multi-scale representation
  bool kl = true;     // degradation consistency (KL) term
  bool ssim = true;   // SSIM term of the refinement loss

  bool operator==(const AblationFlags&) const = default;
};

// Every hyperparameter of a training run. Serialized as a JSON document with
// sections "model", "training", "loss" and "ablation"; keys mirror the fields.
struct RunConfig {
  // model
  int pyramid_levels = 3;
  std::vector<int> rcabs_per_branch{2, 3, 4};
  std::vector<int> rcab_depth{3, 3, 3};  // RCAB conv kernel size per branch
  int base_channels = 64;

  // training
  int patch_size = 96;
  int batch_size = 16;
  double lr0 = 5e-4;
  double lr_decay = 0.9;
  int lr_decay_steps = 6000;
  int epochs_stage1 = 20;
  int epochs_stage2 = 40;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only at stage boundaries

  // loss
  double alpha = 1e-5;
  double lambda_ssim = -0.2;
  double epsilon_charb = 1e-3;

  AblationFlags ablation;

  bool operator==(const RunConfig&) const = default;

  // Throws ConfigError naming the offending field.
  void validate() const;
  // 2^(n-1): the factor every network input side must divide.
  int size_multiple() const { return 1 << (pyramid_levels - 1); }
};

// CPU-feasible profile: 16 channels, 3 levels, batch 2.
RunConfig desk_profile();

nlohmann::json to_json(const RunConfig& cfg);
// Unknown sections or keys and wrongly typed values raise ConfigError.
RunConfig config_from_json(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

// Applies one dotted-path override such as "ablation.ssim=false". The value
// is parsed as JSON when possible, otherwise taken as a string. Unknown keys
// throw immediately; call RunConfig::validate() once all overrides are in.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Hex FNV-1a/64 digest of arbitrary bytes.
std::string fnv1a_hex(std::string_view bytes);
// Digest of the whole canonical config.
std::string config_digest(const RunConfig& cfg);
// Digest of the fields that fix network shapes (model section + msr flag).
std::string architecture_digest(const RunConfig& cfg);

}  // namespace drgn
