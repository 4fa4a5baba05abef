#include "drgn/core/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "drgn/core/errors.hpp"

namespace drgn {

using nlohmann::json;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"model", {"pyramid_levels", "rcabs_per_branch", "rcab_depth", "base_channels"}},
      {"training",
       {"patch_size", "batch_size", "lr0", "lr_decay", "lr_decay_steps",
        "epochs_stage1", "epochs_stage2", "seed", "checkpoint_every"}},
      {"loss", {"alpha", "lambda_ssim", "epsilon_charb"}},
      {"ablation", {"dl_da", "msr", "kl", "ssim"}},
  };
  return keys;
}

template <typename T>
void read(const json& section, const char* sec, const char* key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("bad value for ") + sec + "." + key);
  }
}

// nlohmann converts any number to int silently; reject fractional values.
void read_int(const json& section, const char* sec, const char* key, int& out) {
  if (!section.contains(key)) return;
  const auto& v = section.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(std::string("bad value for ") + sec + "." + key +
                      " (expected integer)");
  }
  out = v.get<int>();
}

void read_bool(const json& section, const char* sec, const char* key, bool& out) {
  if (!section.contains(key)) return;
  const auto& v = section.at(key);
  if (!v.is_boolean()) {
    throw ConfigError(std::string("bad value for ") + sec + "." + key +
                      " (expected boolean)");
  }
  out = v.get<bool>();
}

}  // namespace

void RunConfig::validate() const {
  if (pyramid_levels < 1) throw ConfigError("model.pyramid_levels must be >= 1");
  if (pyramid_levels > 8) throw ConfigError("model.pyramid_levels must be <= 8");
  if (static_cast<int>(rcabs_per_branch.size()) != pyramid_levels) {
    throw ConfigError("model.rcabs_per_branch must have pyramid_levels entries");
  }
  if (static_cast<int>(rcab_depth.size()) != pyramid_levels) {
    throw ConfigError("model.rcab_depth must have pyramid_levels entries");
  }
  for (int r : rcabs_per_branch) {
    if (r < 0) throw ConfigError("model.rcabs_per_branch entries must be >= 0");
  }
  for (int k : rcab_depth) {
    if (k < 1 || k % 2 == 0) throw ConfigError("model.rcab_depth entries must be odd and >= 1");
  }
  if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
  if (patch_size < 1 || patch_size % size_multiple() != 0) {
    throw ConfigError("training.patch_size must be a positive multiple of 2^(pyramid_levels-1)");
  }
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("training.lr0 must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("training.lr_decay must be in (0,1]");
  if (lr_decay_steps < 1) throw ConfigError("training.lr_decay_steps must be >= 1");
  if (epochs_stage1 < 0) throw ConfigError("training.epochs_stage1 must be >= 0");
  if (epochs_stage2 < 0) throw ConfigError("training.epochs_stage2 must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("training.checkpoint_every must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("loss.alpha must be > 0");
  if (!(epsilon_charb > 0.0)) throw ConfigError("loss.epsilon_charb must be > 0");
}

RunConfig desk_profile() {
  RunConfig cfg;
  cfg.base_channels = 16;
  cfg.pyramid_levels = 3;
  cfg.batch_size = 2;
  return cfg;
}

json to_json(const RunConfig& cfg) {
  return json{
      {"model",
       {{"pyramid_levels", cfg.pyramid_levels},
        {"rcabs_per_branch", cfg.rcabs_per_branch},
        {"rcab_depth", cfg.rcab_depth},
        {"base_channels", cfg.base_channels}}},
      {"training",
       {{"patch_size", cfg.patch_size},
        {"batch_size", cfg.batch_size},
        {"lr0", cfg.lr0},
        {"lr_decay", cfg.lr_decay},
        {"lr_decay_steps", cfg.lr_decay_steps},
        {"epochs_stage1", cfg.epochs_stage1},
        {"epochs_stage2", cfg.epochs_stage2},
        {"seed", cfg.seed},
        {"checkpoint_every", cfg.checkpoint_every}}},
      {"loss",
       {{"alpha", cfg.alpha},
        {"lambda_ssim", cfg.lambda_ssim},
        {"epsilon_charb", cfg.epsilon_charb}}},
      {"ablation",
       {{"dl_da", cfg.ablation.dl_da},
        {"msr", cfg.ablation.msr},
        {"kl", cfg.ablation.kl},
        {"ssim", cfg.ablation.ssim}}},
  };
}

namespace {

RunConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  const auto& keys = schema();
  for (const auto& [sec, body] : doc.items()) {
    auto it = keys.find(sec);
    if (it == keys.end()) throw ConfigError("unknown config key: " + sec);
    if (!body.is_object()) throw ConfigError("config section " + sec + " must be an object");
    for (const auto& [key, _] : body.items()) {
      if (!it->second.count(key)) throw ConfigError("unknown config key: " + sec + "." + key);
    }
  }
  RunConfig cfg;
  const json empty = json::object();
  const json& model = doc.contains("model") ? doc["model"] : empty;
  const json& training = doc.contains("training") ? doc["training"] : empty;
  const json& loss = doc.contains("loss") ? doc["loss"] : empty;
  const json& ablation = doc.contains("ablation") ? doc["ablation"] : empty;

  read_int(model, "model", "pyramid_levels", cfg.pyramid_levels);
  read(model, "model", "rcabs_per_branch", cfg.rcabs_per_branch);
  read(model, "model", "rcab_depth", cfg.rcab_depth);
  read_int(model, "model", "base_channels", cfg.base_channels);

  read_int(training, "training", "patch_size", cfg.patch_size);
  read_int(training, "training", "batch_size", cfg.batch_size);
  read(training, "training", "lr0", cfg.lr0);
  read(training, "training", "lr_decay", cfg.lr_decay);
  read_int(training, "training", "lr_decay_steps", cfg.lr_decay_steps);
  read_int(training, "training", "epochs_stage1", cfg.epochs_stage1);
  read_int(training, "training", "epochs_stage2", cfg.epochs_stage2);
  if (training.contains("seed")) {
    const auto& v = training["seed"];
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("bad value for training.seed (expected non-negative integer)");
    }
    cfg.seed = v.get<std::uint64_t>();
  }
  read_int(training, "training", "checkpoint_every", cfg.checkpoint_every);

  read(loss, "loss", "alpha", cfg.alpha);
  read(loss, "loss", "lambda_ssim", cfg.lambda_ssim);
  read(loss, "loss", "epsilon_charb", cfg.epsilon_charb);

  read_bool(ablation, "ablation", "dl_da", cfg.ablation.dl_da);
  read_bool(ablation, "ablation", "msr", cfg.ablation.msr);
  read_bool(ablation, "ablation", "kl", cfg.ablation.kl);
  read_bool(ablation, "ablation", "ssim", cfg.ablation.ssim);
  return cfg;
}

}  // namespace

RunConfig config_from_json(const json& doc) {
  RunConfig cfg = parse_config(doc);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError("unknown config key: " + path);
  const std::string sec = path.substr(0, dot);
  const std::string key = path.substr(dot + 1);
  const auto& keys = schema();
  auto it = keys.find(sec);
  if (it == keys.end() || !it->second.count(key)) {
    throw ConfigError("unknown config key: " + path);
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json doc = to_json(cfg);
  doc[sec][key] = value;
  // Validation is left to the caller so multi-field changes (levels plus
  // per-branch lists) can be applied in any order.
  cfg = parse_config(doc);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_digest(const RunConfig& cfg) {
  return fnv1a_hex(to_json(cfg).dump());
}

std::string architecture_digest(const RunConfig& cfg) {
  json arch = to_json(cfg)["model"];
  arch["msr"] = cfg.ablation.msr;
  return fnv1a_hex(arch.dump());
}

}  // namespace drgn
