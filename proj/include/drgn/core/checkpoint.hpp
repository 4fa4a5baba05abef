#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "drgn/core/config.hpp"
#include "drgn/nn/tensor.hpp"

namespace drgn {

using NamedTensors = std::map<std::string, nn::Tensor>;

struct Checkpoint {
  int stage = 1;
  std::optional<NamedTensors> deg_params;
  std::optional<NamedTensors> re_params;
  std::optional<NamedTensors> disc_low;
  std::optional<NamedTensors> disc_de;
  // Optimizer moments and bookkeeping; not interpreted by the container.
  NamedTensors optimizer_tensors;
  nlohmann::json optimizer_meta = nlohmann::json::object();
  std::int64_t step = 0;
  RunConfig config;
  std::string config_digest;
};

// File layout: 8-byte magic "DRGNCKPT", u32 version, u64 header length, a
// JSON header (metadata plus a table of named float64 arrays), then the
// little-endian payload. The header records an FNV-1a digest of the payload.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);

// Throws FormatError for truncated or corrupt files. When `expected` is given
// its digest must equal the stored one, else ConfigMismatchError.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<RunConfig>& expected = std::nullopt);

// Digest of the checkpoint file bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace drgn
