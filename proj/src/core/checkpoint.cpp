#include "drgn/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "drgn/core/errors.hpp"

namespace drgn {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

namespace {

constexpr char kMagic[8] = {'D', 'R', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void add_group(json& table, std::string& payload, const std::string& prefix,
               const NamedTensors& tensors) {
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", prefix + name},
                     {"shape", t.shape()},
                     {"offset", payload.size()},
                     {"count", t.size()}});
    payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  std::string payload;
  json table = json::array();
  json groups = json::array();
  auto group = [&](const char* prefix, const std::optional<NamedTensors>& t) {
    if (!t) return;
    groups.push_back(prefix);
    add_group(table, payload, std::string(prefix) + "/", *t);
  };
  group("deg", ck.deg_params);
  group("re", ck.re_params);
  group("disc_low", ck.disc_low);
  group("disc_de", ck.disc_de);
  add_group(table, payload, "opt/", ck.optimizer_tensors);

  json header{
      {"format", "drgn-checkpoint"},
      {"stage", ck.stage},
      {"step", ck.step},
      {"config", to_json(ck.config)},
      {"config_digest", ck.config_digest.empty() ? config_digest(ck.config)
                                                 : ck.config_digest},
      {"architecture_digest", architecture_digest(ck.config)},
      {"groups", groups},
      {"optimizer", ck.optimizer_meta},
      {"tensors", table},
      {"payload_bytes", payload.size()},
      {"payload_digest", fnv1a_hex(payload)},
  };
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  // Write-then-rename so readers never observe a half-written file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const std::optional<RunConfig>& expected) {
  const std::string bytes = read_file(path);
  constexpr std::size_t prefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&header_len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(header_len));
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  if (header_len > bytes.size() - prefix) throw FormatError("truncated checkpoint header");

  json header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(prefix),
                            bytes.begin() + static_cast<std::ptrdiff_t>(prefix + header_len),
                            nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("corrupt checkpoint header");

  Checkpoint ck;
  try {
    const std::string_view payload(bytes.data() + prefix + header_len,
                                   bytes.size() - prefix - header_len);
    if (payload.size() != header.at("payload_bytes").get<std::size_t>()) {
      throw FormatError("truncated checkpoint payload");
    }
    if (fnv1a_hex(payload) != header.at("payload_digest").get<std::string>()) {
      throw FormatError("checkpoint payload digest mismatch");
    }
    ck.stage = header.at("stage").get<int>();
    ck.step = header.at("step").get<std::int64_t>();
    ck.config = config_from_json(header.at("config"));
    ck.config_digest = header.at("config_digest").get<std::string>();
    ck.optimizer_meta = header.at("optimizer");
    if (config_digest(ck.config) != ck.config_digest) {
      throw FormatError("stored config does not match its digest");
    }
    for (const auto& g : header.at("groups")) {
      const auto name = g.get<std::string>();
      if (name == "deg") ck.deg_params.emplace();
      else if (name == "re") ck.re_params.emplace();
      else if (name == "disc_low") ck.disc_low.emplace();
      else if (name == "disc_de") ck.disc_de.emplace();
      else throw FormatError("unknown parameter group " + name);
    }
    for (const auto& entry : header.at("tensors")) {
      const auto full = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<nn::Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (count != nn::element_count(shape) || offset > payload.size() ||
          count * sizeof(double) > payload.size() - offset) {
        throw FormatError("tensor " + full + " lies outside the payload");
      }
      std::vector<double> data(count);
      std::memcpy(data.data(), payload.data() + offset, count * sizeof(double));
      nn::Tensor t(shape, std::move(data));
      const auto slash = full.find('/');
      if (slash == std::string::npos) throw FormatError("unnamed tensor group in " + full);
      const std::string group = full.substr(0, slash);
      const std::string name = full.substr(slash + 1);
      std::optional<NamedTensors>* target = nullptr;
      if (group == "deg") target = &ck.deg_params;
      else if (group == "re") target = &ck.re_params;
      else if (group == "disc_low") target = &ck.disc_low;
      else if (group == "disc_de") target = &ck.disc_de;
      if (group == "opt") {
        ck.optimizer_tensors.emplace(name, std::move(t));
      } else if (target && *target) {
        (*target)->emplace(name, std::move(t));
      } else {
        throw FormatError("tensor " + full + " belongs to no declared group");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  if (ck.stage != 1 && ck.stage != 2) throw FormatError("checkpoint stage must be 1 or 2");
  if (ck.stage == 2 && (!ck.deg_params || !ck.re_params)) {
    throw FormatError("stage-2 checkpoint lacks generator parameters");
  }
  if (expected && config_digest(*expected) != ck.config_digest) {
    throw ConfigMismatchError("checkpoint " + path.string() +
                              " was saved with a different configuration");
  }
  return ck;
}

std::string file_digest(const fs::path& path) { return fnv1a_hex(read_file(path)); }

}  // namespace drgn
