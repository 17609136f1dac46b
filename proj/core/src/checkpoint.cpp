#include "kifsod/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "kifsod/error.hpp"

namespace kifsod {

namespace {

constexpr char kMagic[8] = {'K', 'I', 'F', 'S', 'O', 'D', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

void to_json(nlohmann::json& j, const DetectorArch& a) {
  j = {{"image_size", a.image_size},
       {"channels", a.channels},
       {"anchor_size", a.anchor_size},
       {"pooled", a.pooled},
       {"hidden", a.hidden},
       {"embedding_dim", a.embedding_dim},
       {"cosine_scale", a.cosine_scale}};
}

void from_json(const nlohmann::json& j, DetectorArch& a) {
  a.image_size = j.at("image_size").get<int>();
  a.channels = j.at("channels").get<std::array<int, 3>>();
  a.anchor_size = j.at("anchor_size").get<int>();
  a.pooled = j.at("pooled").get<int>();
  a.hidden = j.at("hidden").get<int>();
  a.embedding_dim = j.at("embedding_dim").get<int>();
  a.cosine_scale = j.at("cosine_scale").get<double>();
}

void save_checkpoint(const std::filesystem::path& path, const DetectorParams& params, const nlohmann::json& config) {
  DetectorParams copy = params;
  nlohmann::json components = nlohmann::json::object();
  for (Component c : kAllComponents) components[to_string(c)] = nlohmann::json::array();
  std::string payload;
  for (const TensorView& t : tensor_views(copy)) {
    components[to_string(t.component)].push_back({{"name", t.name},
                                                  {"block", t.block},
                                                  {"shape", t.shape},
                                                  {"offset", payload.size()},
                                                  {"count", t.data.size()}});
    for (double v : t.data) put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  nlohmann::json header = {{"format", "kifsod-checkpoint"},
                           {"version", 1},
                           {"arch", params.arch},
                           {"classifier_kind", to_string(params.classifier_kind)},
                           {"class_ids", params.class_ids},
                           {"dtype", "float32-le"},
                           {"payload_bytes", payload.size()},
                           {"components", components},
                           {"config", config}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  const std::uint64_t len = get_u64(raw + 8);
  if (len > bytes.size() - 16) throw DataError(path.string() + ": truncated header");

  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    const auto arch = ck.header.at("arch").get<DetectorArch>();
    const auto ids = ck.header.at("class_ids").get<std::vector<ClassId>>();
    const auto kind = classifier_kind_from_string(ck.header.at("classifier_kind").get<std::string>());
    ck.params = init_detector(arch, ids, kind, 0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }

  const std::size_t payload_start = 16 + len;
  const std::size_t payload_size = bytes.size() - payload_start;
  const auto& components = ck.header.at("components");
  for (TensorView& t : tensor_views(ck.params)) {
    const nlohmann::json* entry = nullptr;
    for (const auto& e : components.at(to_string(t.component)))
      if (e.at("name") == t.name) entry = &e;
    if (!entry) throw DataError(path.string() + ": missing tensor " + to_string(t.component) + "/" + t.name);
    if (entry->at("shape").get<std::vector<int>>() != t.shape)
      throw DataError(path.string() + ": shape mismatch for " + to_string(t.component) + "/" + t.name);
    const auto offset = entry->at("offset").get<std::size_t>();
    if (offset + 4 * t.data.size() > payload_size) throw DataError(path.string() + ": truncated payload");
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = std::bit_cast<float>(get_u32(raw + payload_start + offset + 4 * i));
  }
  return ck;
}

void round_to_checkpoint_precision(DetectorParams& params) {
  for (TensorView& t : tensor_views(params))
    for (double& v : t.data) v = static_cast<float>(v);
}

}  // namespace kifsod
