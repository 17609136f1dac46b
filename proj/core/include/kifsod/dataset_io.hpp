#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "kifsod/synthgen.hpp"

namespace kifsod {

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

/// A dataset directory: manifest.json plus one binary PPM (8-bit RGB) per record.
struct StoredDataset {
  DatasetSpec spec;
  std::string pool;  // "base_train", "novel_pool", "episode", ...
  std::vector<AnnotatedImage> images;
  nlohmann::json manifest;  // full manifest, including any extra fields
};

/// Writes `images` under `dir`. `extra` fields are merged into the manifest root.
void save_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const std::string& pool,
                  const std::vector<AnnotatedImage>& images, const nlohmann::json& extra = nlohmann::json::object());
StoredDataset load_dataset(const std::filesystem::path& dir);

void save_fewshot_set(const std::filesystem::path& dir, const DatasetSpec& spec, const FewShotSet& fewshot,
                      std::uint64_t seed);
FewShotSet load_fewshot_set(const std::filesystem::path& dir, DatasetSpec* spec = nullptr);

void write_ppm(const std::filesystem::path& path, const AnnotatedImage& image);
/// Reads pixels only; annotations are left empty.
AnnotatedImage read_ppm(const std::filesystem::path& path);

}  // namespace kifsod
