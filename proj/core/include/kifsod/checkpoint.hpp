#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "kifsod/detector.hpp"

namespace kifsod {

void to_json(nlohmann::json& j, const DetectorArch& a);
void from_json(const nlohmann::json& j, DetectorArch& a);

struct Checkpoint {
  DetectorParams params;
  nlohmann::json header;  // the parsed header, including the caller's `config` block
};

/// Binary container: 8-byte magic "KIFSODCK", little-endian uint64 header length, a JSON header,
/// then every tensor as little-endian float32. The header lists each tensor under its component
/// ("backbone", "proposal", "roi_head", "classifier", "regressor") with shape and byte offset into
/// the payload, plus the architecture, classifier kind and class ids. Matrices are stored
/// column-major. `config` is stored verbatim under "config".
void save_checkpoint(const std::filesystem::path& path, const DetectorParams& params,
                     const nlohmann::json& config = nlohmann::json::object());

/// Throws DataError on a missing, truncated or malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter through float32, the precision checkpoints store.
void round_to_checkpoint_precision(DetectorParams& params);

}  // namespace kifsod
