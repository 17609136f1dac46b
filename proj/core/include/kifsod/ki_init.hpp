#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "kifsod/detector.hpp"

namespace kifsod {

enum class InitMode { random, l2norm, alr, imprinted };
std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string& s);

using CentroidMap = std::map<ClassId, Vector>;

struct CentroidSet {
  CentroidMap raw_aggregates;  // per-class feature means
  CentroidMap centroids;       // rows to install
  double ratio = 1.0;          // length ratio used by alr, 1 otherwise
  InitMode mode = InitMode::l2norm;
};

void to_json(nlohmann::json& j, const CentroidSet& c);
void from_json(const nlohmann::json& j, CentroidSet& c);

struct LengthStats {
  double feature_length_mean = 0;
  double feature_length_std = 0;
  double centroid_length_mean = 0;
  double centroid_length_std = 0;

  double feature_cv() const { return feature_length_mean > 0 ? feature_length_std / feature_length_mean : 0.0; }
};

void to_json(nlohmann::json& j, const LengthStats& s);

/// Per-class arithmetic mean of the feature vectors. Each class divides by its own count.
CentroidMap aggregate_centroids(std::span<const InstanceFeature> features);

/// Mean length of the per-class feature means over the classes of `base_centroids`, divided by
/// the mean length of those centroids. Throws DataError if a class has no features and
/// DegenerateGeometryError if either mean length is zero.
double estimate_alr_ratio(std::span<const InstanceFeature> base_features, const CentroidMap& base_centroids);

/// l2norm / imprinted: unit-length rows; alr: rows divided by `ratio`. mode=random is built by
/// random_centroids instead. Throws DegenerateGeometryError naming a class whose mean is zero.
CentroidSet make_novel_centroids(const CentroidMap& raw, InitMode mode, double ratio = 1.0);

/// The randomly initialized baseline: N(0, 0.01^2) rows drawn from `seed`.
CentroidSet random_centroids(std::span<const ClassId> class_ids, int dim, std::uint64_t seed);

/// Writes the centroids into their classifier rows and zeroes those biases. Every other parameter
/// is left bitwise untouched. mode=imprinted also switches the classifier to cosine scoring.
/// Throws ShapeError on a dimension mismatch and ConfigError for a class the classifier lacks.
DetectorParams install_centroids(const DetectorParams& params, const CentroidSet& centroids);

/// Classifier rows of `class_ids` (background excluded).
CentroidMap classifier_rows(const DetectorParams& params, std::span<const ClassId> class_ids);

/// Lengths of per-class feature means and of the given centroids; population standard deviation.
LengthStats hypersphere_stats(std::span<const InstanceFeature> features, const CentroidMap& centroids);

/// Ground-truth-box features of every image under `views` augmented copies. Image i draws its
/// views from derive_seed(seed, i).
std::vector<InstanceFeature> collect_features(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                              int views, std::uint64_t seed);

/// Everything the KI initializer needs from one model and one few-shot set.
struct KiEstimate {
  CentroidSet centroids;
  LengthStats stats;
  std::vector<InstanceFeature> base_features;
  std::vector<InstanceFeature> novel_features;
};

/// Extracts features of the few-shot images, estimates the ratio from the base classes against
/// the classifier's base rows, and builds `mode` centroids for the novel classes. `params` is the
/// pretrained (not yet extended) model.
KiEstimate estimate_knowledge_inheritance(const DetectorParams& params, std::span<const AnnotatedImage> fewshot_images,
                                          const ClassSplit& split, InitMode mode, int views, std::uint64_t seed);

/// CSV "class_id,is_centroid,v0,...,v{d-1}" with 6 decimals: every feature, then every centroid,
/// each scaled to unit length. Zero vectors raise DegenerateGeometryError.
void dump_embeddings(const std::filesystem::path& path, std::span<const InstanceFeature> features,
                     const CentroidMap& centroids);

struct EmbeddingRow {
  ClassId class_id = 0;
  bool is_centroid = false;
  Vector values;
};

std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path);

}  // namespace kifsod
