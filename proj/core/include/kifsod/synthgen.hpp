#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kifsod/box.hpp"

namespace kifsod {

enum class Shape { circle, square, triangle, star };
enum class Color { red, green, blue };

struct ShapeClass {
  ClassId id;
  Shape shape;
  Color color;
  std::string name;
};

/// The 12 shape x color categories. Ids 0-7 are the default base split, 8-11 the novel split.
const std::vector<ShapeClass>& shape_classes();

/// Base/novel partition of the label space.
struct ClassSplit {
  std::vector<ClassId> base;
  std::vector<ClassId> novel;

  bool is_base(ClassId c) const;
  bool is_novel(ClassId c) const;
  /// Base ids followed by novel ids.
  std::vector<ClassId> all() const;
};

struct DatasetSpec {
  int image_size = 128;
  int num_classes = 12;
  std::vector<ClassId> base_class_ids{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<ClassId> novel_class_ids{8, 9, 10, 11};
  int min_objects = 1;
  int max_objects = 4;
  int min_object_size = 16;
  int max_object_size = 48;
  double max_gt_overlap_iou = 0.3;
  double background_noise_std = 0.04;
  std::uint64_t seed = 0;

  /// Throws ConfigError when the split is not a partition of 0..num_classes-1 or ranges are invalid.
  void validate() const;
  ClassSplit split() const { return {base_class_ids, novel_class_ids}; }
};

/// Image plus its ground truth. Pixels are row-major H x W x 3 (RGB) in [0, 1].
struct AnnotatedImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
  std::vector<Box> boxes;
  std::vector<ClassId> labels;

  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::size_t num_annotations() const { return boxes.size(); }
};

/// Maximum placement attempts per object before it is dropped.
inline constexpr int kMaxPlacementAttempts = 100;

/// Renders `num_images` images whose objects are drawn only from `class_filter`.
/// Image i uses a generator seeded from (spec.seed, class_filter, i), so the output is a pure
/// function of the arguments and independent of generation order.
std::vector<AnnotatedImage> generate_dataset(const DatasetSpec& spec, int num_images,
                                             std::span<const ClassId> class_filter);

/// Renders one image; generate_dataset is a loop over this.
AnnotatedImage generate_image(const DatasetSpec& spec, std::span<const ClassId> class_filter,
                              std::uint64_t image_index);

struct FewShotSet {
  std::vector<AnnotatedImage> images;
  std::map<ClassId, int> per_class_instance_count;
  int k = 0;
  std::vector<std::string> warnings;

  std::size_t num_instances() const;
};

/// Builds the class-balanced K-shot set D_few from the novel pool and the base pool.
///
/// Shots are counted per instance. Images are taken whole (every annotation kept) while that keeps
/// every class at or below K; once no whole image fits, the remaining shots come from images whose
/// surplus annotations are removed. Each image appears at most once. A class with fewer than K
/// instances contributes what exists and a warning is recorded; a class with none is an error.
FewShotSet build_fewshot_set(std::span<const AnnotatedImage> novel_pool, std::span<const AnnotatedImage> base_pool,
                             const ClassSplit& split, int k, std::uint64_t seed);

enum class BatchMode { image_level, instance_level };

/// Draws `batch_size` training images from the few-shot set. Without replacement when the pool is
/// large enough, with replacement otherwise. image_level keeps every annotation of a drawn image;
/// instance_level draws (image, annotation) pairs and strips all other annotations, leaving the
/// pixels untouched.
std::vector<AnnotatedImage> sample_batch(const FewShotSet& fewshot, BatchMode mode, int batch_size, std::uint64_t seed);

std::string to_string(BatchMode mode);
BatchMode batch_mode_from_string(const std::string& s);

}  // namespace kifsod
