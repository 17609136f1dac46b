#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "kifsod/box.hpp"
#include "kifsod/synthgen.hpp"

namespace kifsod {

/// One scored detection. `image_id` indexes the ground-truth image list it is evaluated against.
struct DetectionRecord {
  int image_id = 0;
  Box box;
  double score = 0;  // in [0, 1]
  ClassId class_id = 0;
};

struct ScoredBox {
  Box box;
  double score = 0;
};

/// Area thresholds (px^2) separating small / medium / large ground truths.
struct SizeBuckets {
  double small_max_area = 24.0 * 24.0;
  double medium_max_area = 40.0 * 40.0;

  std::string bucket_of(const Box& b) const;
};

struct MetricReport {
  std::map<ClassId, double> per_class_ap;
  double bap = 0;
  double nap = 0;
  /// topN -> bucket ("all", "small", "medium", "large") -> recall.
  std::map<int, std::map<std::string, double>> ar;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// Per-class AP with all-point interpolated precision/recall.
///
/// Detections of a class are visited by descending score, ties broken by image id and then by box
/// coordinates (lexicographic), and greedily matched to the highest-IoU ground truth of the same
/// class in the same image; a ground truth can be claimed once. Classes without ground truth are
/// left out of per_class_ap and of the bAP/nAP means.
MetricReport compute_ap(std::span<const DetectionRecord> detections, std::span<const AnnotatedImage> ground_truth,
                        double iou_threshold, const ClassSplit& split);

/// AP averaged over the ten IoU thresholds 0.50:0.05:0.95.
MetricReport compute_ap_range(std::span<const DetectionRecord> detections, std::span<const AnnotatedImage> ground_truth,
                              const ClassSplit& split);

/// Fraction of ground truths covered (IoU >= threshold) by one of the image's top-N proposals by
/// score. Keys: "all" plus every size bucket that holds at least one ground truth. Images missing
/// from `proposals` have no proposals. When `class_filter` is non-empty only ground truths of those
/// classes count.
std::map<std::string, double> proposal_recall(const std::map<int, std::vector<ScoredBox>>& proposals,
                                              std::span<const AnnotatedImage> ground_truth, double iou_threshold,
                                              int top_n, const SizeBuckets& buckets = {},
                                              std::span<const ClassId> class_filter = {});

/// proposal_recall averaged over IoU thresholds 0.50:0.05:0.95.
std::map<std::string, double> average_recall(const std::map<int, std::vector<ScoredBox>>& proposals,
                                             std::span<const AnnotatedImage> ground_truth, int top_n,
                                             const SizeBuckets& buckets = {},
                                             std::span<const ClassId> class_filter = {});

}  // namespace kifsod
