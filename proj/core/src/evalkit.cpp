#include "kifsod/evalkit.hpp"

#include <algorithm>
#include <numeric>

#include "kifsod/error.hpp"

namespace kifsod {

using nlohmann::json;

std::string SizeBuckets::bucket_of(const Box& b) const {
  const double a = b.area();
  if (a < small_max_area) return "small";
  if (a < medium_max_area) return "medium";
  return "large";
}

void to_json(json& j, const MetricReport& r) {
  json ap = json::object();
  for (const auto& [c, v] : r.per_class_ap) ap[std::to_string(c)] = v;
  json ar = json::object();
  for (const auto& [n, buckets] : r.ar) ar[std::to_string(n)] = buckets;
  j = json{{"per_class_ap", ap}, {"bAP", r.bap}, {"nAP", r.nap}, {"ar", ar}};
}

void from_json(const json& j, MetricReport& r) {
  r = {};
  for (const auto& [k, v] : j.at("per_class_ap").items()) r.per_class_ap[std::stoi(k)] = v.get<double>();
  r.bap = j.at("bAP").get<double>();
  r.nap = j.at("nAP").get<double>();
  for (const auto& [k, v] : j.at("ar").items()) r.ar[std::stoi(k)] = v.get<std::map<std::string, double>>();
}

namespace {

double interpolated_ap(const std::vector<char>& is_tp, int num_gt) {
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    rec.push_back(static_cast<double>(tp) / num_gt);
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), rec.begin(), rec.end());
  mpre.insert(mpre.end(), prec.begin(), prec.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0;
  for (std::size_t i = 1; i < mrec.size(); ++i) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

double mean_over(const std::map<ClassId, double>& ap, const std::vector<ClassId>& ids) {
  double sum = 0;
  int n = 0;
  for (ClassId c : ids) {
    if (auto it = ap.find(c); it != ap.end()) {
      sum += it->second;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

}  // namespace

MetricReport compute_ap(std::span<const DetectionRecord> detections, std::span<const AnnotatedImage> ground_truth,
                        double iou_threshold, const ClassSplit& split) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw ConfigError("iou_threshold must be in (0, 1)");
  const std::vector<ClassId> classes = split.all();

  std::map<ClassId, std::vector<const DetectionRecord*>> by_class;
  for (const DetectionRecord& d : detections) {
    if (std::find(classes.begin(), classes.end(), d.class_id) == classes.end())
      throw DataError("detection names unknown class id " + std::to_string(d.class_id));
    if (d.image_id < 0 || d.image_id >= static_cast<int>(ground_truth.size()))
      throw DataError("detection names unknown image id " + std::to_string(d.image_id));
    if (!(d.score >= 0 && d.score <= 1)) throw DataError("detection score outside [0, 1]");
    by_class[d.class_id].push_back(&d);
  }

  MetricReport report;
  for (ClassId c : classes) {
    int num_gt = 0;
    std::vector<std::vector<char>> claimed(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
      claimed[i].assign(ground_truth[i].labels.size(), 0);
      num_gt += static_cast<int>(std::count(ground_truth[i].labels.begin(), ground_truth[i].labels.end(), c));
    }
    if (num_gt == 0) continue;

    auto& dets = by_class[c];
    std::sort(dets.begin(), dets.end(), [](const DetectionRecord* a, const DetectionRecord* b) {
      if (a->score != b->score) return a->score > b->score;
      if (a->image_id != b->image_id) return a->image_id < b->image_id;
      return a->box < b->box;
    });

    std::vector<char> is_tp;
    is_tp.reserve(dets.size());
    for (const DetectionRecord* d : dets) {
      const AnnotatedImage& img = ground_truth[static_cast<std::size_t>(d->image_id)];
      double best = -1;
      int best_idx = -1;
      for (std::size_t g = 0; g < img.labels.size(); ++g) {
        if (img.labels[g] != c) continue;
        const double iou = match_iou(d->box, img.boxes[g]);
        if (iou > best) {
          best = iou;
          best_idx = static_cast<int>(g);
        }
      }
      auto& flags = claimed[static_cast<std::size_t>(d->image_id)];
      if (best_idx >= 0 && best >= iou_threshold && !flags[static_cast<std::size_t>(best_idx)]) {
        flags[static_cast<std::size_t>(best_idx)] = 1;
        is_tp.push_back(1);
      } else {
        is_tp.push_back(0);
      }
    }
    report.per_class_ap[c] = interpolated_ap(is_tp, num_gt);
  }
  report.bap = mean_over(report.per_class_ap, split.base);
  report.nap = mean_over(report.per_class_ap, split.novel);
  return report;
}

MetricReport compute_ap_range(std::span<const DetectionRecord> detections, std::span<const AnnotatedImage> ground_truth,
                              const ClassSplit& split) {
  MetricReport acc;
  constexpr int kSteps = 10;
  for (int t = 0; t < kSteps; ++t) {
    const MetricReport r = compute_ap(detections, ground_truth, 0.5 + 0.05 * t, split);
    for (const auto& [c, v] : r.per_class_ap) acc.per_class_ap[c] += v / kSteps;
    acc.bap += r.bap / kSteps;
    acc.nap += r.nap / kSteps;
  }
  return acc;
}

std::map<std::string, double> proposal_recall(const std::map<int, std::vector<ScoredBox>>& proposals,
                                              std::span<const AnnotatedImage> ground_truth, double iou_threshold,
                                              int top_n, const SizeBuckets& buckets,
                                              std::span<const ClassId> class_filter) {
  if (top_n < 1) throw ConfigError("topN must be at least 1");
  std::map<std::string, int> total, hit;
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    std::vector<ScoredBox> top;
    if (auto it = proposals.find(static_cast<int>(i)); it != proposals.end()) top = it->second;
    std::stable_sort(top.begin(), top.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
    if (static_cast<int>(top.size()) > top_n) top.resize(static_cast<std::size_t>(top_n));

    const AnnotatedImage& img = ground_truth[i];
    for (std::size_t g = 0; g < img.boxes.size(); ++g) {
      if (!class_filter.empty() &&
          std::find(class_filter.begin(), class_filter.end(), img.labels[g]) == class_filter.end())
        continue;
      const bool covered = std::any_of(
          top.begin(), top.end(), [&](const ScoredBox& p) { return match_iou(p.box, img.boxes[g]) >= iou_threshold; });
      for (const std::string& key : {std::string("all"), buckets.bucket_of(img.boxes[g])}) {
        ++total[key];
        hit[key] += covered;
      }
    }
  }
  std::map<std::string, double> recall;
  for (const auto& [key, n] : total) recall[key] = static_cast<double>(hit[key]) / n;
  return recall;
}

std::map<std::string, double> average_recall(const std::map<int, std::vector<ScoredBox>>& proposals,
                                             std::span<const AnnotatedImage> ground_truth, int top_n,
                                             const SizeBuckets& buckets, std::span<const ClassId> class_filter) {
  std::map<std::string, double> acc;
  constexpr int kSteps = 10;
  for (int t = 0; t < kSteps; ++t) {
    for (const auto& [k, v] : proposal_recall(proposals, ground_truth, 0.5 + 0.05 * t, top_n, buckets, class_filter))
      acc[k] += v / kSteps;
  }
  return acc;
}

}  // namespace kifsod
