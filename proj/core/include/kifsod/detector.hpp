#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kifsod/evalkit.hpp"
#include "kifsod/layers.hpp"
#include "kifsod/rng.hpp"
#include "kifsod/synthgen.hpp"

namespace kifsod {

enum class ClassifierKind { linear, cosine };
std::string to_string(ClassifierKind kind);
ClassifierKind classifier_kind_from_string(const std::string& s);

/// Parameter groups of the two-stage detector. backbone/proposal/roi_head form the embedding
/// model; classifier and regressor form the base learner.
enum class Component { backbone, proposal, roi_head, classifier, regressor };
inline constexpr std::array<Component, 5> kAllComponents{Component::backbone, Component::proposal, Component::roi_head,
                                                         Component::classifier, Component::regressor};
std::string to_string(Component c);
Component component_from_string(const std::string& s);

struct Dense {
  Matrix weight;
  Vector bias;
};

/// Desk-scale architecture: three stride-2 3x3 conv blocks, a 1x1 proposal head over a single
/// square anchor per cell, RoI-align to pooled x pooled, two fully connected layers to the embedding.
struct DetectorArch {
  int image_size = 128;
  std::array<int, 3> channels{16, 32, 64};
  int anchor_size = 32;
  int pooled = 4;
  int hidden = 128;
  int embedding_dim = 64;
  double cosine_scale = 20.0;

  int stride() const { return 8; }
  int feature_size() const { return image_size / stride(); }
  int pooled_dim() const { return pooled * pooled * channels[2]; }
  auto operator<=>(const DetectorArch&) const = default;
};

struct DetectorParams {
  DetectorArch arch;
  std::array<Dense, 3> backbone;  // conv weights are (out x 9*in) over im2col patches
  Dense proposal;                 // row 0 objectness logit, rows 1-4 anchor deltas
  std::array<Dense, 2> roi_head;
  Dense classifier;  // one row per entry of class_ids, then the background row
  Dense regressor;   // 4 x d, shared by all classes
  std::vector<ClassId> class_ids;
  ClassifierKind classifier_kind = ClassifierKind::linear;

  int num_classes() const { return static_cast<int>(class_ids.size()); }
  int background_row() const { return num_classes(); }
  /// Classifier row of class `c`, or -1.
  int row_of(ClassId c) const;
};

/// He-normal weights, zero biases; the classifier is sized for `class_ids` plus background.
DetectorParams init_detector(const DetectorArch& arch, std::vector<ClassId> class_ids, ClassifierKind kind,
                             std::uint64_t seed);
/// Same shapes as `p`, all zeros. Used as a gradient accumulator.
DetectorParams zeros_like(const DetectorParams& p);

/// Flat view of one parameter tensor.
struct TensorView {
  Component component;
  int block;         // backbone / roi_head layer index, 0 elsewhere
  std::string name;  // e.g. "conv1.weight"
  bool is_bias;
  std::vector<int> shape;
  std::span<double> data;
};

std::vector<TensorView> tensor_views(DetectorParams& p);
std::size_t parameter_count(const DetectorParams& p, Component c);

// ---------------------------------------------------------------------------------------------
// Box coding

/// Faster R-CNN box parameterization with per-coordinate weights.
struct BoxCoder {
  std::array<double, 4> weights{1, 1, 1, 1};

  Eigen::Vector4d encode(const Box& reference, const Box& target) const;
  Box decode(const Box& reference, const Eigen::Ref<const Eigen::Vector4d>& deltas) const;
};

inline constexpr BoxCoder kAnchorCoder{{1, 1, 1, 1}};
inline constexpr BoxCoder kRoiCoder{{10, 10, 5, 5}};

// Assignment thresholds.
inline constexpr double kPositiveIou = 0.5;
inline constexpr double kBackgroundIou = 0.3;
inline constexpr double kProposalNmsIou = 0.7;

/// Anchor boxes, one per feature cell, in cell order.
std::vector<Box> make_anchors(const DetectorArch& arch);

// ---------------------------------------------------------------------------------------------
// Forward

using Proposal = ScoredBox;

struct ForwardOptions {
  int proposal_cap = 64;
  double dropout_rate = 0.0;
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct ForwardOutput {
  std::vector<Proposal> proposals;
  Matrix embeddings;    // d x N
  Matrix class_logits;  // (C+1) x N
  Matrix box_deltas;    // 4 x N, RoI-coded against the proposal
};

/// Full two-stage pass. Dropout hits the embedding only on the classifier path and only when
/// `training` is set; inference is a pure function of (params, image, cap).
ForwardOutput forward(const DetectorParams& params, const AnnotatedImage& image, const ForwardOptions& options);

/// Objectness-ranked proposals after NMS, at most `proposal_cap`.
std::vector<Proposal> propose(const DetectorParams& params, const AnnotatedImage& image, int proposal_cap);

/// Inverted-dropout multipliers: each entry is 0 with probability `rate`, else 1/(1-rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

struct InstanceFeature {
  ClassId class_id;
  Vector embedding;
};

/// Embeddings of every ground-truth box (RoI-aligned on the box itself) under `views` augmented
/// copies of the image. View 0 is the un-augmented image; later views draw a random zoom and flip
/// from `seed`. Result is ordered view-major, annotation-minor.
std::vector<InstanceFeature> extract_instance_features(const DetectorParams& params, const AnnotatedImage& image,
                                                       int views, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Losses

/// Mean softmax cross-entropy over columns whose target is >= 0 (-1 = ignored).
double softmax_cross_entropy(const Matrix& logits, std::span<const int> targets, Matrix* grad_logits);

/// Mean over positive columns of the per-column sum of smooth-L1(pred - target).
double smooth_l1_loss(const Matrix& pred, const Matrix& target, std::span<const char> positive, double beta,
                      Matrix* grad_pred);

/// 0.5 x mean BCE over label-1 entries + 0.5 x mean BCE over label-0 entries (-1 = ignored).
double balanced_bce(const Eigen::Ref<const Vector>& logits, std::span<const int> labels, Vector* grad_logits);

struct RoiTargets {
  std::vector<int> labels;     // classifier row, background row, or -1 (ignored)
  std::vector<char> positive;  // IoU >= kPositiveIou
  Matrix deltas;               // 4 x N regression targets (valid for positive columns)
};

RoiTargets assign_roi_targets(const DetectorParams& params, std::span<const Box> rois, const AnnotatedImage& image);

struct LossBreakdown {
  double rpn = 0;
  double cls = 0;
  double loc = 0;

  double total() const { return rpn + cls + loc; }
};

/// Which parameters receive gradients. Frozen parts are skipped, and backpropagation stops below
/// the lowest trainable layer.
struct GradientScope {
  std::array<bool, 3> backbone_blocks{true, true, true};
  bool proposal = true;
  bool roi_head = true;
  bool classifier = true;
  bool regressor = true;

  bool any_backbone() const { return backbone_blocks[0] || backbone_blocks[1] || backbone_blocks[2]; }
};

struct LossOptions {
  int proposal_cap = 32;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;          // dropout masks
  bool gradient_stop_rpn = false;  // keep L_rpn gradients out of the backbone
  double rpn_weight = 1.0;         // multiplier on L_rpn in the total
  /// Replaces the proposal module's boxes per image (ground truths are still appended). Used to
  /// hold the RoI set fixed, e.g. for finite-difference checks.
  const std::vector<std::vector<Box>>* fixed_proposals = nullptr;
};

/// L^S = L_rpn + L_cls + L_loc averaged over the batch; the reported rpn term includes rpn_weight. Throws
/// NumericalError naming the component when any term is not finite.
LossBreakdown compute_loss(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                           const LossOptions& options);

/// As compute_loss, and accumulates d(L^S)/d(params) into `grad` (which must have params' shapes).
LossBreakdown compute_loss_and_gradient(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                                        const LossOptions& options, const GradientScope& scope, DetectorParams& grad);

/// Proposal boxes the loss would use for each image (before ground truths are appended).
std::vector<std::vector<Box>> training_proposals(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                                                 int proposal_cap);

// ---------------------------------------------------------------------------------------------
// Inference

struct DetectOptions {
  int proposal_cap = 64;
  double score_threshold = 0.001;
  double nms_iou = 0.5;
  int max_per_image = 100;
};

std::vector<DetectionRecord> detect(const DetectorParams& params, const AnnotatedImage& image, int image_id,
                                    const DetectOptions& options = {});
std::vector<DetectionRecord> detect_all(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                        const DetectOptions& options = {});

/// Proposals for every image keyed by index, for recall measurements.
std::map<int, std::vector<ScoredBox>> propose_all(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                                  int proposal_cap);

/// detect_all + compute_ap at IoU 0.5.
MetricReport evaluate_ap50(const DetectorParams& params, std::span<const AnnotatedImage> images,
                           const ClassSplit& split, const DetectOptions& options = {});

}  // namespace kifsod
