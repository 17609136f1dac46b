#include "kifsod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detector_internal.hpp"
#include "kifsod/augment.hpp"
#include "kifsod/error.hpp"

namespace kifsod {

std::string to_string(ClassifierKind kind) { return kind == ClassifierKind::linear ? "linear" : "cosine"; }

ClassifierKind classifier_kind_from_string(const std::string& s) {
  if (s == "linear") return ClassifierKind::linear;
  if (s == "cosine") return ClassifierKind::cosine;
  throw ConfigError("unknown classifier kind '" + s + "'");
}

std::string to_string(Component c) {
  switch (c) {
    case Component::backbone:
      return "backbone";
    case Component::proposal:
      return "proposal";
    case Component::roi_head:
      return "roi_head";
    case Component::classifier:
      return "classifier";
    case Component::regressor:
      return "regressor";
  }
  return "?";
}

Component component_from_string(const std::string& s) {
  for (Component c : kAllComponents) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown component '" + s + "'");
}

int DetectorParams::row_of(ClassId c) const {
  const auto it = std::find(class_ids.begin(), class_ids.end(), c);
  return it == class_ids.end() ? -1 : static_cast<int>(it - class_ids.begin());
}

namespace {

Dense gaussian_dense(int out, int in, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Dense d;
  d.weight = Matrix::NullaryExpr(out, in, [&]() { return dist(rng); });
  d.bias = Vector::Zero(out);
  return d;
}

Dense zeros_dense(const Dense& d) {
  return {Matrix::Zero(d.weight.rows(), d.weight.cols()), Vector::Zero(d.bias.size())};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

DetectorParams init_detector(const DetectorArch& arch, std::vector<ClassId> class_ids, ClassifierKind kind,
                             std::uint64_t seed) {
  if (arch.image_size % arch.stride() != 0) throw ConfigError("image_size must be a multiple of the backbone stride");
  if (class_ids.empty()) throw ConfigError("detector needs at least one class");
  Rng rng(seed);
  DetectorParams p;
  p.arch = arch;
  int in = 3;
  for (int b = 0; b < 3; ++b) {
    const int fan_in = 9 * in;
    p.backbone[static_cast<std::size_t>(b)] =
        gaussian_dense(arch.channels[static_cast<std::size_t>(b)], fan_in, std::sqrt(2.0 / fan_in), rng);
    in = arch.channels[static_cast<std::size_t>(b)];
  }
  p.proposal = gaussian_dense(5, arch.channels[2], 0.01, rng);
  p.roi_head[0] = gaussian_dense(arch.hidden, arch.pooled_dim(), std::sqrt(2.0 / arch.pooled_dim()), rng);
  p.roi_head[1] = gaussian_dense(arch.embedding_dim, arch.hidden, std::sqrt(2.0 / arch.hidden), rng);
  p.classifier = gaussian_dense(static_cast<int>(class_ids.size()) + 1, arch.embedding_dim, 0.01, rng);
  p.regressor = gaussian_dense(4, arch.embedding_dim, 0.001, rng);
  p.class_ids = std::move(class_ids);
  p.classifier_kind = kind;
  return p;
}

DetectorParams zeros_like(const DetectorParams& p) {
  DetectorParams z = p;
  for (auto& d : z.backbone) d = zeros_dense(d);
  z.proposal = zeros_dense(z.proposal);
  for (auto& d : z.roi_head) d = zeros_dense(d);
  z.classifier = zeros_dense(z.classifier);
  z.regressor = zeros_dense(z.regressor);
  return z;
}

std::vector<TensorView> tensor_views(DetectorParams& p) {
  std::vector<TensorView> out;
  auto add = [&](Component c, int block, const std::string& prefix, Dense& d) {
    out.push_back({c,
                   block,
                   prefix + "weight",
                   false,
                   {int(d.weight.rows()), int(d.weight.cols())},
                   {d.weight.data(), static_cast<std::size_t>(d.weight.size())}});
    out.push_back({c,
                   block,
                   prefix + "bias",
                   true,
                   {int(d.bias.size())},
                   {d.bias.data(), static_cast<std::size_t>(d.bias.size())}});
  };
  for (int b = 0; b < 3; ++b)
    add(Component::backbone, b, "conv" + std::to_string(b + 1) + ".", p.backbone[static_cast<std::size_t>(b)]);
  add(Component::proposal, 0, "head.", p.proposal);
  for (int b = 0; b < 2; ++b)
    add(Component::roi_head, b, "fc" + std::to_string(b + 1) + ".", p.roi_head[static_cast<std::size_t>(b)]);
  add(Component::classifier, 0, "", p.classifier);
  add(Component::regressor, 0, "", p.regressor);
  return out;
}

std::size_t parameter_count(const DetectorParams& p, Component c) {
  std::size_t n = 0;
  for (const TensorView& t : tensor_views(const_cast<DetectorParams&>(p))) {
    if (t.component == c) n += t.data.size();
  }
  return n;
}

// ---------------------------------------------------------------------------------------------

Eigen::Vector4d BoxCoder::encode(const Box& r, const Box& t) const {
  return {weights[0] * (t.center_x() - r.center_x()) / r.width(),
          weights[1] * (t.center_y() - r.center_y()) / r.height(), weights[2] * std::log(t.width() / r.width()),
          weights[3] * std::log(t.height() / r.height())};
}

Box BoxCoder::decode(const Box& r, const Eigen::Ref<const Eigen::Vector4d>& d) const {
  static const double kMaxLog = std::log(1000.0 / 16.0);
  const double cx = r.center_x() + d[0] / weights[0] * r.width();
  const double cy = r.center_y() + d[1] / weights[1] * r.height();
  const double w = r.width() * std::exp(std::min(d[2] / weights[2], kMaxLog));
  const double h = r.height() * std::exp(std::min(d[3] / weights[3], kMaxLog));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Box> make_anchors(const DetectorArch& arch) {
  const int fs = arch.feature_size();
  const double s = arch.stride(), half = 0.5 * arch.anchor_size;
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(fs * fs));
  for (int i = 0; i < fs; ++i) {
    for (int j = 0; j < fs; ++j) {
      const double cx = (j + 0.5) * s, cy = (i + 0.5) * s;
      anchors.push_back({cx - half, cy - half, cx + half, cy + half});
    }
  }
  return anchors;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  return Matrix::NullaryExpr(rows, cols, [&]() { return keep(rng) ? scale : 0.0; });
}

namespace detail {

void check_image(const DetectorParams& p, const AnnotatedImage& image) {
  if (image.width != p.arch.image_size || image.height != p.arch.image_size)
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     ", detector expects " + std::to_string(p.arch.image_size) + "x" +
                     std::to_string(p.arch.image_size));
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw ShapeError("pixel buffer does not match image dimensions");
}

Matrix image_to_input(const AnnotatedImage& image) {
  const Eigen::Index n = static_cast<Eigen::Index>(image.width) * image.height;
  Eigen::Map<const Eigen::Matrix<float, 3, Eigen::Dynamic>> px(image.pixels.data(), 3, n);
  return px.cast<double>().array() - 0.5;
}

BackboneTrace run_backbone(const DetectorParams& p, const AnnotatedImage& image, bool keep_cols) {
  check_image(p, image);
  BackboneTrace t;
  Matrix input = image_to_input(image);
  int h = image.height, w = image.width, c = 3;
  for (std::size_t b = 0; b < 3; ++b) {
    const ConvGeometry g{h, w, c, 3, 2, 1};
    Matrix cols = im2col(b == 0 ? input : t.act[b - 1], g);
    Matrix pre = p.backbone[b].weight * cols;
    pre.colwise() += p.backbone[b].bias;
    t.act[b] = pre.cwiseMax(0.0);
    t.geom[b] = g;
    if (keep_cols) t.cols[b] = std::move(cols);
    h = g.out_h();
    w = g.out_w();
    c = static_cast<int>(p.backbone[b].weight.rows());
  }
  return t;
}

Matrix run_proposal_head(const DetectorParams& p, const Matrix& features) {
  Matrix out = p.proposal.weight * features;
  out.colwise() += p.proposal.bias;
  return out;
}

std::vector<Proposal> select_proposals(const DetectorParams& p, const Matrix& rpn, int proposal_cap) {
  const std::vector<Box> anchors = make_anchors(p.arch);
  const double size = p.arch.image_size;
  std::vector<Proposal> cand;
  cand.reserve(anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto col = static_cast<Eigen::Index>(a);
    const Eigen::Vector4d d = rpn.block<4, 1>(1, col);
    const Box b = clip_box(kAnchorCoder.decode(anchors[a], d), size, size);
    if (b.width() < 2.0 || b.height() < 2.0) continue;
    cand.push_back({b, sigmoid(rpn(0, col))});
  }
  std::stable_sort(cand.begin(), cand.end(), [](const Proposal& x, const Proposal& y) { return x.score > y.score; });
  std::vector<Box> boxes;
  boxes.reserve(cand.size());
  for (const auto& c : cand) boxes.push_back(c.box);
  std::vector<Proposal> out;
  for (int i : nms_sorted(boxes, kProposalNmsIou, proposal_cap)) out.push_back(cand[static_cast<std::size_t>(i)]);
  return out;
}

RoiTrace run_roi_head(const DetectorParams& p, const Matrix& features, std::vector<Box> rois, bool keep_taps,
                      double dropout_rate, Rng* dropout_rng) {
  RoiTrace t;
  t.rois = std::move(rois);
  const int fs = p.arch.feature_size();
  const RoiAlignSpec spec{p.arch.pooled, 2, 1.0 / p.arch.stride()};
  t.pooled = roi_align(features, fs, fs, t.rois, spec, keep_taps ? &t.taps : nullptr);

  Matrix pre1 = p.roi_head[0].weight * t.pooled;
  pre1.colwise() += p.roi_head[0].bias;
  t.h1 = pre1.cwiseMax(0.0);
  Matrix pre2 = p.roi_head[1].weight * t.h1;
  pre2.colwise() += p.roi_head[1].bias;
  t.z = pre2.cwiseMax(0.0);

  if (dropout_rng && dropout_rate > 0.0) {
    t.mask = dropout_mask(t.z.rows(), t.z.cols(), dropout_rate, *dropout_rng);
    t.zc = t.z.cwiseProduct(t.mask);
  } else {
    t.zc = t.z;
  }

  if (p.classifier_kind == ClassifierKind::linear) {
    t.logits = p.classifier.weight * t.zc;
    t.logits.colwise() += p.classifier.bias;
  } else {
    constexpr double kEps = 1e-12;
    t.z_norm = t.zc.colwise().norm().transpose().cwiseMax(kEps);
    t.u = t.zc.array().rowwise() / t.z_norm.transpose().array();
    t.w_norm = p.classifier.weight.rowwise().norm().cwiseMax(kEps);
    t.w_hat = p.classifier.weight.array().colwise() / t.w_norm.array();
    t.logits = p.arch.cosine_scale * (t.w_hat * t.u);
  }
  t.deltas = p.regressor.weight * t.z;
  t.deltas.colwise() += p.regressor.bias;
  return t;
}

}  // namespace detail

ForwardOutput forward(const DetectorParams& params, const AnnotatedImage& image, const ForwardOptions& options) {
  if (!(options.dropout_rate >= 0.0 && options.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (options.proposal_cap < 1) throw ConfigError("proposal_cap must be at least 1");
  const detail::BackboneTrace bb = detail::run_backbone(params, image, false);
  const Matrix rpn = detail::run_proposal_head(params, bb.act[2]);
  ForwardOutput out;
  out.proposals = detail::select_proposals(params, rpn, options.proposal_cap);
  std::vector<Box> rois;
  for (const auto& pr : out.proposals) rois.push_back(pr.box);
  Rng rng(options.dropout_seed);
  detail::RoiTrace t = detail::run_roi_head(params, bb.act[2], std::move(rois), false, options.dropout_rate,
                                            options.training ? &rng : nullptr);
  out.embeddings = std::move(t.z);
  out.class_logits = std::move(t.logits);
  out.box_deltas = std::move(t.deltas);
  return out;
}

std::vector<Proposal> propose(const DetectorParams& params, const AnnotatedImage& image, int proposal_cap) {
  const detail::BackboneTrace bb = detail::run_backbone(params, image, false);
  return detail::select_proposals(params, detail::run_proposal_head(params, bb.act[2]), proposal_cap);
}

std::vector<InstanceFeature> extract_instance_features(const DetectorParams& params, const AnnotatedImage& image,
                                                       int views, std::uint64_t seed) {
  if (image.boxes.empty()) throw DataError("feature extraction needs at least one annotation");
  if (views < 1) throw ConfigError("views must be at least 1");
  Rng rng(seed);
  std::vector<InstanceFeature> out;
  out.reserve(image.boxes.size() * static_cast<std::size_t>(views));
  for (int v = 0; v < views; ++v) {
    const Augmentation aug = v == 0 ? Augmentation{} : draw_augmentation(rng);
    const AnnotatedImage view = apply_augmentation(image, aug);
    const detail::BackboneTrace bb = detail::run_backbone(params, view, false);
    const detail::RoiTrace t = detail::run_roi_head(params, bb.act[2], view.boxes, false, 0.0, nullptr);
    for (std::size_t a = 0; a < view.boxes.size(); ++a)
      out.push_back({view.labels[a], t.z.col(static_cast<Eigen::Index>(a))});
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

std::vector<DetectionRecord> detect(const DetectorParams& params, const AnnotatedImage& image, int image_id,
                                    const DetectOptions& options) {
  const ForwardOutput out = forward(params, image, {options.proposal_cap, 0.0, false, 0});
  const auto n = static_cast<Eigen::Index>(out.proposals.size());
  if (n == 0) return {};
  Matrix prob = (out.class_logits.rowwise() - out.class_logits.colwise().maxCoeff()).array().exp();
  prob.array().rowwise() /= prob.colwise().sum().array();

  const double size = params.arch.image_size;
  std::vector<Box> refined(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector4d d = out.box_deltas.col(i);
    refined[static_cast<std::size_t>(i)] =
        clip_box(kRoiCoder.decode(out.proposals[static_cast<std::size_t>(i)].box, d), size, size);
  }

  std::vector<DetectionRecord> dets;
  for (int r = 0; r < params.num_classes(); ++r) {
    std::vector<DetectionRecord> cls;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = prob(r, i);
      const Box& b = refined[static_cast<std::size_t>(i)];
      if (s < options.score_threshold || b.width() < 1.0 || b.height() < 1.0) continue;
      cls.push_back({image_id, b, std::clamp(s, 0.0, 1.0), params.class_ids[static_cast<std::size_t>(r)]});
    }
    std::stable_sort(cls.begin(), cls.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    std::vector<Box> boxes;
    for (const auto& d : cls) boxes.push_back(d.box);
    for (int k : nms_sorted(boxes, options.nms_iou, static_cast<int>(boxes.size())))
      dets.push_back(cls[static_cast<std::size_t>(k)]);
  }
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  if (static_cast<int>(dets.size()) > options.max_per_image)
    dets.resize(static_cast<std::size_t>(options.max_per_image));
  return dets;
}

std::vector<DetectionRecord> detect_all(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                        const DetectOptions& options) {
  std::vector<DetectionRecord> all;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto d = detect(params, images[i], static_cast<int>(i), options);
    all.insert(all.end(), d.begin(), d.end());
  }
  return all;
}

std::map<int, std::vector<ScoredBox>> propose_all(const DetectorParams& params, std::span<const AnnotatedImage> images,
                                                  int proposal_cap) {
  std::map<int, std::vector<ScoredBox>> out;
  for (std::size_t i = 0; i < images.size(); ++i) out[static_cast<int>(i)] = propose(params, images[i], proposal_cap);
  return out;
}

MetricReport evaluate_ap50(const DetectorParams& params, std::span<const AnnotatedImage> images,
                           const ClassSplit& split, const DetectOptions& options) {
  const auto dets = detect_all(params, images, options);
  return compute_ap(dets, images, 0.5, split);
}

}  // namespace kifsod
