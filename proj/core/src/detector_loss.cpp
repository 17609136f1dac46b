#include <cmath>

#include "detector_internal.hpp"
#include "kifsod/detector.hpp"
#include "kifsod/error.hpp"

namespace kifsod {

double softmax_cross_entropy(const Matrix& logits, std::span<const int> targets, Matrix* grad_logits) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.cols())
    throw ShapeError("softmax_cross_entropy: one target per column required");
  if (grad_logits) grad_logits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int t = targets[static_cast<std::size_t>(j)];
    if (t < 0) continue;
    if (t >= logits.rows()) throw ShapeError("softmax_cross_entropy: target row out of range");
    const double m = logits.col(j).maxCoeff();
    const Vector e = (logits.col(j).array() - m).exp();
    const double z = e.sum();
    total += std::log(z) + m - logits(t, j);
    ++count;
    if (grad_logits) {
      grad_logits->col(j) = e / z;
      (*grad_logits)(t, j) -= 1.0;
    }
  }
  if (count == 0) return 0.0;
  if (grad_logits) *grad_logits /= count;
  return total / count;
}

double smooth_l1_loss(const Matrix& pred, const Matrix& target, std::span<const char> positive, double beta,
                      Matrix* grad_pred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      static_cast<Eigen::Index>(positive.size()) != pred.cols())
    throw ShapeError("smooth_l1_loss: shape mismatch");
  if (grad_pred) grad_pred->setZero(pred.rows(), pred.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    if (!positive[static_cast<std::size_t>(j)]) continue;
    ++count;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      const double x = pred(i, j) - target(i, j);
      const double a = std::abs(x);
      if (a < beta) {
        total += 0.5 * x * x / beta;
        if (grad_pred) (*grad_pred)(i, j) = x / beta;
      } else {
        total += a - 0.5 * beta;
        if (grad_pred) (*grad_pred)(i, j) = x > 0 ? 1.0 : -1.0;
      }
    }
  }
  if (count == 0) return 0.0;
  if (grad_pred) *grad_pred /= count;
  return total / count;
}

double balanced_bce(const Eigen::Ref<const Vector>& logits, std::span<const int> labels, Vector* grad_logits) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.size()) throw ShapeError("balanced_bce: one label per logit");
  int npos = 0, nneg = 0;
  for (int l : labels) {
    npos += l == 1;
    nneg += l == 0;
  }
  if (grad_logits) grad_logits->setZero(logits.size());
  double pos = 0.0, neg = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    const double x = logits[i];
    const double l = std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    const double w = 0.5 / (y == 1 ? npos : nneg);
    (y == 1 ? pos : neg) += l;
    if (grad_logits) (*grad_logits)[i] = w * (1.0 / (1.0 + std::exp(-x)) - y);
  }
  return (npos ? 0.5 * pos / npos : 0.0) + (nneg ? 0.5 * neg / nneg : 0.0);
}

RoiTargets assign_roi_targets(const DetectorParams& params, std::span<const Box> rois, const AnnotatedImage& image) {
  RoiTargets t;
  const std::size_t n = rois.size();
  t.labels.assign(n, params.background_row());
  t.positive.assign(n, 0);
  t.deltas = Matrix::Zero(4, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int arg = -1;
    for (std::size_t g = 0; g < image.boxes.size(); ++g) {
      const double iou = match_iou(rois[i], image.boxes[g]);
      if (iou > best) {
        best = iou;
        arg = static_cast<int>(g);
      }
    }
    if (best >= kPositiveIou) {
      const int row = params.row_of(image.labels[static_cast<std::size_t>(arg)]);
      if (row < 0) {
        t.labels[i] = -1;
        continue;
      }
      t.labels[i] = row;
      t.positive[i] = 1;
      t.deltas.col(static_cast<Eigen::Index>(i)) =
          kRoiCoder.encode(rois[i], image.boxes[static_cast<std::size_t>(arg)]);
    } else if (best >= kBackgroundIou) {
      t.labels[i] = -1;
    }
  }
  return t;
}

namespace {

struct AnchorTargets {
  std::vector<int> labels;
  std::vector<char> positive;
  Matrix deltas;
};

AnchorTargets assign_anchor_targets(const std::vector<Box>& anchors, const AnnotatedImage& image) {
  const std::size_t n = anchors.size(), g = image.boxes.size();
  AnchorTargets t;
  t.labels.assign(n, 0);
  t.positive.assign(n, 0);
  t.deltas = Matrix::Zero(4, static_cast<Eigen::Index>(n));
  if (g == 0) return t;
  Matrix iou(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t k = 0; k < g; ++k) iou(Eigen::Index(a), Eigen::Index(k)) = match_iou(anchors[a], image.boxes[k]);
  std::vector<int> match(n, -1);
  for (std::size_t a = 0; a < n; ++a) {
    Eigen::Index k;
    const double best = iou.row(Eigen::Index(a)).maxCoeff(&k);
    if (best >= kPositiveIou) {
      match[a] = static_cast<int>(k);
    } else if (best >= kBackgroundIou) {
      t.labels[a] = -1;
    }
  }
  // every ground truth keeps its best anchor
  for (std::size_t k = 0; k < g; ++k) {
    Eigen::Index a;
    if (iou.col(Eigen::Index(k)).maxCoeff(&a) > 0.0) match[static_cast<std::size_t>(a)] = static_cast<int>(k);
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (match[a] < 0) continue;
    t.labels[a] = 1;
    t.positive[a] = 1;
    t.deltas.col(Eigen::Index(a)) = kAnchorCoder.encode(anchors[a], image.boxes[static_cast<std::size_t>(match[a])]);
  }
  return t;
}

void add_dense_grad(Dense& g, const Matrix& dout, const Matrix& input) {
  g.weight.noalias() += dout * input.transpose();
  g.bias += dout.rowwise().sum();
}

Matrix relu_mask(const Matrix& grad, const Matrix& act) { return (act.array() > 0.0).select(grad, 0.0); }

/// Rows of `x` normalized by `norm` pass `dx_hat` back: (dx_hat - x_hat <x_hat, dx_hat>) / norm.
Matrix normalize_backward_rows(const Matrix& x_hat, const Vector& norm, const Matrix& dx_hat) {
  const Vector dot = x_hat.cwiseProduct(dx_hat).rowwise().sum();
  Matrix out = dx_hat - (x_hat.array().colwise() * dot.array()).matrix();
  return out.array().colwise() / norm.array();
}

Matrix normalize_backward_cols(const Matrix& x_hat, const Vector& norm, const Matrix& dx_hat) {
  const Vector dot = x_hat.cwiseProduct(dx_hat).colwise().sum().transpose();
  Matrix out = dx_hat - (x_hat.array().rowwise() * dot.transpose().array()).matrix();
  return out.array().rowwise() / norm.transpose().array();
}

LossBreakdown image_loss(const DetectorParams& p, const AnnotatedImage& image, std::size_t index,
                         const LossOptions& opts, const GradientScope* scope, DetectorParams* grad, double scale) {
  const bool backward = grad != nullptr;
  const bool need_features_grad = backward && scope->any_backbone();
  const detail::BackboneTrace bb = detail::run_backbone(p, image, need_features_grad);
  const Matrix& f3 = bb.act[2];
  const Matrix rpn = detail::run_proposal_head(p, f3);

  const std::vector<Box> anchors = make_anchors(p.arch);
  const AnchorTargets at = assign_anchor_targets(anchors, image);
  Vector d_obj;
  Matrix d_anchor;
  LossBreakdown loss;
  loss.rpn = balanced_bce(rpn.row(0).transpose(), at.labels, backward ? &d_obj : nullptr);
  loss.rpn += smooth_l1_loss(rpn.bottomRows(4), at.deltas, at.positive, 1.0 / 9.0, backward ? &d_anchor : nullptr);
  loss.rpn *= opts.rpn_weight;

  std::vector<Box> rois;
  if (opts.fixed_proposals) {
    if (index >= opts.fixed_proposals->size()) throw ConfigError("fixed_proposals has fewer entries than the batch");
    rois = (*opts.fixed_proposals)[index];
  } else {
    for (const auto& pr : detail::select_proposals(p, rpn, opts.proposal_cap)) rois.push_back(pr.box);
  }
  rois.insert(rois.end(), image.boxes.begin(), image.boxes.end());
  const RoiTargets rt = assign_roi_targets(p, rois, image);

  Rng dropout_rng(derive_seed(opts.seed, static_cast<std::uint64_t>(index)));
  const bool use_dropout = opts.dropout_rate > 0.0;
  const detail::RoiTrace t =
      detail::run_roi_head(p, f3, rois, need_features_grad, opts.dropout_rate, use_dropout ? &dropout_rng : nullptr);
  Matrix d_logits, d_deltas;
  loss.cls = softmax_cross_entropy(t.logits, rt.labels, backward ? &d_logits : nullptr);
  loss.loc = smooth_l1_loss(t.deltas, rt.deltas, rt.positive, 1.0, backward ? &d_deltas : nullptr);
  if (!backward) return loss;

  const GradientScope& s = *scope;
  d_logits *= scale;
  d_deltas *= scale;
  const bool below_classifier = s.roi_head || s.any_backbone();

  // base learner
  Matrix d_zc;
  if (p.classifier_kind == ClassifierKind::linear) {
    if (s.classifier) add_dense_grad(grad->classifier, d_logits, t.zc);
    if (below_classifier) d_zc = p.classifier.weight.transpose() * d_logits;
  } else {
    const double cs = p.arch.cosine_scale;
    if (s.classifier) {
      const Matrix d_w_hat = cs * d_logits * t.u.transpose();
      grad->classifier.weight += normalize_backward_rows(t.w_hat, t.w_norm, d_w_hat);
    }
    if (below_classifier) d_zc = normalize_backward_cols(t.u, t.z_norm, cs * t.w_hat.transpose() * d_logits);
  }
  if (s.regressor) add_dense_grad(grad->regressor, d_deltas, t.z);
  if (!below_classifier) return loss;

  Matrix d_z = t.mask.size() ? d_zc.cwiseProduct(t.mask) : d_zc;
  d_z.noalias() += p.regressor.weight.transpose() * d_deltas;

  // RoI head
  const Matrix d_pre2 = relu_mask(d_z, t.z);
  if (s.roi_head) add_dense_grad(grad->roi_head[1], d_pre2, t.h1);
  const Matrix d_pre1 = relu_mask(p.roi_head[1].weight.transpose() * d_pre2, t.h1);
  if (s.roi_head) add_dense_grad(grad->roi_head[0], d_pre1, t.pooled);

  // proposal head
  Matrix d_rpn(5, rpn.cols());
  d_rpn.row(0) = d_obj.transpose();
  d_rpn.bottomRows(4) = d_anchor;
  d_rpn *= scale * opts.rpn_weight;
  if (s.proposal) add_dense_grad(grad->proposal, d_rpn, f3);
  if (!s.any_backbone()) return loss;

  // backbone
  const int channels = static_cast<int>(f3.rows());
  Matrix d_act = Matrix::Zero(f3.rows(), f3.cols());
  roi_align_backward(p.roi_head[0].weight.transpose() * d_pre1, t.taps, channels, d_act);
  if (!opts.gradient_stop_rpn) d_act.noalias() += p.proposal.weight.transpose() * d_rpn;
  for (int b = 2; b >= 0; --b) {
    const auto bi = static_cast<std::size_t>(b);
    const Matrix d_pre = relu_mask(d_act, bb.act[bi]);
    if (s.backbone_blocks[bi]) add_dense_grad(grad->backbone[bi], d_pre, bb.cols[bi]);
    bool lower = false;
    for (int k = 0; k < b; ++k) lower = lower || s.backbone_blocks[static_cast<std::size_t>(k)];
    if (!lower) break;
    d_act = col2im(p.backbone[bi].weight.transpose() * d_pre, bb.geom[bi]);
  }
  return loss;
}

LossBreakdown batch_loss(const DetectorParams& params, std::span<const AnnotatedImage> batch, const LossOptions& opts,
                         const GradientScope* scope, DetectorParams* grad) {
  if (batch.empty()) throw ConfigError("loss needs a non-empty batch");
  if (!(opts.dropout_rate >= 0.0 && opts.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  const double scale = 1.0 / static_cast<double>(batch.size());
  LossBreakdown sum;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const LossBreakdown l = image_loss(params, batch[i], i, opts, scope, grad, scale);
    sum.rpn += l.rpn * scale;
    sum.cls += l.cls * scale;
    sum.loc += l.loc * scale;
  }
  if (!std::isfinite(sum.rpn)) throw NumericalError("L_rpn", -1, "proposal loss is not finite");
  if (!std::isfinite(sum.cls)) throw NumericalError("L_cls", -1, "classification loss is not finite");
  if (!std::isfinite(sum.loc)) throw NumericalError("L_loc", -1, "localization loss is not finite");
  return sum;
}

}  // namespace

LossBreakdown compute_loss(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                           const LossOptions& options) {
  return batch_loss(params, batch, options, nullptr, nullptr);
}

LossBreakdown compute_loss_and_gradient(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                                        const LossOptions& options, const GradientScope& scope, DetectorParams& grad) {
  return batch_loss(params, batch, options, &scope, &grad);
}

std::vector<std::vector<Box>> training_proposals(const DetectorParams& params, std::span<const AnnotatedImage> batch,
                                                 int proposal_cap) {
  std::vector<std::vector<Box>> out;
  for (const auto& image : batch) {
    const detail::BackboneTrace bb = detail::run_backbone(params, image, false);
    std::vector<Box> boxes;
    for (const auto& pr : detail::select_proposals(params, detail::run_proposal_head(params, bb.act[2]), proposal_cap))
      boxes.push_back(pr.box);
    out.push_back(std::move(boxes));
  }
  return out;
}

}  // namespace kifsod
