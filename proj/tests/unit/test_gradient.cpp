#include <gtest/gtest.h>

#include "gradient_probe.hpp"

using namespace kifsod;

namespace {

double max_relative_error(const DetectorParams& params, const std::vector<AnnotatedImage>& batch,
                          const LossOptions& opts, unsigned seed) {
  const kifsod::testing::GradientProbe probe = kifsod::testing::probe_gradient(params, batch, opts, seed);
  for (const auto& p : probe.probes)
    EXPECT_LT(p.relative_error, 1e-3) << p.tensor << "[" << p.index << "] analytic " << p.analytic << " numeric "
                                      << p.numeric;
  for (Component c : kAllComponents)
    EXPECT_EQ(probe.checked.at(c), kifsod::testing::kProbesPerComponent) << to_string(c);
  return probe.worst;
}

class GradientCheck : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_.seed = 77;
    batch_ = generate_dataset(spec_, 2, spec_.base_class_ids);
  }
  DatasetSpec spec_;
  std::vector<AnnotatedImage> batch_;
};

}  // namespace

TEST_F(GradientCheck, LinearClassifier) {
  const DetectorParams p = init_detector({}, spec_.base_class_ids, ClassifierKind::linear, 1);
  EXPECT_LT(max_relative_error(p, batch_, {}, 3), 1e-3);
}

TEST_F(GradientCheck, CosineClassifier) {
  const DetectorParams p = init_detector({}, spec_.base_class_ids, ClassifierKind::cosine, 2);
  EXPECT_LT(max_relative_error(p, batch_, {}, 4), 1e-3);
}

TEST_F(GradientCheck, WithDropoutMasksHeldFixed) {
  const DetectorParams p = init_detector({}, spec_.base_class_ids, ClassifierKind::linear, 3);
  LossOptions o;
  o.dropout_rate = 0.5;
  o.seed = 12;
  EXPECT_LT(max_relative_error(p, batch_, o, 5), 1e-3);
}

TEST_F(GradientCheck, FrozenScopeLeavesGradientsZero) {
  const DetectorParams p = init_detector({}, spec_.base_class_ids, ClassifierKind::linear, 4);
  GradientScope scope;
  scope.backbone_blocks = {false, false, false};
  scope.proposal = false;
  DetectorParams full = zeros_like(p), part = zeros_like(p);
  compute_loss_and_gradient(p, batch_, {}, {}, full);
  compute_loss_and_gradient(p, batch_, {}, scope, part);
  for (const auto& d : part.backbone) EXPECT_TRUE(d.weight.isZero());
  EXPECT_TRUE(part.proposal.weight.isZero());
  EXPECT_EQ(part.classifier.weight, full.classifier.weight);
  EXPECT_TRUE(part.roi_head[0].weight.isApprox(full.roi_head[0].weight));
}

TEST_F(GradientCheck, GradientStopKeepsProposalLossOutOfBackbone) {
  const DetectorParams p = init_detector({}, spec_.base_class_ids, ClassifierKind::linear, 6);
  const auto fixed = training_proposals(p, batch_, 32);
  auto backbone_grad = [&](bool stop, double rpn_weight) {
    LossOptions o;
    o.gradient_stop_rpn = stop;
    o.rpn_weight = rpn_weight;
    o.fixed_proposals = &fixed;
    DetectorParams g = zeros_like(p);
    compute_loss_and_gradient(p, batch_, o, {}, g);
    return g.backbone[2].weight;
  };
  EXPECT_EQ(backbone_grad(true, 1.0), backbone_grad(true, 10.0));
  EXPECT_NE(backbone_grad(false, 1.0), backbone_grad(false, 10.0));
}
