#include <gtest/gtest.h>

#include <algorithm>

#include "convergence_cases.hpp"
#include "kifsod/error.hpp"
#include "kifsod/ki_init.hpp"

using namespace kifsod;
using kifsod::testing::convergence_cases;
using kifsod::testing::ConvergenceCase;

class ConvergenceRule : public ::testing::TestWithParam<ConvergenceCase> {};

TEST_P(ConvergenceRule, MatchesHandTrace) {
  const ConvergenceCase& c = GetParam();
  const SpeedReport r = detect_convergence(c.curve, c.protocol);
  EXPECT_EQ(r.convergence_iteration, c.convergence_iteration);
  EXPECT_EQ(r.budget_exhausted, c.budget_exhausted);
  ASSERT_FALSE(r.curve.empty());
  EXPECT_EQ(r.curve.back().iteration, c.fires_at);
  double best = 0;
  bool seen = false;
  for (const auto& p : r.curve) {
    best = std::max(best, p.nap);
    seen = seen || p.iteration == r.convergence_iteration;
  }
  EXPECT_EQ(r.best_nap, best);
  EXPECT_TRUE(seen);
}

// Once fired, later points are never looked at; an unfired curve keeps consuming them.
TEST_P(ConvergenceRule, AppendedPointMattersOnlyBeforeFiring) {
  const ConvergenceCase& c = GetParam();
  const SpeedReport r = detect_convergence(c.curve, c.protocol);
  auto longer = c.curve;
  longer.push_back({longer.back().iteration + c.protocol.eval_interval, 1.0});
  const SpeedReport extended = detect_convergence(longer, c.protocol);
  if (!r.budget_exhausted) {
    EXPECT_EQ(extended, r);
    return;
  }
  ASSERT_EQ(extended.curve.size(), r.curve.size() + 1);
  EXPECT_TRUE(std::equal(r.curve.begin(), r.curve.end(), extended.curve.begin()));
  EXPECT_EQ(extended.convergence_iteration, longer.back().iteration);
}

TEST_P(ConvergenceRule, StubbedLauncherReproducesTheRule) {
  const ConvergenceCase& c = GetParam();
  int replayed = 0;
  const TransferLauncher replay = [&](int, int, const std::function<bool(int, double)>& observe) {
    for (const auto& p : c.curve) {
      ++replayed;
      if (observe(p.iteration, p.nap)) return;
    }
  };
  const SpeedReport r = measure_adaptation_speed(replay, c.protocol);
  EXPECT_EQ(r, detect_convergence(c.curve, c.protocol));
  EXPECT_EQ(static_cast<std::size_t>(replayed), r.curve.size());
}

INSTANTIATE_TEST_SUITE_P(HandTraced, ConvergenceRule, ::testing::ValuesIn(convergence_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(ConvergenceRuleErrors, RejectsBadCurves) {
  const SpeedProtocol p{50, 300, 3000};
  EXPECT_THROW(detect_convergence({}, p), DataError);
  EXPECT_THROW(detect_convergence({{0, .1}, {75, .2}}, p), DataError);
  EXPECT_THROW(detect_convergence({{50, .1}, {50, .2}}, p), DataError);
  EXPECT_THROW(detect_convergence({{0, .1}}, SpeedProtocol{50, 120, 3000}), ConfigError);
  EXPECT_THROW(detect_convergence({{0, .1}}, SpeedProtocol{50, 0, 3000}), ConfigError);
}

TEST(Flops, SingleConvHandCount) {
  ArchDescriptor a;
  a.input_h = a.input_w = 4;
  a.input_c = 1;
  a.proposal_cap_train = a.proposal_cap_infer = 1;
  LayerDesc conv;
  conv.kind = LayerKind::conv;
  conv.name = "conv";
  conv.kernel = 3;
  conv.in_ch = conv.out_ch = 1;
  conv.padding = 1;
  a.layers = {conv, {LayerKind::roi_stage_marker, "roi"}};
  const FlopsReport r = estimate_flops(a, Phase::inference);
  EXPECT_EQ(r.total, 288u);
}

TEST(Flops, PerProposalLinearHandCount) {
  ArchDescriptor a;
  a.input_h = a.input_w = 8;
  a.input_c = 64;
  a.proposal_cap_train = 32;
  a.proposal_cap_infer = 100;
  LayerDesc fc;
  fc.kind = LayerKind::linear;
  fc.name = "cls";
  fc.in = 64;
  fc.out = 13;
  a.layers = {{LayerKind::roi_stage_marker, "roi"}, fc};
  EXPECT_EQ(estimate_flops(a, Phase::train_forward).total, 53248u);
  EXPECT_EQ(estimate_flops(a, Phase::inference).proposal_cap, 100);
}

TEST(Flops, DetectorBreakdownIsAdditiveAndCapMonotone) {
  const DetectorParams p = init_detector({}, DatasetSpec{}.split().all(), ClassifierKind::linear, 1);
  const ArchDescriptor a = describe_architecture(p, 64, 100);
  for (Phase ph : {Phase::train_forward, Phase::inference}) {
    const FlopsReport r = estimate_flops(a, ph);
    std::uint64_t sum = 0;
    for (const auto& l : r.layers) sum += l.flops;
    EXPECT_EQ(sum, r.total);
  }
  // backbone: 2*9*(3*16*64^2 + 16*32*32^2 + 32*64*16^2), proposal head 2*64*5*256
  const std::uint64_t image = 2ull * 9 * (3 * 16 * 4096 + 16 * 32 * 1024 + 32 * 64 * 256) + 2ull * 64 * 5 * 256;
  const std::uint64_t per_roi = 2ull * (1024 * 128 + 128 * 64 + 64 * 13 + 64 * 4);
  EXPECT_EQ(estimate_flops(a, Phase::train_forward).total, image + 64 * per_roi);

  ArchDescriptor doubled = a;
  doubled.proposal_cap_train *= 2;
  const auto post = [](const FlopsReport& r) {
    std::uint64_t s = 0;
    for (const auto& l : r.layers)
      if (l.name.rfind("roi_head", 0) == 0 || l.name == "classifier" || l.name == "regressor") s += l.flops;
    return s;
  };
  EXPECT_GE(post(estimate_flops(doubled, Phase::train_forward)), 2 * post(estimate_flops(a, Phase::train_forward)));
}

TEST(Flops, MalformedDescriptors) {
  const DetectorParams p = init_detector({}, {0, 1}, ClassifierKind::linear, 1);
  const ArchDescriptor good = describe_architecture(p, 32, 100);
  ArchDescriptor no_marker = good;
  std::erase_if(no_marker.layers, [](const LayerDesc& l) { return l.kind == LayerKind::roi_stage_marker; });
  EXPECT_THROW(estimate_flops(no_marker, Phase::inference), ConfigError);
  ArchDescriptor two = good;
  two.layers.push_back({LayerKind::roi_stage_marker, "again"});
  EXPECT_THROW(estimate_flops(two, Phase::inference), ConfigError);
  ArchDescriptor chain = good;
  chain.layers[1].in_ch = 7;
  EXPECT_THROW(estimate_flops(chain, Phase::inference), ConfigError);
  ArchDescriptor no_cap = good;
  no_cap.proposal_cap_infer = 0;
  EXPECT_THROW(estimate_flops(no_cap, Phase::inference), ConfigError);
}

TEST(Flops, KnowledgeInheritanceLeavesDescriptorUnchanged) {
  const DatasetSpec spec;
  const DetectorParams base = init_detector({}, spec.base_class_ids, ClassifierKind::linear, 2);
  const DetectorParams ext = extend_classifier(base, spec.novel_class_ids, 3);
  auto images = generate_dataset(spec, 30, spec.base_class_ids);
  for (auto& im : generate_dataset(spec, 4, spec.novel_class_ids)) images.push_back(im);
  const KiEstimate est = estimate_knowledge_inheritance(base, images, spec.split(), InitMode::alr, 1, 4);
  const DetectorParams ki = install_centroids(ext, est.centroids);
  const TransferConfig ptf = preset_config("ptf"), ptf_ki = preset_config("ptf_ki");
  const ArchDescriptor a = describe_architecture(ext, ptf.proposal_cap(), 100);
  const ArchDescriptor b = describe_architecture(ki, ptf_ki.proposal_cap(), 100);
  EXPECT_EQ(a, b);
  for (Phase ph : {Phase::train_forward, Phase::inference})
    EXPECT_EQ(estimate_flops(a, ph).total, estimate_flops(b, ph).total);
}

TEST(Flops, JsonShape) {
  const DetectorParams p = init_detector({}, {0, 1}, ClassifierKind::linear, 1);
  const nlohmann::json j = estimate_flops(describe_architecture(p, 32, 100), Phase::inference);
  EXPECT_EQ(j.at("phase"), "inference");
  EXPECT_EQ(j.at("proposal_cap"), 100);
  EXPECT_TRUE(j.at("layers").at(0).contains("name"));
  EXPECT_TRUE(j.at("layers").at(0).contains("flops"));
  EXPECT_TRUE(j.contains("total"));
}
