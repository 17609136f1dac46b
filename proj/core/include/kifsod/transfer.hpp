#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "kifsod/detector.hpp"
#include "kifsod/synthgen.hpp"

namespace kifsod {

/// Learning-rate groups of the transfer stage. "base_learner" covers classifier and regressor.
inline const std::vector<std::string> kTransferGroups{"backbone", "proposal", "roi_head", "base_learner"};
std::string transfer_group_of(Component c);

struct TransferConfig {
  double global_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, double> lr_scale{
      {"backbone", 1.0}, {"proposal", 1.0}, {"roi_head", 0.5}, {"base_learner", 1.0}};
  std::set<std::string> frozen{"backbone"};
  int frozen_up_to_block = 0;  // leading backbone blocks kept fixed even when the backbone trains
  double dropout_rate = 0.8;
  bool gradient_stop_rpn = false;
  double proposal_cap_multiplier = 2.0;
  int base_proposal_cap = 32;
  int iterations = 3000;
  int batch_size = 8;
  BatchMode batch_mode = BatchMode::image_level;
  bool augment = true;
  std::uint64_t seed = 0;

  void validate() const;
  int proposal_cap() const;
  /// global_lr x lr_scale of the tensor's group; 0 for frozen tensors.
  double effective_lr(Component c, int block) const;
  GradientScope scope() const;
};

void to_json(nlohmann::json& j, const TransferConfig& c);
void from_json(const nlohmann::json& j, TransferConfig& c);

/// "ptf": backbone frozen, proposal / RoI head / base learner at 1 / 0.5 / 1, dropout 0.8.
/// "ptf_ki": as ptf, plus the backbone trained at 0.01 with its first block frozen and the
/// proposal loss kept out of the backbone.
std::map<std::string, TransferConfig> preset_configs();
TransferConfig preset_config(const std::string& name);

/// Adds randomly initialized rows (N(0, 0.01^2), zero bias) for `novel_ids` before the background
/// row. Throws ConfigError if any of them is already present.
DetectorParams extend_classifier(const DetectorParams& params, const std::vector<ClassId>& novel_ids,
                                 std::uint64_t seed);

struct CurvePoint {
  int iteration = 0;
  double bap50 = 0;
  double nap50 = 0;
};

/// Periodic measurement hook. `evaluate` runs on iteration 0, every `interval` iterations and at
/// the last iteration; after each point `should_stop` may end the run early.
struct TransferMonitor {
  int interval = 0;
  std::function<CurvePoint(int iteration, const DetectorParams& params)> evaluate;
  std::function<bool(const std::vector<CurvePoint>& curve)> should_stop;
};

struct TransferResult {
  DetectorParams params;
  std::vector<CurvePoint> curve;
  TransferConfig config;
  int iterations_run = 0;
  bool stopped_early = false;
};

/// Few-shot transfer on the extended (and optionally KI-initialized) model. Each step draws a
/// batch with sample_batch, trains with dropout before the classifier, and updates every tensor
/// with its effective learning rate from a fresh momentum state.
TransferResult fewshot_transfer(const DetectorParams& params, const FewShotSet& fewshot, const TransferConfig& config,
                                const TransferMonitor& monitor = {});

/// CSV with header iteration,bAP50,nAP50.
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

}  // namespace kifsod
