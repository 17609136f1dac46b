#pragma once

#include <cstdint>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "kifsod/detector.hpp"
#include "kifsod/transfer.hpp"

namespace kifsod {

// ---------------------------------------------------------------------------------------------
// Adaptation speed

struct SpeedProtocol {
  int eval_interval = 50;
  int patience = 300;
  int max_budget = 3000;

  /// patience must be a positive multiple of eval_interval.
  void validate() const;
};

struct SpeedPoint {
  int iteration = 0;
  double nap = 0;

  bool operator==(const SpeedPoint&) const = default;
};

struct SpeedReport {
  std::vector<SpeedPoint> curve;  // up to the point where the rule fired
  double best_nap = 0;
  int convergence_iteration = 0;
  bool budget_exhausted = false;

  bool operator==(const SpeedReport&) const = default;
};

void to_json(nlohmann::json& j, const SpeedProtocol& p);
void from_json(const nlohmann::json& j, SpeedProtocol& p);
void to_json(nlohmann::json& j, const SpeedReport& r);

/// The model has converged once the best nAP has not been strictly surpassed for `patience`
/// iterations; the reported iteration is the one holding that best value. If the rule never
/// fires, budget_exhausted is set and the best iteration so far is reported.
SpeedReport detect_convergence(const std::vector<SpeedPoint>& curve, const SpeedProtocol& protocol);

/// Runs training for up to `max_budget` iterations, calling `observe(iteration, nap)` at every
/// evaluation (iteration 0 included); training stops as soon as `observe` returns true.
using TransferLauncher =
    std::function<void(int eval_interval, int max_budget, const std::function<bool(int, double)>& observe)>;

/// Drives `launcher`, stopping it when the convergence rule fires, and reports on the curve.
SpeedReport measure_adaptation_speed(const TransferLauncher& launcher, const SpeedProtocol& protocol);

/// Launcher over fewshot_transfer. `evaluate` supplies the curve point at each evaluation.
TransferLauncher make_transfer_launcher(const DetectorParams& params, const FewShotSet& fewshot,
                                        const TransferConfig& config,
                                        std::function<CurvePoint(int, const DetectorParams&)> evaluate,
                                        TransferResult* result = nullptr);

// ---------------------------------------------------------------------------------------------
// FLOPs

enum class LayerKind { conv, linear, roi_stage_marker };

struct LayerDesc {
  LayerKind kind = LayerKind::conv;
  std::string name;
  int kernel = 1, in_ch = 0, out_ch = 0, stride = 1, padding = 0;  // conv
  int in = 0, out = 0;                                             // linear
  bool branch = false;                                             // side output: does not feed the next layer

  bool operator==(const LayerDesc&) const = default;
};

struct ArchDescriptor {
  std::vector<LayerDesc> layers;
  int input_h = 0, input_w = 0, input_c = 0;
  int proposal_cap_train = 0;
  int proposal_cap_infer = 0;

  bool operator==(const ArchDescriptor&) const = default;
};

void to_json(nlohmann::json& j, const ArchDescriptor& a);

/// Descriptor of the detector's layer stack as sized by `params`.
ArchDescriptor describe_architecture(const DetectorParams& params, int proposal_cap_train, int proposal_cap_infer);

enum class Phase { train_forward, inference };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct LayerFlops {
  std::string name;
  std::uint64_t flops = 0;
};

struct FlopsReport {
  Phase phase = Phase::inference;
  std::uint64_t total = 0;
  std::vector<LayerFlops> layers;
  int proposal_cap = 0;
};

void to_json(nlohmann::json& j, const FlopsReport& r);

/// Conv: 2 k^2 C_in C_out per output element; linear: 2 in out. Layers after the RoI marker are
/// multiplied by the phase's proposal cap. Activations, NMS and RoI-align are not counted.
/// Throws ConfigError for a malformed descriptor.
FlopsReport estimate_flops(const ArchDescriptor& arch, Phase phase);

}  // namespace kifsod
