#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <vector>

#include "kifsod/detector.hpp"

namespace kifsod {

struct TrainConfig {
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  int iterations = 2000;
  std::uint64_t seed = 0;
  ClassifierKind classifier_kind = ClassifierKind::linear;
  int warmup_iterations = 100;
  std::vector<int> lr_steps{1500, 1800};  // lr x 0.1 at each step
  int log_interval = 50;
  int proposal_cap = 32;
  bool augment = true;

  void validate() const;
  double lr_at(int iteration) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Loss components averaged over the `log_interval` iterations ending at `iteration`.
struct TrainLogEntry {
  int iteration = 0;
  double rpn = 0;
  double cls = 0;
  double loc = 0;
};

struct PretrainResult {
  DetectorParams params;
  std::vector<TrainLogEntry> log;
};

using TrainProgress = std::function<void(const TrainLogEntry&)>;

/// Base pretraining: every parameter trained on L^S + weight decay with momentum SGD, linear
/// warmup and step decay. Batches are drawn epoch-wise without replacement; with `augment` each
/// image gets a random zoom and flip. Throws NumericalError carrying the iteration on divergence.
PretrainResult pretrain_base(std::span<const AnnotatedImage> base_data, const std::vector<ClassId>& base_ids,
                             const TrainConfig& config, const DetectorArch& arch = {},
                             const TrainProgress& progress = {});

/// CSV with header iteration,L_rpn,L_cls,L_loc.
void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

}  // namespace kifsod
