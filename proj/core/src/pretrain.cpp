#include "kifsod/pretrain.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "kifsod/augment.hpp"
#include "kifsod/error.hpp"
#include "kifsod/optimizer.hpp"

namespace kifsod {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (warmup_iterations < 0) throw ConfigError("warmup_iterations must be non-negative");
  if (log_interval < 1) throw ConfigError("log_interval must be at least 1");
  if (proposal_cap < 1) throw ConfigError("proposal_cap must be at least 1");
}

double TrainConfig::lr_at(int iteration) const {
  double lr = base_lr;
  for (int s : lr_steps)
    if (iteration > s) lr *= 0.1;
  if (iteration <= warmup_iterations && warmup_iterations > 0)
    lr *= 0.001 + 0.999 * static_cast<double>(iteration) / warmup_iterations;
  return lr;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"base_lr", c.base_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"iterations", c.iterations},
       {"seed", c.seed},
       {"classifier_kind", to_string(c.classifier_kind)},
       {"warmup_iterations", c.warmup_iterations},
       {"lr_steps", c.lr_steps},
       {"log_interval", c.log_interval},
       {"proposal_cap", c.proposal_cap},
       {"augment", c.augment}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.base_lr = j.value("base_lr", d.base_lr);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.iterations = j.value("iterations", d.iterations);
  c.seed = j.value("seed", d.seed);
  c.classifier_kind = classifier_kind_from_string(j.value("classifier_kind", to_string(d.classifier_kind)));
  c.warmup_iterations = j.value("warmup_iterations", d.warmup_iterations);
  c.lr_steps = j.value("lr_steps", d.lr_steps);
  c.log_interval = j.value("log_interval", d.log_interval);
  c.proposal_cap = j.value("proposal_cap", d.proposal_cap);
  c.augment = j.value("augment", d.augment);
}

PretrainResult pretrain_base(std::span<const AnnotatedImage> base_data, const std::vector<ClassId>& base_ids,
                             const TrainConfig& config, const DetectorArch& arch, const TrainProgress& progress) {
  config.validate();
  if (base_data.empty()) throw DataError("pretraining needs at least one image");
  for (const auto& im : base_data) {
    if (im.boxes.empty()) throw DataError("pretraining image without annotations");
    for (ClassId c : im.labels)
      if (std::find(base_ids.begin(), base_ids.end(), c) == base_ids.end())
        throw DataError("pretraining data carries non-base class " + std::to_string(c));
  }

  PretrainResult result;
  result.params = init_detector(arch, base_ids, config.classifier_kind, derive_seed(config.seed, "init"));
  DetectorParams& params = result.params;
  MomentumSgd sgd(config.momentum, config.weight_decay);
  Rng order_rng(derive_seed(config.seed, "order"));
  Rng aug_rng(derive_seed(config.seed, "augment"));

  std::vector<std::size_t> order(base_data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  LossOptions loss_opts;
  loss_opts.proposal_cap = config.proposal_cap;
  const GradientScope scope{};
  TrainLogEntry window;
  int window_count = 0;
  std::vector<AnnotatedImage> batch;

  for (int it = 1; it <= config.iterations; ++it) {
    batch.clear();
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const AnnotatedImage& src = base_data[order[cursor++]];
      batch.push_back(config.augment ? apply_augmentation(src, draw_augmentation(aug_rng)) : src);
    }
    DetectorParams grad = zeros_like(params);
    LossBreakdown loss;
    try {
      loss = compute_loss_and_gradient(params, batch, loss_opts, scope, grad);
    } catch (const NumericalError& e) {
      throw NumericalError(e.component(), it, std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    const double lr = config.lr_at(it);
    sgd.step(params, grad, [lr](const TensorView&) { return lr; });

    window.rpn += loss.rpn;
    window.cls += loss.cls;
    window.loc += loss.loc;
    ++window_count;
    if (it % config.log_interval == 0 || it == config.iterations) {
      const TrainLogEntry entry{it, window.rpn / window_count, window.cls / window_count, window.loc / window_count};
      result.log.push_back(entry);
      if (progress) progress(entry);
      window = {};
      window_count = 0;
    }
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,L_rpn,L_cls,L_loc\n";
  out.precision(9);
  for (const auto& e : log) out << e.iteration << ',' << e.rpn << ',' << e.cls << ',' << e.loc << '\n';
}

}  // namespace kifsod
