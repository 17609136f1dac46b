#include "kifsod/transfer.hpp"

#include <algorithm>
#include <fstream>

#include "kifsod/augment.hpp"
#include "kifsod/error.hpp"
#include "kifsod/optimizer.hpp"

namespace kifsod {

std::string transfer_group_of(Component c) {
  switch (c) {
    case Component::backbone:
      return "backbone";
    case Component::proposal:
      return "proposal";
    case Component::roi_head:
      return "roi_head";
    case Component::classifier:
    case Component::regressor:
      return "base_learner";
  }
  return "?";
}

namespace {

bool known_group(const std::string& g) {
  return std::find(kTransferGroups.begin(), kTransferGroups.end(), g) != kTransferGroups.end();
}

}  // namespace

void TransferConfig::validate() const {
  if (!(global_lr >= 0.0)) throw ConfigError("global_lr must be non-negative");
  for (const auto& [g, s] : lr_scale) {
    if (!known_group(g)) throw ConfigError("unknown lr_scale group '" + g + "'");
    if (!(s >= 0.0)) throw ConfigError("lr_scale of " + g + " must be non-negative");
  }
  for (const auto& g : frozen)
    if (!known_group(g)) throw ConfigError("unknown frozen group '" + g + "'");
  if (frozen_up_to_block < 0 || frozen_up_to_block > 3) throw ConfigError("frozen_up_to_block must be in 0..3");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (!(proposal_cap_multiplier > 0.0)) throw ConfigError("proposal_cap_multiplier must be positive");
  if (base_proposal_cap < 1) throw ConfigError("base_proposal_cap must be at least 1");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
}

int TransferConfig::proposal_cap() const {
  return std::max(1, static_cast<int>(std::lround(base_proposal_cap * proposal_cap_multiplier)));
}

double TransferConfig::effective_lr(Component c, int block) const {
  const std::string g = transfer_group_of(c);
  if (frozen.count(g)) return 0.0;
  if (c == Component::backbone && block < frozen_up_to_block) return 0.0;
  const auto it = lr_scale.find(g);
  return global_lr * (it == lr_scale.end() ? 1.0 : it->second);
}

GradientScope TransferConfig::scope() const {
  GradientScope s;
  for (int b = 0; b < 3; ++b) s.backbone_blocks[static_cast<std::size_t>(b)] = effective_lr(Component::backbone, b) > 0;
  s.proposal = effective_lr(Component::proposal, 0) > 0;
  s.roi_head = effective_lr(Component::roi_head, 0) > 0;
  s.classifier = effective_lr(Component::classifier, 0) > 0;
  s.regressor = effective_lr(Component::regressor, 0) > 0;
  return s;
}

void to_json(nlohmann::json& j, const TransferConfig& c) {
  j = {{"global_lr", c.global_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"lr_scale", c.lr_scale},
       {"frozen", c.frozen},
       {"frozen_up_to_block", c.frozen_up_to_block},
       {"dropout_rate", c.dropout_rate},
       {"gradient_stop_rpn", c.gradient_stop_rpn},
       {"proposal_cap_multiplier", c.proposal_cap_multiplier},
       {"base_proposal_cap", c.base_proposal_cap},
       {"proposal_cap", c.proposal_cap()},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"batch_mode", to_string(c.batch_mode)},
       {"augment", c.augment},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TransferConfig& c) {
  const TransferConfig d;
  c.global_lr = j.value("global_lr", d.global_lr);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.lr_scale = j.value("lr_scale", d.lr_scale);
  c.frozen = j.value("frozen", d.frozen);
  c.frozen_up_to_block = j.value("frozen_up_to_block", d.frozen_up_to_block);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.gradient_stop_rpn = j.value("gradient_stop_rpn", d.gradient_stop_rpn);
  c.proposal_cap_multiplier = j.value("proposal_cap_multiplier", d.proposal_cap_multiplier);
  c.base_proposal_cap = j.value("base_proposal_cap", d.base_proposal_cap);
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.batch_mode = batch_mode_from_string(j.value("batch_mode", to_string(d.batch_mode)));
  c.augment = j.value("augment", d.augment);
  c.seed = j.value("seed", d.seed);
}

std::map<std::string, TransferConfig> preset_configs() {
  TransferConfig ptf;
  ptf.frozen = {"backbone"};
  ptf.lr_scale = {{"backbone", 0.0}, {"proposal", 1.0}, {"roi_head", 0.5}, {"base_learner", 1.0}};
  ptf.dropout_rate = 0.8;
  ptf.gradient_stop_rpn = false;

  TransferConfig ki = ptf;
  ki.frozen.clear();
  ki.lr_scale["backbone"] = 0.01;
  ki.frozen_up_to_block = 1;
  ki.gradient_stop_rpn = true;
  return {{"ptf", ptf}, {"ptf_ki", ki}};
}

TransferConfig preset_config(const std::string& name) {
  const auto presets = preset_configs();
  const auto it = presets.find(name);
  if (it == presets.end()) throw ConfigError("unknown preset '" + name + "'");
  return it->second;
}

DetectorParams extend_classifier(const DetectorParams& params, const std::vector<ClassId>& novel_ids,
                                 std::uint64_t seed) {
  for (ClassId c : novel_ids)
    if (params.row_of(c) >= 0) throw ConfigError("classifier already has a row for class " + std::to_string(c));
  DetectorParams out = params;
  const auto old_rows = params.classifier.weight.rows();
  const auto add = static_cast<Eigen::Index>(novel_ids.size());
  const auto d = params.classifier.weight.cols();
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 0.01);

  out.classifier.weight.resize(old_rows + add, d);
  out.classifier.bias.resize(old_rows + add);
  out.classifier.weight.topRows(old_rows - 1) = params.classifier.weight.topRows(old_rows - 1);
  out.classifier.bias.head(old_rows - 1) = params.classifier.bias.head(old_rows - 1);
  out.classifier.weight.middleRows(old_rows - 1, add) = Matrix::NullaryExpr(add, d, [&]() { return dist(rng); });
  out.classifier.bias.segment(old_rows - 1, add).setZero();
  out.classifier.weight.bottomRows(1) = params.classifier.weight.bottomRows(1);
  out.classifier.bias[old_rows + add - 1] = params.classifier.bias[old_rows - 1];
  out.class_ids.insert(out.class_ids.end(), novel_ids.begin(), novel_ids.end());
  return out;
}

TransferResult fewshot_transfer(const DetectorParams& params, const FewShotSet& fewshot, const TransferConfig& config,
                                const TransferMonitor& monitor) {
  config.validate();
  if (fewshot.images.empty()) throw DataError("few-shot set is empty");
  for (const auto& im : fewshot.images)
    for (ClassId c : im.labels)
      if (params.row_of(c) < 0)
        throw ConfigError("classifier has no row for class " + std::to_string(c) + "; extend it before transfer");

  TransferResult result;
  result.params = params;
  result.config = config;
  DetectorParams& p = result.params;
  MomentumSgd sgd(config.momentum, config.weight_decay);
  const GradientScope scope = config.scope();
  Rng aug_rng(derive_seed(config.seed, "augment"));

  auto record = [&](int it) {
    if (!monitor.evaluate) return false;
    CurvePoint pt = monitor.evaluate(it, p);
    pt.iteration = it;
    result.curve.push_back(pt);
    return monitor.should_stop && monitor.should_stop(result.curve);
  };

  if (record(0)) {
    result.stopped_early = true;
    return result;
  }
  for (int it = 1; it <= config.iterations; ++it) {
    std::vector<AnnotatedImage> batch = sample_batch(fewshot, config.batch_mode, config.batch_size,
                                                     derive_seed(config.seed, static_cast<std::uint64_t>(it)));
    if (config.augment)
      for (auto& im : batch) im = apply_augmentation(im, draw_augmentation(aug_rng));

    LossOptions opts;
    opts.proposal_cap = config.proposal_cap();
    opts.dropout_rate = config.dropout_rate;
    opts.seed = derive_seed(config.seed, "dropout" + std::to_string(it));
    opts.gradient_stop_rpn = config.gradient_stop_rpn;
    DetectorParams grad = zeros_like(p);
    try {
      compute_loss_and_gradient(p, batch, opts, scope, grad);
    } catch (const NumericalError& e) {
      throw NumericalError(e.component(), it, std::string(e.what()) + " at iteration " + std::to_string(it));
    }
    sgd.step(p, grad, [&](const TensorView& t) { return config.effective_lr(t.component, t.block); });
    result.iterations_run = it;

    const bool due =
        monitor.interval > 0 ? it % monitor.interval == 0 || it == config.iterations : it == config.iterations;
    if (due && record(it)) {
      result.stopped_early = it < config.iterations;
      break;
    }
  }
  return result;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "iteration,bAP50,nAP50\n";
  out.precision(9);
  for (const auto& c : curve) out << c.iteration << ',' << c.bap50 << ',' << c.nap50 << '\n';
}

}  // namespace kifsod
