#include "kifsod/efficiency.hpp"

#include "kifsod/error.hpp"

namespace kifsod {

void SpeedProtocol::validate() const {
  if (eval_interval < 1) throw ConfigError("eval_interval must be at least 1");
  if (patience < eval_interval || patience % eval_interval != 0)
    throw ConfigError("patience must be a positive multiple of eval_interval");
  if (max_budget < 0) throw ConfigError("max_budget must be non-negative");
}

void to_json(nlohmann::json& j, const SpeedProtocol& p) {
  j = {{"eval_interval", p.eval_interval}, {"patience", p.patience}, {"max_budget", p.max_budget}};
}

void from_json(const nlohmann::json& j, SpeedProtocol& p) {
  const SpeedProtocol d;
  p.eval_interval = j.value("eval_interval", d.eval_interval);
  p.patience = j.value("patience", d.patience);
  p.max_budget = j.value("max_budget", d.max_budget);
}

void to_json(nlohmann::json& j, const SpeedReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) curve.push_back({{"iteration", p.iteration}, {"nAP", p.nap}});
  j = {{"curve", curve},
       {"best_nap", r.best_nap},
       {"convergence_iteration", r.convergence_iteration},
       {"budget_exhausted", r.budget_exhausted}};
}

SpeedReport detect_convergence(const std::vector<SpeedPoint>& curve, const SpeedProtocol& protocol) {
  protocol.validate();
  if (curve.empty()) throw DataError("empty convergence curve");
  SpeedReport r;
  r.best_nap = curve.front().nap;
  r.convergence_iteration = curve.front().iteration;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const SpeedPoint& p = curve[i];
    if (p.iteration % protocol.eval_interval != 0)
      throw DataError("curve iteration " + std::to_string(p.iteration) + " is not a multiple of eval_interval");
    if (i > 0 && p.iteration <= curve[i - 1].iteration) throw DataError("curve iterations must strictly increase");
    if (p.nap > r.best_nap) {
      r.best_nap = p.nap;
      r.convergence_iteration = p.iteration;
    }
    r.curve.push_back(p);
    if (p.iteration - r.convergence_iteration >= protocol.patience) return r;
  }
  r.budget_exhausted = true;
  return r;
}

SpeedReport measure_adaptation_speed(const TransferLauncher& launcher, const SpeedProtocol& protocol) {
  protocol.validate();
  std::vector<SpeedPoint> curve;
  launcher(protocol.eval_interval, protocol.max_budget, [&](int iteration, double nap) {
    curve.push_back({iteration, nap});
    return !detect_convergence(curve, protocol).budget_exhausted;
  });
  return detect_convergence(curve, protocol);
}

TransferLauncher make_transfer_launcher(const DetectorParams& params, const FewShotSet& fewshot,
                                        const TransferConfig& config,
                                        std::function<CurvePoint(int, const DetectorParams&)> evaluate,
                                        TransferResult* result) {
  return [&params, &fewshot, config, evaluate = std::move(evaluate), result](
             int interval, int budget, const std::function<bool(int, double)>& observe) {
    TransferConfig c = config;
    c.iterations = budget;
    TransferMonitor monitor;
    monitor.interval = interval;
    monitor.evaluate = evaluate;
    monitor.should_stop = [&observe](const std::vector<CurvePoint>& curve) {
      return observe(curve.back().iteration, curve.back().nap50);
    };
    TransferResult r = fewshot_transfer(params, fewshot, c, monitor);
    if (result) *result = std::move(r);
  };
}

// ---------------------------------------------------------------------------------------------

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::linear:
      return "linear";
    case LayerKind::roi_stage_marker:
      return "roi_stage_marker";
  }
  return "?";
}

}  // namespace

void to_json(nlohmann::json& j, const ArchDescriptor& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : a.layers) {
    nlohmann::json e = {{"kind", kind_name(l.kind)}, {"name", l.name}, {"branch", l.branch}};
    if (l.kind == LayerKind::conv) {
      e.update({{"kernel", l.kernel},
                {"in_ch", l.in_ch},
                {"out_ch", l.out_ch},
                {"stride", l.stride},
                {"padding", l.padding}});
    } else if (l.kind == LayerKind::linear) {
      e.update({{"in", l.in}, {"out", l.out}});
    }
    layers.push_back(e);
  }
  j = {{"input", {a.input_h, a.input_w, a.input_c}},
       {"proposal_cap_train", a.proposal_cap_train},
       {"proposal_cap_infer", a.proposal_cap_infer},
       {"layers", layers}};
}

ArchDescriptor describe_architecture(const DetectorParams& params, int proposal_cap_train, int proposal_cap_infer) {
  ArchDescriptor a;
  a.input_h = a.input_w = params.arch.image_size;
  a.input_c = 3;
  a.proposal_cap_train = proposal_cap_train;
  a.proposal_cap_infer = proposal_cap_infer;
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& w = params.backbone[b].weight;
    LayerDesc l;
    l.kind = LayerKind::conv;
    l.name = "backbone.conv" + std::to_string(b + 1);
    l.kernel = 3;
    l.out_ch = static_cast<int>(w.rows());
    l.in_ch = static_cast<int>(w.cols()) / 9;
    l.stride = 2;
    l.padding = 1;
    a.layers.push_back(l);
  }
  LayerDesc rpn;
  rpn.kind = LayerKind::conv;
  rpn.name = "proposal.head";
  rpn.kernel = 1;
  rpn.in_ch = static_cast<int>(params.proposal.weight.cols());
  rpn.out_ch = static_cast<int>(params.proposal.weight.rows());
  rpn.branch = true;
  a.layers.push_back(rpn);
  a.layers.push_back({LayerKind::roi_stage_marker, "roi_align"});
  auto linear = [&](const std::string& name, const Dense& d, bool branch) {
    LayerDesc l;
    l.kind = LayerKind::linear;
    l.name = name;
    l.in = static_cast<int>(d.weight.cols());
    l.out = static_cast<int>(d.weight.rows());
    l.branch = branch;
    a.layers.push_back(l);
  };
  linear("roi_head.fc1", params.roi_head[0], false);
  linear("roi_head.fc2", params.roi_head[1], false);
  linear("classifier", params.classifier, true);
  linear("regressor", params.regressor, true);
  return a;
}

std::string to_string(Phase p) { return p == Phase::train_forward ? "train_forward" : "inference"; }

Phase phase_from_string(const std::string& s) {
  if (s == "train_forward") return Phase::train_forward;
  if (s == "inference") return Phase::inference;
  throw ConfigError("unknown phase '" + s + "'");
}

void to_json(nlohmann::json& j, const FlopsReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) layers.push_back({{"name", l.name}, {"flops", l.flops}});
  j = {{"phase", to_string(r.phase)}, {"total", r.total}, {"layers", layers}, {"proposal_cap", r.proposal_cap}};
}

FlopsReport estimate_flops(const ArchDescriptor& arch, Phase phase) {
  if (arch.input_h < 1 || arch.input_w < 1 || arch.input_c < 1)
    throw ConfigError("descriptor input size must be positive");
  int markers = 0;
  for (const auto& l : arch.layers) markers += l.kind == LayerKind::roi_stage_marker;
  if (markers != 1) throw ConfigError("descriptor needs exactly one roi_stage_marker");

  FlopsReport r;
  r.phase = phase;
  r.proposal_cap = phase == Phase::train_forward ? arch.proposal_cap_train : arch.proposal_cap_infer;
  if (r.proposal_cap < 1) throw ConfigError("proposal cap must be positive");

  std::uint64_t h = static_cast<std::uint64_t>(arch.input_h), w = static_cast<std::uint64_t>(arch.input_w);
  int channels = arch.input_c;
  bool per_proposal = false;
  for (const auto& l : arch.layers) {
    std::uint64_t f = 0;
    switch (l.kind) {
      case LayerKind::roi_stage_marker:
        per_proposal = true;
        continue;
      case LayerKind::conv: {
        if (per_proposal) throw ConfigError("conv layer '" + l.name + "' after the roi_stage_marker");
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0 || l.in_ch < 1 || l.out_ch < 1)
          throw ConfigError("conv layer '" + l.name + "' has invalid geometry");
        if (l.in_ch != channels) throw ConfigError("conv layer '" + l.name + "' input channels do not chain");
        const auto k = static_cast<std::int64_t>(l.kernel), s = static_cast<std::int64_t>(l.stride),
                   pad = static_cast<std::int64_t>(l.padding);
        const std::int64_t oh = (static_cast<std::int64_t>(h) + 2 * pad - k) / s + 1;
        const std::int64_t ow = (static_cast<std::int64_t>(w) + 2 * pad - k) / s + 1;
        if (oh < 1 || ow < 1) throw ConfigError("conv layer '" + l.name + "' produces an empty map");
        f = 2ull * static_cast<std::uint64_t>(k * k) * static_cast<std::uint64_t>(l.in_ch) *
            static_cast<std::uint64_t>(l.out_ch) * static_cast<std::uint64_t>(oh * ow);
        if (!l.branch) {
          h = static_cast<std::uint64_t>(oh);
          w = static_cast<std::uint64_t>(ow);
          channels = l.out_ch;
        }
        break;
      }
      case LayerKind::linear:
        if (!per_proposal) throw ConfigError("linear layer '" + l.name + "' before the roi_stage_marker");
        if (l.in < 1 || l.out < 1) throw ConfigError("linear layer '" + l.name + "' has invalid size");
        f = 2ull * static_cast<std::uint64_t>(l.in) * static_cast<std::uint64_t>(l.out) *
            static_cast<std::uint64_t>(r.proposal_cap);
        break;
    }
    r.layers.push_back({l.name, f});
    r.total += f;
  }
  return r;
}

}  // namespace kifsod
