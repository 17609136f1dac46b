#include "kifsod/optimizer.hpp"

#include <cmath>

#include "kifsod/error.hpp"

namespace kifsod {

MomentumSgd::MomentumSgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

void MomentumSgd::step(DetectorParams& params, DetectorParams& grad, const LearningRate& lr_of) {
  std::vector<TensorView> w = tensor_views(params);
  std::vector<TensorView> g = tensor_views(grad);
  if (w.size() != g.size()) throw ShapeError("gradient does not match parameters");
  if (velocity_.size() != w.size()) {
    velocity_.assign(w.size(), {});
    for (std::size_t t = 0; t < w.size(); ++t) velocity_[t].assign(w[t].data.size(), 0.0);
  }
  for (std::size_t t = 0; t < w.size(); ++t) {
    if (w[t].data.size() != g[t].data.size() || velocity_[t].size() != w[t].data.size())
      throw ShapeError("gradient tensor " + w[t].name + " does not match parameters");
    const double lr = lr_of(w[t]);
    if (lr == 0.0) continue;
    const double wd = w[t].is_bias ? 0.0 : weight_decay_;
    auto& v = velocity_[t];
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + g[t].data[i] + wd * w[t].data[i];
      w[t].data[i] -= lr * v[i];
    }
  }
}

}  // namespace kifsod
