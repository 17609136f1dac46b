#pragma once

#include <functional>
#include <vector>

#include "kifsod/detector.hpp"

namespace kifsod {

/// Heavy-ball SGD: v <- m v + (g + wd w), w <- w - lr v. Weight decay applies to weights, not
/// biases. A tensor whose learning rate is zero is skipped entirely, velocity included.
class MomentumSgd {
 public:
  using LearningRate = std::function<double(const TensorView&)>;

  MomentumSgd(double momentum, double weight_decay);

  void step(DetectorParams& params, DetectorParams& grad, const LearningRate& lr_of);
  void reset() { velocity_.clear(); }

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace kifsod
