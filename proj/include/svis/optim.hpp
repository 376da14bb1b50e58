#pragma once

// Adam with a polynomial learning-rate schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "svis/params.hpp"

namespace svis {

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline double poly_lr(double base_lr, int iteration, int max_iterations,
                      double power = 0.9) {
  require(max_iterations > 0, "poly_lr: max_iterations must be positive");
  double frac = std::min(1.0, (double)iteration / max_iterations);
  return base_lr * std::pow(1.0 - frac, power);
}

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update from the gradients currently stored on the
  // parameters; lr_scale multiplies the base rate (schedule hook).
  void step(ParamStore& params, double lr_scale = 1.0) {
    ++t_;
    const double lr = cfg_.learning_rate * lr_scale;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : params.all()) {
      auto& m = m_[name];
      auto& v = v_[name];
      auto& data = p.node()->data;
      auto& grad = p.node()->grad;
      if (m.empty()) {
        m.assign(data.size(), 0.0);
        v.assign(data.size(), 0.0);
      }
      if (grad.empty()) continue;  // parameter unused by this graph
      require(grad.size() == data.size(), "Adam: bad gradient for " + name);
      for (size_t i = 0; i < data.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
  }

  int steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace svis
