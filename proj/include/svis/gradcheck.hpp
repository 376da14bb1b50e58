#pragma once

// Central finite-difference gradient checker. The numerical estimate is an
// independent path against reverse-mode backward(); every layer in the repo
// is validated through it.

#include <functional>
#include <vector>

#include "svis/tensor.hpp"

namespace svis {

// f must evaluate a scalar from the given inputs (re-running the forward
// graph each call). Returns the worst relative discrepancy between
// backward() and central differences over all coordinates of all inputs
// that require gradients.
inline double finite_diff_check(
    const std::function<Tensor(const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double eps = 1e-5) {
  require(eps > 0, "finite_diff_check: eps must be positive");
  Tensor loss = f(inputs);
  require(loss.numel() == 1, "finite_diff_check: f must be scalar-valued");
  // backward() only resets gradients of nodes reachable from this loss;
  // clear the inputs explicitly so a previous check cannot leak through.
  for (auto& t : inputs) t.node()->grad.clear();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs)
    analytic.push_back(t.requires_grad() ? t.grad() : std::vector<double>());

  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    auto& data = inputs[ti].mutable_data();
    // Elements whose gradient is tiny compared to the tensor's dominant
    // gradient are judged against that dominant scale; otherwise
    // finite-difference noise on a near-zero entry dominates the report.
    double scale = 1e-6;
    for (double a : analytic[ti]) scale = std::max(scale, 1e-3 * std::abs(a));
    for (size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double fp = f(inputs).value();
      data[i] = saved - eps;
      const double fm = f(inputs).value();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      // A parameter the graph never visits has no gradient buffer; its
      // analytic gradient is zero, and the comparison below still flags it
      // if the numeric estimate disagrees.
      const double a = analytic[ti].empty() ? 0.0 : analytic[ti][i];
      const double denom = std::max(std::abs(a) + std::abs(numeric), scale);
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace svis
