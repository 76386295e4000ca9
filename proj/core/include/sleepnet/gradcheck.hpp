#pragma once

// Central finite-difference verification of tape gradients. Runs in 64-bit
// mode: the forward function is evaluated twice per parameter element with
// +/-eps perturbations and the quotient is compared against the tape result.

#include <functional>
#include <string>
#include <vector>

#include "sleepnet/ops.hpp"
#include "sleepnet/tensor.hpp"

namespace sleepnet {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// `forward` must be a pure function of the listed parameters (and any captured
// constants) returning a scalar loss tensor. Gradient elements where both the
// finite difference and the tape agree to be below `atol` are treated as zero:
// central differences of an O(1..100) loss carry ~1e-9 of cancellation noise,
// which would otherwise swamp the relative error of genuinely dead directions
// (e.g. a conv bias feeding a batch norm).
inline GradCheckReport grad_check(
    const std::function<Tensor<double>()>& forward,
    const std::vector<std::pair<std::string, Tensor<double>>>& params, double eps = 1e-5,
    double atol = 1e-6) {
  GradCheckReport report;
  // Tape gradients.
  for (auto& [name, p] : params) {
    const_cast<Tensor<double>&>(p).zero_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> loss = forward();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> tape_grads;
  tape_grads.reserve(params.size());
  for (const auto& [name, p] : params) tape_grads.push_back(p.grad());

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    auto& values = const_cast<Tensor<double>&>(p).mutable_values();
    GradCheckEntry entry;
    entry.param = name;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + eps;
      const double up = forward().item();
      values[i] = keep - eps;
      const double down = forward().item();
      values[i] = keep;
      const double fd = (up - down) / (2.0 * eps);
      const double tg = tape_grads[pi][i];
      const double scale = std::max(std::abs(fd), std::abs(tg));
      if (scale < atol) continue;
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(fd - tg) / scale);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace sleepnet
