#pragma once

// The standard gradient-integrity battery: every trainable layer kind is
// finite-difference checked in 64-bit mode on small randomized shapes with
// fixed seeds. Used by the grad-check CLI command and the acceptance suite.

#include "sleepnet/gradcheck.hpp"
#include "sleepnet/layers.hpp"

namespace sleepnet {

struct BatteryItem {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 1e-4;
  bool passed() const { return max_rel_err <= tol; }
};

inline std::vector<BatteryItem> run_grad_check_battery() {
  using namespace nn;
  std::vector<BatteryItem> items;
  Rng rng(0x6ad5eed);

  auto rand_tensor = [&](Shape shape, double lo, double hi) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
  };
  auto named = [](const ParamList<double>& ps) {
    std::vector<std::pair<std::string, Tensor<double>>> out;
    for (const auto& p : ps) {
      if (p.trainable) out.emplace_back(p.name, p.tensor);
    }
    return out;
  };
  auto add = [&](const std::string& name, double err, double tol = 1e-4) {
    items.push_back({name, err, tol});
  };

  {
    Dense<double> layer(4, 3, rng);
    auto x = rand_tensor({2, 4}, -1, 1);
    ParamList<double> ps;
    layer.collect("dense", ps);
    add("dense", grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err,
        1e-6);
  }
  {
    Conv1d<double> layer(2, 3, 3, rng);
    auto x = rand_tensor({2, 10, 2}, -1, 1);
    ParamList<double> ps;
    layer.collect("conv1d", ps);
    add("conv1d", grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  {
    Conv2d<double> plain(2, 3, 3, rng, 1, 1);
    Conv2d<double> dilated(2, 3, 3, rng, 1, 2);
    auto x = rand_tensor({1, 6, 7, 2}, -1, 1);
    ParamList<double> ps;
    plain.collect("conv2d", ps);
    add("conv2d", grad_check([&]() { return sum_all(square(plain.forward(x))); }, named(ps)).max_rel_err);
    ParamList<double> ps2;
    dilated.collect("conv2d_dilated", ps2);
    add("conv2d_dilated",
        grad_check([&]() { return sum_all(square(dilated.forward(x))); }, named(ps2)).max_rel_err);
  }
  {
    BatchNorm<double> layer(3);
    auto x = rand_tensor({4, 5, 3}, -1, 1);
    auto w_fixed = rand_tensor({4, 5, 3}, -1, 1);
    auto x_leaf = x;
    x_leaf.set_requires_grad(true);
    ParamList<double> ps;
    layer.collect("batch_norm", ps);
    auto list = named(ps);
    list.emplace_back("batch_norm.x", x_leaf);
    add("batch_norm",
        grad_check([&]() { return sum_all(square(mul(layer.forward(x_leaf, true), w_fixed))); }, list)
            .max_rel_err);
  }
  {
    Tensor<double> x(Shape{1, 4, 4, 2});
    std::vector<int> order(32);
    for (int i = 0; i < 32; ++i) order[i] = i;
    rng.shuffle(order);
    for (int i = 0; i < 32; ++i) x.mutable_values()[static_cast<std::size_t>(i)] = 0.15 * order[i];
    x.set_requires_grad(true);
    add("max_pool",
        grad_check([&]() { return sum_all(square(maxpool2d(x))); }, {{"x", x}}).max_rel_err);
  }
  {
    Lstm<double> layer(3, 2, rng);
    auto x = rand_tensor({2, 6, 3}, -1, 1);
    ParamList<double> ps;
    layer.collect("lstm", ps);
    add("lstm", grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  {
    BiLstm<double> layer(3, 2, rng);
    auto x = rand_tensor({2, 6, 3}, -1, 1);
    ParamList<double> ps;
    layer.collect("bilstm", ps);
    add("bilstm", grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  {
    SeBlock<double> layer(4, rng);
    auto x = rand_tensor({2, 3, 3, 4}, -1, 1);
    ParamList<double> ps;
    layer.collect("se", ps);
    add("se_block", grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  {
    AsppBlock<double> layer(2, 3, 6, 6, rng);
    auto x = rand_tensor({1, 6, 6, 2}, -1, 1);
    ParamList<double> ps;
    layer.collect("aspp", ps);
    add("aspp",
        grad_check([&]() { return sum_all(square(layer.forward(x, true))); }, named(ps)).max_rel_err);
  }
  {
    ResidualBlock<double> layer(2, 4, 2, rng);
    auto x = rand_tensor({1, 6, 6, 2}, -1, 1);
    ParamList<double> ps;
    layer.collect("residual", ps);
    add("residual",
        grad_check([&]() { return sum_all(square(layer.forward(x, true))); }, named(ps)).max_rel_err);
  }
  {
    StemBlock<double> layer(2, 4, rng);
    auto x = rand_tensor({1, 6, 6, 2}, -1, 1);
    ParamList<double> ps;
    layer.collect("stem", ps);
    add("stem",
        grad_check([&]() { return sum_all(square(layer.forward(x, true))); }, named(ps)).max_rel_err);
  }
  {
    LtcCell<double> layer(3, 2, rng);
    auto x = rand_tensor({2, 5, 3}, -1, 1);
    ParamList<double> ps;
    layer.collect("ltc", ps);
    add("ltc_cell",
        grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  {
    KanDense<double> layer(4, 3, rng);
    auto x = rand_tensor({3, 4}, -0.9, 0.9);
    ParamList<double> ps;
    layer.collect("kan", ps);
    add("kan_dense",
        grad_check([&]() { return sum_all(square(layer.forward(x))); }, named(ps)).max_rel_err);
  }
  return items;
}

}  // namespace sleepnet
