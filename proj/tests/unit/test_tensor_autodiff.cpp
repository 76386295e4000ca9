#include <doctest.h>

#include <cmath>

#include "sleepnet/gradcheck.hpp"
#include "sleepnet/ops.hpp"
#include "sleepnet/tensor.hpp"

using namespace sleepnet;

namespace {

Tensor<double> rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("elementwise add and matmul basics") {
  Tensor<float> a(Shape{2}, {1.f, 2.f});
  Tensor<float> b(Shape{2}, {3.f, 4.f});
  auto c = add(a, b);
  CHECK(c.values()[0] == doctest::Approx(4.f));
  CHECK(c.values()[1] == doctest::Approx(6.f));

  Tensor<float> eye(Shape{2, 2}, {1.f, 0.f, 0.f, 1.f});
  Tensor<float> m(Shape{2, 2}, {2.f, 3.f, 4.f, 5.f});
  auto p = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(p.values()[i] == doctest::Approx(m.values()[i]));

  Tensor<float> ones(Shape{3, 4}, 1.f);
  auto s = reduce_sum(ones, {1});
  REQUIRE(s.shape() == Shape{3});
  for (int i = 0; i < 3; ++i) CHECK(s.values()[i] == doctest::Approx(4.f));
}

TEST_CASE("shape errors name both shapes") {
  Tensor<float> a(Shape{2, 3}, 0.f);
  Tensor<float> b(Shape{2}, 0.f);  // (2) is not a suffix of (2,3)
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2,3)"), ShapeError);
  Tensor<float> m(Shape{3, 2}, 0.f);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("backward populates leaf gradients") {
  Tensor<float> x(Shape{3}, {1.f, 2.f, 3.f});
  x.set_requires_grad(true);

  SUBCASE("sum") {
    Tape<float> tape;
    auto loss = sum_all(x);
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(1.f));
  }
  SUBCASE("sum of squares") {
    Tape<float> tape;
    auto loss = sum_all(square(x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.f));
    CHECK(x.grad()[1] == doctest::Approx(4.f));
    CHECK(x.grad()[2] == doctest::Approx(6.f));
  }
}

TEST_CASE("backward rejects non-scalar loss and double consumption") {
  Tensor<float> x(Shape{3}, {1.f, 2.f, 3.f});
  x.set_requires_grad(true);
  Tape<float> tape;
  auto y = square(x);
  CHECK_THROWS_AS(tape.backward(y), Error);
  auto loss = sum_all(y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward of a sum of subgraphs is the sum of separate backwards") {
  Rng rng(7);
  auto x = rand_tensor({4}, rng);
  x.set_requires_grad(true);

  auto forward_a = [&]() { return sum_all(mul(x, x)); };
  auto forward_b = [&]() { return sum_all(silu(x)); };

  x.zero_grad();
  {
    Tape<double> tape;
    auto loss = add(forward_a(), forward_b());
    tape.backward(loss);
  }
  const auto combined = x.grad();

  x.zero_grad();
  {
    Tape<double> tape;
    tape.backward(forward_a());
  }
  auto ga = x.grad();
  x.zero_grad();
  {
    Tape<double> tape;
    tape.backward(forward_b());
  }
  auto gb = x.grad();

  for (std::size_t i = 0; i < ga.size(); ++i) {
    CHECK(combined[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  Rng rng(123);
  auto x = rand_tensor({3, 5}, rng);
  auto w = rand_tensor({5, 4}, rng);
  auto y1 = matmul(silu(x), w);
  auto y2 = matmul(silu(x), w);
  for (std::size_t i = 0; i < y1.values().size(); ++i) {
    CHECK(y1.values()[i] == y2.values()[i]);
  }
}

TEST_CASE("finite differences confirm every primitive's gradient") {
  Rng rng(99);
  const double tol = 1e-6;

  auto check1 = [&](const char* name, auto&& fn, Tensor<double> x) {
    x.set_requires_grad(true);
    auto report = grad_check([&]() { return sum_all(fn(x)); }, {{name, x}});
    INFO(name);
    CHECK(report.max_rel_err < tol);
  };

  check1("neg", [](const Tensor<double>& t) { return neg(t); }, rand_tensor({3, 4}, rng));
  check1("exp", [](const Tensor<double>& t) { return exp(t); }, rand_tensor({3, 4}, rng));
  check1("log", [](const Tensor<double>& t) { return log(t); }, rand_tensor({3, 4}, rng, 0.5, 2.0));
  check1("sqrt", [](const Tensor<double>& t) { return sqrt(t); }, rand_tensor({3, 4}, rng, 0.5, 2.0));
  check1("rsqrt", [](const Tensor<double>& t) { return rsqrt(t); }, rand_tensor({3, 4}, rng, 0.5, 2.0));
  check1("square", [](const Tensor<double>& t) { return square(t); }, rand_tensor({3, 4}, rng));
  check1("relu", [](const Tensor<double>& t) { return relu(t); }, rand_tensor({3, 4}, rng, 0.2, 1.0));
  check1("sigmoid", [](const Tensor<double>& t) { return sigmoid(t); }, rand_tensor({3, 4}, rng, -3, 3));
  check1("tanh", [](const Tensor<double>& t) { return tanh(t); }, rand_tensor({3, 4}, rng, -2, 2));
  check1("silu", [](const Tensor<double>& t) { return silu(t); }, rand_tensor({3, 4}, rng, -3, 3));
  check1("softplus", [](const Tensor<double>& t) { return softplus(t); }, rand_tensor({3, 4}, rng, -3, 3));
  check1("softmax", [](const Tensor<double>& t) { return mul(softmax_lastdim(t), t); },
         rand_tensor({3, 4}, rng, -2, 2));
  check1("huber", [](const Tensor<double>& t) { return huber_elem(t, 1.0); },
         rand_tensor({3, 4}, rng, -2, 2));
  check1("mean_axes", [](const Tensor<double>& t) { return square(reduce_mean(t, {0, 2})); },
         rand_tensor({3, 4, 2}, rng));
  check1("slice", [](const Tensor<double>& t) { return square(slice_axis(t, 1, 1, 2)); },
         rand_tensor({2, 4, 3}, rng));
  check1("flip", [](const Tensor<double>& t) { return mul(flip_axis(t, 1), t); },
         rand_tensor({2, 4, 3}, rng));
  check1("reshape", [](const Tensor<double>& t) { return square(reshape(t, Shape{6, 2})); },
         rand_tensor({3, 4}, rng));
  check1("resize", [](const Tensor<double>& t) { return square(resize_bilinear(t, 3, 5)); },
         rand_tensor({2, 4, 6, 2}, rng));
  check1("spline_basis", [](const Tensor<double>& t) { return square(spline_basis(t, 5, 3, -1.0, 1.0)); },
         rand_tensor({4, 3}, rng, -1.4, 1.4));

  SUBCASE("binary ops with broadcast") {
    auto a = rand_tensor({3, 4}, rng);
    auto b = rand_tensor({4}, rng, 0.5, 1.5);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto report = grad_check(
        [&]() { return sum_all(square(div(mul(add(a, b), sub(a, b)), b))); },
        {{"a", a}, {"b", b}});
    CHECK(report.max_rel_err < tol);
  }

  SUBCASE("matmul") {
    auto a = rand_tensor({3, 5}, rng);
    auto b = rand_tensor({5, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto report = grad_check([&]() { return sum_all(square(matmul(a, b))); },
                             {{"a", a}, {"b", b}});
    CHECK(report.max_rel_err < tol);
  }

  SUBCASE("concat") {
    auto a = rand_tensor({2, 3}, rng);
    auto b = rand_tensor({2, 2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    auto report = grad_check(
        [&]() {
          return sum_all(square(concat<double>({a, b}, 1)));
        },
        {{"a", a}, {"b", b}});
    CHECK(report.max_rel_err < tol);
  }

  SUBCASE("conv2d with stride and dilation") {
    auto x = rand_tensor({1, 6, 7, 2}, rng);
    auto w = rand_tensor({3, 3, 2, 3}, rng);
    auto b = rand_tensor({3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    for (int stride : {1, 2}) {
      for (int dil : {1, 2}) {
        auto report = grad_check(
            [&]() { return sum_all(square(conv2d(x, w, b, stride, dil))); },
            {{"x", x}, {"w", w}, {"b", b}});
        INFO("stride=" << stride << " dil=" << dil);
        CHECK(report.max_rel_err < tol);
      }
    }
  }

  SUBCASE("conv1d") {
    auto x = rand_tensor({2, 8, 2}, rng);
    auto w = rand_tensor({3, 2, 3}, rng);
    auto b = rand_tensor({3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto report = grad_check([&]() { return sum_all(square(conv1d(x, w, b))); },
                             {{"x", x}, {"w", w}, {"b", b}});
    CHECK(report.max_rel_err < tol);
  }

  SUBCASE("maxpool (distinct values keep FD valid)") {
    Tensor<double> x(Shape{1, 4, 4, 2});
    std::vector<int> order(32);
    for (int i = 0; i < 32; ++i) order[i] = i;
    Rng r2(5);
    r2.shuffle(order);
    for (int i = 0; i < 32; ++i) x.mutable_values()[i] = 0.1 * order[i];
    x.set_requires_grad(true);
    auto report = grad_check([&]() { return sum_all(square(maxpool2d(x))); }, {{"x", x}});
    CHECK(report.max_rel_err < tol);
  }

  SUBCASE("scale_channels") {
    auto x = rand_tensor({2, 3, 3, 4}, rng);
    auto g = rand_tensor({2, 4}, rng);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    auto report = grad_check([&]() { return sum_all(square(scale_channels(x, g))); },
                             {{"x", x}, {"g", g}});
    CHECK(report.max_rel_err < tol);
  }
}

TEST_CASE("spline basis is a partition of unity on the grid") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = rng.uniform(-1.0, 1.0);
    double basis[8], deriv[8];
    detail::bspline_eval(x, 5, 3, -1.0, 1.0, basis, deriv);
    double sum = 0.0, dsum = 0.0;
    for (int i = 0; i < 8; ++i) {
      sum += basis[i];
      dsum += deriv[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(dsum == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("dropout is the bitwise identity in inference mode") {
  Rng rng(11);
  auto x = rand_tensor({4, 5}, rng);
  Rng drop_rng(3);
  auto y = dropout(x, 0.5, drop_rng, /*training=*/false);
  CHECK(y.impl() == x.impl());

  auto z = dropout(x, 0.5, drop_rng, /*training=*/true);
  int zeros = 0;
  for (std::size_t i = 0; i < z.values().size(); ++i) {
    if (z.values()[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(z.values()[i] == doctest::Approx(x.values()[i] * 2.0));
    }
  }
  CHECK(zeros > 0);
}
