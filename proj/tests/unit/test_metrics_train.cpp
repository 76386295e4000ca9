#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sleepnet/metrics.hpp"
#include "sleepnet/train.hpp"

using namespace sleepnet;
using namespace sleepnet::metrics;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("sleepnet_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm;
  cm.k = static_cast<int>(rows.size());
  for (const auto& r : rows) {
    for (auto v : r) cm.counts.push_back(v);
  }
  return cm;
}

// Definitional recomputation, written independently of metrics.cpp.
struct Oracle {
  double accuracy, balanced, kappa;
  std::vector<double> precision, recall, f1;
};
Oracle brute_force(const ConfusionMatrix& cm) {
  Oracle o;
  const int k = cm.k;
  double total = 0, diag = 0;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) total += static_cast<double>(cm.at(r, c));
    diag += static_cast<double>(cm.at(r, r));
  }
  o.accuracy = diag / total;
  double pe = 0, recall_sum = 0;
  int recall_n = 0;
  for (int c = 0; c < k; ++c) {
    double row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += static_cast<double>(cm.at(c, j));
      col += static_cast<double>(cm.at(j, c));
    }
    pe += (row / total) * (col / total);
    o.precision.push_back(col > 0 ? static_cast<double>(cm.at(c, c)) / col : -1);
    o.recall.push_back(row > 0 ? static_cast<double>(cm.at(c, c)) / row : -1);
    if (row > 0) {
      recall_sum += o.recall.back();
      ++recall_n;
    }
    if (o.precision.back() >= 0 && o.recall.back() >= 0 && o.precision.back() + o.recall.back() > 0) {
      o.f1.push_back(2 * o.precision.back() * o.recall.back() /
                     (o.precision.back() + o.recall.back()));
    } else {
      o.f1.push_back(-1);
    }
  }
  o.balanced = recall_sum / recall_n;
  o.kappa = (o.accuracy - pe) / (1 - pe);
  return o;
}

}  // namespace

TEST_CASE("confusion matrix construction and row normalization") {
  auto cm = confusion({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(2, 2) == 2);
  CHECK(cm.total() == 4);

  auto anti = confusion({0, 1}, {1, 0}, 2);
  CHECK(anti.at(1, 0) == 1);
  CHECK(anti.at(0, 1) == 1);
  CHECK(anti.at(0, 0) == 0);

  auto pct = cm.row_percent();
  for (int r = 0; r < 3; ++r) {
    double row = 0;
    for (int c = 0; c < 3; ++c) row += pct[static_cast<std::size_t>(r * 3 + c)];
    CHECK(row == doctest::Approx(100.0).epsilon(1e-9));
  }

  CHECK_THROWS_AS(confusion({0, 1}, {0}, 2), Error);
}

TEST_CASE("kappa and accuracy fixed points") {
  auto perfect = summarize(from_rows({{2, 0}, {0, 2}}));
  CHECK(perfect.accuracy == doctest::Approx(1.0));
  CHECK(perfect.kappa == doctest::Approx(1.0));

  auto chance = summarize(from_rows({{1, 1}, {1, 1}}));
  CHECK(chance.accuracy == doctest::Approx(0.5));
  CHECK(chance.kappa == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("summary equals brute-force recomputation on random matrices") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionMatrix cm;
    cm.k = 5;
    cm.counts.resize(25);
    for (auto& v : cm.counts) v = static_cast<std::int64_t>(rng.index(30));
    // Guarantee support everywhere so the oracle divisions are defined.
    for (int c = 0; c < 5; ++c) cm.at(c, c) += 1;

    auto s = summarize(cm);
    auto o = brute_force(cm);
    CHECK(s.accuracy == doctest::Approx(o.accuracy).epsilon(1e-12));
    CHECK(*s.balanced_accuracy == doctest::Approx(o.balanced).epsilon(1e-12));
    CHECK(s.kappa == doctest::Approx(o.kappa).epsilon(1e-12));
    for (int c = 0; c < 5; ++c) {
      CHECK(*s.per_class[static_cast<std::size_t>(c)].precision ==
            doctest::Approx(o.precision[static_cast<std::size_t>(c)]).epsilon(1e-12));
      CHECK(*s.per_class[static_cast<std::size_t>(c)].recall ==
            doctest::Approx(o.recall[static_cast<std::size_t>(c)]).epsilon(1e-12));
      CHECK(*s.per_class[static_cast<std::size_t>(c)].f1 ==
            doctest::Approx(o.f1[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }
    CHECK(s.kappa >= -1.0);
    CHECK(s.kappa <= 1.0);
  }
}

TEST_CASE("undefined metrics are markers, not zeros") {
  // Class 2 exists but is never predicted: precision undefined.
  auto s = summarize(from_rows({{5, 0, 0}, {0, 5, 0}, {1, 1, 0}}));
  CHECK_FALSE(s.per_class[2].precision.has_value());
  CHECK(s.per_class[2].recall.has_value());
  auto report = format_report(s, {"a", "b", "c"});
  CHECK(report.find("n/a") != std::string::npos);
}

TEST_CASE("summary is invariant under simultaneous row and column permutation") {
  Rng rng(111);
  ConfusionMatrix cm;
  cm.k = 4;
  cm.counts.resize(16);
  for (auto& v : cm.counts) v = 1 + static_cast<std::int64_t>(rng.index(20));
  auto s1 = summarize(cm);

  const int perm[4] = {2, 0, 3, 1};
  ConfusionMatrix pm;
  pm.k = 4;
  pm.counts.resize(16);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pm.at(perm[r], perm[c]) = cm.at(r, c);
  }
  auto s2 = summarize(pm);
  CHECK(s1.accuracy == doctest::Approx(s2.accuracy).epsilon(1e-12));
  CHECK(s1.kappa == doctest::Approx(s2.kappa).epsilon(1e-12));
  CHECK(*s1.balanced_accuracy == doctest::Approx(*s2.balanced_accuracy).epsilon(1e-12));
}

TEST_CASE("confusion csv export") {
  auto cm = from_rows({{3, 1}, {0, 4}});
  auto csv = confusion_csv(cm, {"x", "y"});
  CHECK(csv.find("x,3,1") != std::string::npos);
  CHECK(csv.find("y,0,4") != std::string::npos);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

TEST_CASE("huber loss fixed values and knee continuity") {
  Tensor<float> pred(Shape{1}, {0.5f});
  Tensor<float> target(Shape{1}, {0.0f});
  CHECK(train::huber_loss(pred, target, 1.0f).item() == doctest::Approx(0.125));

  Tensor<float> pred2(Shape{1}, {2.0f});
  CHECK(train::huber_loss(pred2, target, 1.0f).item() == doctest::Approx(1.5));

  // One-sided difference quotients on both sides of the knee approach delta.
  auto h = [](double r) { return std::abs(r) <= 1.0 ? 0.5 * r * r : std::abs(r) - 0.5; };
  const double eps = 1e-6;
  const double left = (h(1.0) - h(1.0 - eps)) / eps;
  const double right = (h(1.0 + eps) - h(1.0)) / eps;
  CHECK(left == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(right == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cross entropy fixed values, oracle, and one-hot validation") {
  Tensor<float> perfect(Shape{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor<float> onehot(Shape{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  CHECK(train::categorical_ce(perfect, onehot).item() <= 1e-6);

  Tensor<float> uniform(Shape{1, 5}, std::vector<float>(5, 0.2f));
  Tensor<float> label(Shape{1, 5}, {0.0f, 0.0f, 1.0f, 0.0f, 0.0f});
  CHECK(train::categorical_ce(uniform, label).item() == doctest::Approx(std::log(5.0)).epsilon(1e-6));

  // Brute-force per-row oracle.
  Rng rng(121);
  Tensor<float> probs(Shape{4, 3});
  Tensor<float> y(Shape{4, 3});
  double expected = 0.0;
  for (int r = 0; r < 4; ++r) {
    double row[3], sum = 0;
    for (int c = 0; c < 3; ++c) {
      row[c] = rng.uniform(0.05, 1.0);
      sum += row[c];
    }
    const auto hot = static_cast<int>(rng.index(3));
    for (int c = 0; c < 3; ++c) {
      probs.mutable_values()[static_cast<std::size_t>(r * 3 + c)] = static_cast<float>(row[c] / sum);
      y.mutable_values()[static_cast<std::size_t>(r * 3 + c)] = c == hot ? 1.0f : 0.0f;
    }
    expected += -std::log(static_cast<double>(probs.values()[static_cast<std::size_t>(r * 3 + hot)]));
  }
  expected /= 4.0;
  CHECK(train::categorical_ce(probs, y).item() == doctest::Approx(expected).epsilon(1e-5));

  Tensor<float> bad(Shape{1, 3}, {0.5f, 0.5f, 0.0f});
  CHECK_THROWS_WITH_AS(train::categorical_ce(uniform, bad), doctest::Contains("one-hot"), Error);
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace {

// Runs one optimizer step with an exact, hand-chosen gradient: the loss
// sum(w * g_const) has gradient g_const.
template <typename Opt, typename... Args>
std::vector<float> single_step(std::vector<float> w0, std::vector<float> g, double lr,
                               Args&&... args) {
  Tensor<float> w(Shape{static_cast<std::int64_t>(w0.size())}, w0);
  w.set_requires_grad(true);
  Tensor<float> gc(Shape{static_cast<std::int64_t>(g.size())}, g);
  Opt opt({w}, lr, std::forward<Args>(args)...);
  opt.zero_grad();
  {
    Tape<float> tape;
    auto loss = sum_all(mul(w, gc));
    tape.backward(loss);
  }
  opt.step();
  return w.values();
}

}  // namespace

TEST_CASE("optimizer single-step updates match hand-computed oracles") {
  SUBCASE("sgd") {
    auto w = single_step<train::Sgd<float>>({1.0f}, {0.5f}, 0.01);
    CHECK(w[0] == doctest::Approx(0.995).epsilon(1e-7));
  }
  SUBCASE("adam bias-corrected first step is ~ -lr") {
    auto w = single_step<train::Adam<float>>({1.0f, -2.0f}, {1.0f, 1.0f}, 0.001);
    CHECK(w[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(-2.0 - 0.001).epsilon(1e-6));
  }
  SUBCASE("adamax uses the infinity-norm accumulator") {
    // Step 1: m = 0.1*g, u = max(0.999*0, |g|) = |g|;
    // update = lr/(1-0.9) * m/(u+eps) = lr * g/|g| -> -lr * sign(g).
    auto w = single_step<train::Adamax<float>>({1.0f, 1.0f}, {0.5f, -3.0f}, 0.001);
    CHECK(w[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(1.0 + 0.001).epsilon(1e-6));
  }
  SUBCASE("step before backward is an error") {
    Tensor<float> w(Shape{2}, {1.0f, 2.0f});
    w.set_requires_grad(true);
    train::Sgd<float> opt({w}, 0.1);
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("backward"), Error);
  }
}

TEST_CASE("reduce-lr-on-plateau") {
  train::ReduceLrOnPlateau sched;  // factor 0.5, patience 3, min_lr 1e-5

  SUBCASE("strictly improving history leaves the lr unchanged") {
    double lr = 0.01;
    for (int i = 0; i < 10; ++i) lr = sched.observe(1.0 / (i + 1), lr);
    CHECK(lr == doctest::Approx(0.01));
  }
  SUBCASE("a flat history of length patience+1 halves once") {
    double lr = 0.01;
    lr = sched.observe(1.0, lr);
    for (int i = 0; i < 3; ++i) lr = sched.observe(1.0, lr);
    CHECK(lr == doctest::Approx(0.005));
    lr = sched.observe(1.0, lr);
    CHECK(lr == doctest::Approx(0.005));  // counter reset after the cut
  }
  SUBCASE("never drops below min_lr") {
    double lr = 4e-5;
    for (int i = 0; i < 40; ++i) lr = sched.observe(2.0, lr);
    CHECK(lr == doctest::Approx(1e-5));
  }
}

TEST_CASE("early stopping") {
  SUBCASE("improving forever never stops") {
    train::EarlyStopping stop;
    for (int e = 1; e <= 50; ++e) CHECK_FALSE(stop.observe(1.0 / e, e));
  }
  SUBCASE("flat for patience+1 epochs stops") {
    train::EarlyStopping stop;
    stop.patience = 4;
    CHECK_FALSE(stop.observe(1.0, 1));
    bool stopped = false;
    for (int e = 2; e <= 6 && !stopped; ++e) stopped = stop.observe(1.0, e);
    CHECK(stopped);
    CHECK(stop.best_epoch == 1);
  }
}

TEST_CASE("epoch log serialization is stable and null-safe") {
  train::EpochLog log;
  log.epoch = 3;
  log.lr = 0.001;
  log.train_loss = 0.25;
  log.val_loss = 0.5;
  auto j = train::epoch_log_json(log);
  CHECK(j.find("\"val_acc\":null") != std::string::npos);
  log.val_acc = 0.75;
  log.extras = {{"val_mae_kurtosis", 0.1}};
  auto j2 = train::epoch_log_json(log);
  CHECK(j2.find("\"val_acc\":0.75") != std::string::npos);
  CHECK(j2.find("val_mae_kurtosis") != std::string::npos);
}

TEST_CASE("fin corpus round trip and determinism") {
  auto dir = temp_dir("fincorpus");
  auto corpus = train::gen_fin_corpus(12, 4, 4, 64, 9);
  CHECK(corpus.train.size() == 12);
  train::save_fin_corpus(corpus, dir);
  auto loaded = train::load_fin_corpus(dir);
  CHECK(loaded.train == corpus.train);
  CHECK(loaded.val == corpus.val);
  CHECK(loaded.test == corpus.test);

  auto again = train::gen_fin_corpus(12, 4, 4, 64, 9);
  CHECK(again.train == corpus.train);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training loss decreases over the first steps of each stage") {
  using models::ScaleSpec;
  auto desk = ScaleSpec::desk();
  Rng rng(131);

  SUBCASE("fin descent") {
    auto fin = models::build_fin<float>(64, desk, 3);
    Tensor<float> x(Shape{8, 64, 1});
    for (auto& v : x.mutable_values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor<float> tk(Shape{8, 1});
    Tensor<float> ts(Shape{8, 1});
    for (auto& v : tk.mutable_values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& v : ts.mutable_values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto params = fin->params();
    std::vector<Tensor<float>> trainable;
    for (auto& p : params) {
      if (p.trainable) trainable.push_back(p.tensor);
    }
    train::Adam<float> opt(trainable, 1e-3);
    std::vector<double> losses;
    for (int step = 0; step < 5; ++step) {
      opt.zero_grad();
      Tape<float> tape;
      auto out = fin->forward(x, true);
      auto loss = mul_scalar(
          add(train::huber_loss(out.kurtosis, tk), train::huber_loss(out.skewness, ts)), 0.5f);
      losses.push_back(loss.item());
      tape.backward(loss);
      opt.step();
    }
    CHECK(losses.back() < losses.front());
  }

  SUBCASE("n1 descent") {
    auto n1 = models::build_n1_detector<float>(desk, 4);
    Tensor<float> x(Shape{4, desk.windows, desk.freq_bins, desk.window_len, 1});
    for (auto& v : x.mutable_values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor<float> y(Shape{4, 2});
    for (int i = 0; i < 4; ++i) y.mutable_values()[static_cast<std::size_t>(i * 2 + i % 2)] = 1.0f;
    auto params = n1->params();
    std::vector<Tensor<float>> trainable;
    for (auto& p : params) {
      if (p.trainable) trainable.push_back(p.tensor);
    }
    train::Sgd<float> opt(trainable, 1e-2);
    std::vector<double> losses;
    for (int step = 0; step < 5; ++step) {
      opt.zero_grad();
      Tape<float> tape;
      auto out = n1->forward(x, true);
      auto loss = train::categorical_ce(out.probs, y);
      losses.push_back(loss.item());
      tape.backward(loss);
      opt.step();
    }
    CHECK(losses.back() < losses.front());
  }

  SUBCASE("fused descent") {
    auto fin = models::build_fin<float>(desk.epoch_len, desk, 5);
    auto n1 = models::build_n1_detector<float>(desk, 6);
    auto fused = models::fuse_sleepnet(fin, n1, 7);
    Tensor<float> xs(Shape{4, desk.epoch_len, 1});
    for (auto& v : xs.mutable_values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor<float> xt(Shape{4, desk.windows, desk.freq_bins, desk.window_len, 1});
    for (auto& v : xt.mutable_values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor<float> y(Shape{4, 5});
    for (int i = 0; i < 4; ++i) y.mutable_values()[static_cast<std::size_t>(i * 5 + i)] = 1.0f;
    auto params = fused->params();
    std::vector<Tensor<float>> trainable;
    for (auto& p : params) {
      if (p.trainable) trainable.push_back(p.tensor);
    }
    train::Adamax<float> opt(trainable, 1e-3);
    std::vector<double> losses;
    for (int step = 0; step < 5; ++step) {
      opt.zero_grad();
      Tape<float> tape;
      auto probs = fused->forward(xs, xt, true);
      auto loss = train::categorical_ce(probs, y);
      losses.push_back(loss.item());
      tape.backward(loss);
      opt.step();
    }
    CHECK(losses.back() < losses.front());
  }
}

TEST_CASE("latency probe reports positive medians") {
  auto stats = latency_probe([]() {
    volatile double x = 0;
    for (int i = 0; i < 10000; ++i) x = x + 1.0;
  }, 20);
  CHECK(stats.median_ms > 0.0);
  CHECK(stats.p95_ms >= stats.median_ms);
}
