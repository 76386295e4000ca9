#include <doctest.h>

#include <filesystem>

#include "sleepnet/checkpoint.hpp"
#include "sleepnet/models.hpp"

using namespace sleepnet;
using namespace sleepnet::models;

namespace {

Tensor<float> rand_tensor(Shape shape, Rng& rng, float lo = -1.f, float hi = 1.f) {
  Tensor<float> t(shape);
  for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("sleepnet_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pooling chain shape law: 3000 samples collapse to 93 steps") {
  // Independent floor-halving oracle.
  std::int64_t oracle = 3000;
  std::vector<std::int64_t> expected;
  for (int i = 0; i < 5; ++i) {
    oracle /= 2;
    expected.push_back(oracle);
  }
  CHECK(expected == std::vector<std::int64_t>{1500, 750, 375, 187, 93});

  // The actual op chain agrees.
  Rng rng(1);
  Tensor<float> x = rand_tensor({1, 3000, 1}, rng);
  for (int i = 0; i < 5; ++i) {
    x = maxpool1d(x);
    CHECK(x.dim(1) == expected[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("fin model shape laws and tap width") {
  auto desk = ScaleSpec::desk();
  auto fin = build_fin<float>(512, desk, 42);
  Rng rng(2);
  auto x = rand_tensor({3, 512, 1}, rng, 0.f, 1.f);
  auto out = fin->forward(x, false);
  CHECK(out.kurtosis.shape() == Shape{3, 1});
  CHECK(out.skewness.shape() == Shape{3, 1});
  CHECK(out.features.shape() == Shape{3, desk.ltc_units()});

  // Paper scale exposes the 128-wide feature tap.
  auto paper = ScaleSpec::paper();
  auto fin_paper = build_fin<float>(3000, paper, 42);
  auto xp = rand_tensor({1, 3000, 1}, rng, 0.f, 1.f);
  auto outp = fin_paper->forward(xp, false);
  CHECK(outp.features.shape() == Shape{1, 128});

  CHECK_THROWS_AS(build_fin<float>(16, desk, 42), Error);
  auto short_x = rand_tensor({1, 16, 1}, rng);
  CHECK_THROWS_AS(fin->forward(short_x, false), ShapeError);
}

TEST_CASE("n1 detector output is a distribution and rejects bad TFR shapes") {
  auto desk = ScaleSpec::desk();
  auto n1 = build_n1_detector<float>(desk, 7);
  Rng rng(3);
  auto x = rand_tensor({2, desk.windows, desk.freq_bins, desk.window_len, 1}, rng, 0.f, 1.f);
  auto out = n1->forward(x, false);
  CHECK(out.probs.shape() == Shape{2, 2});
  for (int n = 0; n < 2; ++n) {
    float sum = 0.f;
    for (int c = 0; c < 2; ++c) sum += out.probs.values()[static_cast<std::size_t>(n * 2 + c)];
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }
  CHECK(out.features.shape() == Shape{2, 2 * desk.lstm_units()});

  auto bad = rand_tensor({2, desk.windows, desk.freq_bins, desk.window_len + 1, 1}, rng);
  CHECK_THROWS_AS(n1->forward(bad, false), ShapeError);
}

TEST_CASE("window encoder is shared: permuting windows permutes features") {
  auto desk = ScaleSpec::desk();
  auto n1 = build_n1_detector<float>(desk, 11);
  Rng rng(4);
  auto windows = rand_tensor({6, desk.freq_bins, desk.window_len, 1}, rng, 0.f, 1.f);
  auto feats = n1->trunk()->encode_windows(windows, false);

  // Reversed window order.
  auto reversed = flip_axis(windows, 0);
  auto feats_rev = n1->trunk()->encode_windows(reversed, false);
  const std::int64_t width = feats.dim(1);
  for (std::int64_t w = 0; w < 6; ++w) {
    for (std::int64_t f = 0; f < width; ++f) {
      CHECK(feats.values()[static_cast<std::size_t>(w * width + f)] ==
            feats_rev.values()[static_cast<std::size_t>((5 - w) * width + f)]);
    }
  }
}

TEST_CASE("n1 parameter count matches the per-layer formula oracle") {
  auto desk = ScaleSpec::desk();
  auto n1 = build_n1_detector<float>(desk, 5);
  auto params = n1->params();
  const std::int64_t actual = nn::trainable_count(params);

  auto conv2d_p = [](std::int64_t cin, std::int64_t f, std::int64_t k) { return k * k * cin * f + f; };
  auto bn_p = [](std::int64_t c) { return 2 * c; };
  auto dense_p = [](std::int64_t i, std::int64_t o) { return i * o + o; };
  auto se_p = [&](std::int64_t c) {
    const std::int64_t r = (c + 7) / 8;
    return dense_p(c, r) + dense_p(r, c);
  };
  auto res_p = [&](std::int64_t cin, std::int64_t f) {
    return conv2d_p(cin, f, 3) + bn_p(f) + conv2d_p(f, f, 3) + bn_p(f) + conv2d_p(cin, f, 1) + se_p(f);
  };
  const std::int64_t stem = conv2d_p(1, 4, 3) + bn_p(4) + conv2d_p(4, 4, 3) + conv2d_p(1, 4, 1);
  const std::int64_t res = res_p(4, 8) + res_p(8, 16) + res_p(16, 32);
  // Desk feature maps reach 4x8, so ASPP rates clip to {1,3}: two branches.
  const std::int64_t aspp = 2 * (conv2d_p(32, 64, 3) + bn_p(64)) + conv2d_p(64, 64, 1);
  auto lstm_p = [&](std::int64_t in, std::int64_t u) { return in * 4 * u + u * 4 * u + 4 * u; };
  const std::int64_t bilstm = 2 * lstm_p(64, 16);
  const std::int64_t head = dense_p(32, 32) + dense_p(32, 8) + dense_p(8, 2);
  CHECK(actual == stem + res + aspp + bilstm + head);

  // Weight sharing across the six windows: the count is independent of the
  // window multiplicity by construction (one encoder in the parameter list).
  auto again = build_n1_detector<float>(desk, 5);
  CHECK(nn::trainable_count(again->params()) == actual);
}

TEST_CASE("fusion shares donor trunks and reproduces tap outputs bitwise") {
  auto desk = ScaleSpec::desk();
  auto fin = build_fin<float>(desk.epoch_len, desk, 100);
  auto n1 = build_n1_detector<float>(desk, 200);

  Rng rng(5);
  auto xs = rand_tensor({2, desk.epoch_len, 1}, rng, 0.f, 1.f);
  auto xt = rand_tensor({2, desk.windows, desk.freq_bins, desk.window_len, 1}, rng, 0.f, 1.f);

  auto tap_fin_before = fin->forward(xs, false).features;
  auto tap_n1_before = n1->forward(xt, false).features;

  auto fused = fuse_sleepnet(fin, n1, 300);
  CHECK(fused->fin_trunk() == fin->trunk());
  CHECK(fused->n1_trunk() == n1->trunk());

  auto tap_fin_after = fused->fin_trunk()->forward(xs, false);
  auto tap_n1_after = fused->n1_trunk()->forward(xt, false);
  for (std::size_t i = 0; i < tap_fin_before.values().size(); ++i) {
    CHECK(tap_fin_before.values()[i] == tap_fin_after.values()[i]);
  }
  for (std::size_t i = 0; i < tap_n1_before.values().size(); ++i) {
    CHECK(tap_n1_before.values()[i] == tap_n1_after.values()[i]);
  }

  auto probs = fused->forward(xs, xt, false);
  CHECK(probs.shape() == Shape{2, 5});
  for (int n = 0; n < 2; ++n) {
    float sum = 0.f;
    for (int c = 0; c < 5; ++c) sum += probs.values()[static_cast<std::size_t>(n * 5 + c)];
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
  }

  // Donor head parameters are excluded from the fused parameter map.
  for (const auto& p : fused->params()) {
    CHECK(p.name.find("head") == std::string::npos);
  }
}

TEST_CASE("fusion rejects donors built at different scales") {
  auto fin = build_fin<float>(750, ScaleSpec::desk(), 1);
  auto n1 = build_n1_detector<float>(ScaleSpec::paper(), 1);
  CHECK_THROWS_WITH_AS(fuse_sleepnet(fin, n1, 1), doctest::Contains("scale"), Error);
}

TEST_CASE("mlp head swap keeps the interface and shrinks the head") {
  auto desk = ScaleSpec::desk();
  auto fin = build_fin<float>(desk.epoch_len, desk, 1);
  auto n1 = build_n1_detector<float>(desk, 2);
  auto kan = fuse_sleepnet(fin, n1, 3, HeadKind::Kan);
  auto mlp = swap_head_mlp(*kan, 4);

  CHECK(mlp->fin_trunk() == kan->fin_trunk());
  CHECK(mlp->head_kind() == HeadKind::Mlp);
  CHECK(mlp->head_param_count() < kan->head_param_count());

  Rng rng(6);
  auto xs = rand_tensor({1, desk.epoch_len, 1}, rng, 0.f, 1.f);
  auto xt = rand_tensor({1, desk.windows, desk.freq_bins, desk.window_len, 1}, rng, 0.f, 1.f);
  CHECK(mlp->forward(xs, xt, false).shape() == Shape{1, 5});

  // KAN head parameter formula: each layer carries (1 + grid + order) = 9
  // values per edge.
  const std::int64_t in = 2 * desk.ltc_units();
  CHECK(kan->head_param_count() ==
        9 * (in * desk.kan1() + desk.kan1() * desk.kan2() + desk.kan2() * 5));
}

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise") {
  auto desk = ScaleSpec::desk();
  auto dir = temp_dir("ckpt");
  auto fin = build_fin<float>(512, desk, 77);
  Rng rng(7);
  auto x = rand_tensor({2, 512, 1}, rng, 0.f, 1.f);
  auto before = fin->forward(x, false);

  train::save_checkpoint(dir / "fin.ckpt", fin->topology_json(), fin->params(), nullptr, 3, 0.5);

  auto rebuilt = build_fin<float>(512, desk, 999);  // different random init
  auto ckpt = train::load_checkpoint(dir / "fin.ckpt");
  CHECK(ckpt.epoch == 3);
  CHECK(ckpt.topology_json == rebuilt->topology_json());
  ckpt.apply_to(rebuilt->params());
  CHECK(train::params_digest(rebuilt->params()) == train::params_digest(fin->params()));

  auto after = rebuilt->forward(x, false);
  for (std::size_t i = 0; i < before.kurtosis.values().size(); ++i) {
    CHECK(before.kurtosis.values()[i] == after.kurtosis.values()[i]);
    CHECK(before.skewness.values()[i] == after.skewness.values()[i]);
  }

  // Donor checkpoints then fusion reproduce tap outputs exactly.
  auto n1 = build_n1_detector<float>(desk, 88);
  auto fused = fuse_sleepnet(rebuilt, n1, 1);
  auto tap = fused->fin_trunk()->forward(x, false);
  for (std::size_t i = 0; i < tap.values().size(); ++i) {
    CHECK(tap.values()[i] == before.features.values()[i]);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("model summaries list parameters and totals") {
  auto desk = ScaleSpec::desk();
  auto fin = build_fin<float>(512, desk, 1);
  auto text = fin->summary();
  CHECK(text.find("trainable parameters:") != std::string::npos);
  CHECK(text.find("trunk.ltc.w") != std::string::npos);
}
