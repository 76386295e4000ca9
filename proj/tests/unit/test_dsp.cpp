#include <doctest.h>

#include <cmath>
#include <complex>

#include "sleepnet/common.hpp"
#include "sleepnet/dsp.hpp"

using namespace sleepnet;
using namespace sleepnet::dsp;

namespace {

// Independent moment oracle from raw power sums; deliberately a different
// route than the two-pass implementation under test.
struct RawMoments {
  double skew, kurt;
};
RawMoments raw_sum_moments(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  for (double v : x) {
    s1 += v;
    s2 += v * v;
    s3 += v * v * v;
    s4 += v * v * v * v;
  }
  const double mu = s1 / n;
  const double m2 = s2 / n - mu * mu;
  const double m3 = s3 / n - 3.0 * mu * s2 / n + 2.0 * mu * mu * mu;
  const double m4 = s4 / n - 4.0 * mu * s3 / n + 6.0 * mu * mu * s2 / n - 3.0 * mu * mu * mu * mu;
  return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0};
}

// Naive DFT peak (in Hz) for resampling checks.
double dft_peak_hz(const Signal& s) {
  const auto n = static_cast<std::int64_t>(s.samples.size());
  double best_mag = -1.0;
  std::int64_t best_k = 0;
  for (std::int64_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc(0, 0);
    for (std::int64_t t = 0; t < n; ++t) {
      const double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(k * t) / static_cast<double>(n);
      acc += s.samples[static_cast<std::size_t>(t)] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best_k = k;
    }
  }
  return static_cast<double>(best_k) * s.sample_rate_hz / static_cast<double>(n);
}

Signal tone(double freq_hz, double fs, std::int64_t n) {
  Signal s;
  s.sample_rate_hz = fs;
  s.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    s.samples[static_cast<std::size_t>(i)] =
        std::sin(2.0 * 3.14159265358979323846 * freq_hz * static_cast<double>(i) / fs);
  }
  return s;
}

}  // namespace

TEST_CASE("moment fixed points") {
  CHECK(skewness({-1.0, 0.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(skewness({0.0, 0.0, 0.0, 1.0}) == doctest::Approx(2.0 / std::sqrt(3.0)).epsilon(1e-12));

  std::vector<double> alternating;
  for (int i = 0; i < 100; ++i) alternating.push_back(i % 2 == 0 ? 1.0 : -1.0);
  CHECK(kurtosis(alternating) == doctest::Approx(-2.0).epsilon(1e-12));

  CHECK_THROWS_AS(skewness({1.0, 1.0, 1.0}), NumericError);
  CHECK_THROWS_AS(kurtosis({2.0, 2.0}), NumericError);
}

TEST_CASE("moment symmetries") {
  Rng rng(17);
  std::vector<double> x(500);
  for (auto& v : x) v = rng.uniform(-2.0, 3.0);

  std::vector<double> neg(x.size()), affine(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    neg[i] = -x[i];
    affine[i] = 2.5 * x[i] - 7.0;
  }
  CHECK(skewness(neg) == doctest::Approx(-skewness(x)).epsilon(1e-9));
  CHECK(skewness(affine) == doctest::Approx(skewness(x)).epsilon(1e-9));
  CHECK(kurtosis(affine) == doctest::Approx(kurtosis(x)).epsilon(1e-9));
}

TEST_CASE("moments agree with the raw-sums oracle") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const auto len = static_cast<std::int64_t>(2 + rng.index(1000));
    std::vector<double> x(static_cast<std::size_t>(len));
    for (auto& v : x) v = rng.uniform(-3.0, 3.0);
    if (len == 2 && x[0] == x[1]) x[1] += 1.0;
    const auto oracle = raw_sum_moments(x);
    CHECK(skewness(x) == doctest::Approx(oracle.skew).epsilon(1e-9));
    CHECK(kurtosis(x) == doctest::Approx(oracle.kurt).epsilon(1e-9));
  }
}

TEST_CASE("uniform noise has excess kurtosis near -1.2") {
  auto s = synth_signal(SynthKind::UniformNoise, 3000, 42);
  CHECK(kurtosis(s) == doctest::Approx(-1.2).epsilon(0.2 / 1.2));
}

TEST_CASE("synthesis is deterministic per seed") {
  for (auto kind : {SynthKind::Chirp, SynthKind::Step, SynthKind::UniformNoise}) {
    auto a = synth_signal(kind, 512, 7);
    auto b = synth_signal(kind, 512, 7);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i] == b.samples[i]);
    auto c = synth_signal(kind, 512, 8);
    bool differs = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) differs = differs || a.samples[i] != c.samples[i];
    CHECK(differs);
  }
  CHECK_THROWS_AS(synth_signal(SynthKind::Chirp, 1, 1), Error);
}

TEST_CASE("synthetic signals are never constant") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (auto kind : {SynthKind::Chirp, SynthKind::Step, SynthKind::UniformNoise}) {
      auto s = synth_signal(kind, 256, seed);
      CHECK_NOTHROW(skewness(s));
    }
  }
}

TEST_CASE("resample 250 Hz to 100 Hz: 7500 samples become 3000") {
  Rng rng(5);
  Signal s;
  s.sample_rate_hz = 250.0;
  s.samples.resize(7500);
  for (auto& v : s.samples) v = rng.uniform(-1.0, 1.0);
  auto r = resample(s, 100.0);
  CHECK(r.samples.size() == 3000);
  CHECK(r.sample_rate_hz == doctest::Approx(100.0));
}

TEST_CASE("resample identity and tone preservation") {
  auto s = tone(5.0, 250.0, 2500);
  auto same = resample(s, 250.0);
  REQUIRE(same.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i) CHECK(same.samples[i] == s.samples[i]);

  auto r = resample(s, 100.0);
  CHECK(r.samples.size() == 1000);
  CHECK(dft_peak_hz(r) == doctest::Approx(5.0).epsilon(0.02));
}

TEST_CASE("resample rejects irrational ratios") {
  Signal s;
  s.sample_rate_hz = 250.0;
  s.samples.assign(100, 0.5);
  CHECK_THROWS_WITH_AS(resample(s, 100.0 * 3.14159265358979), doctest::Contains("supported"),
                       Error);
}

TEST_CASE("minmax normalization") {
  Signal s;
  s.sample_rate_hz = 100.0;
  s.samples = {2.0, 4.0, 6.0};
  auto n = minmax_normalize(s);
  CHECK(n.samples[0] == doctest::Approx(0.0));
  CHECK(n.samples[1] == doctest::Approx(0.5));
  CHECK(n.samples[2] == doctest::Approx(1.0));

  auto again = minmax_normalize(n);
  for (std::size_t i = 0; i < n.samples.size(); ++i) {
    CHECK(again.samples[i] == doctest::Approx(n.samples[i]).epsilon(1e-12));
  }

  s.samples = {3.0, 3.0, 3.0};
  CHECK_THROWS_AS(minmax_normalize(s), NumericError);
}

TEST_CASE("window_epoch zero-pads the sixth window") {
  Rng rng(3);
  Signal s;
  s.sample_rate_hz = 100.0;
  s.samples.resize(3000);
  for (auto& v : s.samples) v = rng.uniform(-1.0, 1.0);

  auto wins = window_epoch(s);
  REQUIRE(wins.size() == 6);
  for (const auto& w : wins) REQUIRE(w.samples.size() == 512);

  // Windows 1..5 reproduce samples [0,2560); window 6 holds the tail plus 72 zeros.
  std::vector<double> stitched;
  for (const auto& w : wins) stitched.insert(stitched.end(), w.samples.begin(), w.samples.end());
  for (std::size_t i = 0; i < 3000; ++i) CHECK(stitched[i] == s.samples[i]);
  for (std::size_t i = 3000; i < stitched.size(); ++i) CHECK(stitched[i] == 0.0);

  s.samples.resize(2999);
  CHECK_THROWS_AS(window_epoch(s), Error);
}
