#include "sleepnet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sleepnet::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct CentralMoments {
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
};

CentralMoments central_moments(const std::vector<double>& x) {
  if (x.size() < 2) throw Error("moments: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("moments: non-finite sample");
    mean += v;
  }
  mean /= n;
  CentralMoments m;
  for (double v : x) {
    const double d = v - mean;
    const double d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  return m;
}

double bessel_i0(double x) {
  // Power series; converges quickly for the beta values used here.
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// Reduces `ratio` to a fraction p/q with q <= max_den via continued fractions.
bool rationalize(double ratio, std::int64_t max_den, std::int64_t& p, std::int64_t& q) {
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = ratio;
  for (int it = 0; it < 64; ++it) {
    const double fa = std::floor(x);
    const auto a = static_cast<std::int64_t>(fa);
    std::int64_t p2 = a * p1 + p0;
    std::int64_t q2 = a * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    const double frac = x - fa;
    if (frac < 1e-12) break;
    x = 1.0 / frac;
  }
  p = p1;
  q = q1;
  const std::int64_t g = std::gcd(p, q);
  if (g > 1) { p /= g; q /= g; }
  return q >= 1 && std::abs(ratio - static_cast<double>(p) / static_cast<double>(q)) <=
                       1e-9 * std::max(1.0, ratio);
}

}  // namespace

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "chirp") return SynthKind::Chirp;
  if (s == "step") return SynthKind::Step;
  if (s == "uniform_noise" || s == "noise") return SynthKind::UniformNoise;
  throw Error("unknown synthetic signal kind: " + s +
              " (expected chirp|step|uniform_noise)");
}

Signal synth_signal(SynthKind kind, std::int64_t length, std::uint64_t seed,
                    const SynthParams& params) {
  if (length < 2) throw Error("synth_signal: length must be >= 2");
  Rng rng(splitmix64(seed ^ 0x5e5f5a5b5c5d5e5fULL));
  Signal out;
  out.sample_rate_hz = params.sample_rate_hz;
  out.samples.resize(static_cast<std::size_t>(length));
  const double fs = params.sample_rate_hz;

  for (int attempt = 0; attempt < 16; ++attempt) {
    switch (kind) {
      case SynthKind::Chirp: {
        const double f_hi = params.freq_hi_frac * fs;
        const double f0 = rng.uniform(params.freq_lo, f_hi);
        const double f1 = rng.uniform(params.freq_lo, f_hi);
        const double amp = rng.uniform(0.5, 1.5);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double dur = static_cast<double>(length) / fs;
        const double slope = (f1 - f0) / dur;
        for (std::int64_t i = 0; i < length; ++i) {
          const double t = static_cast<double>(i) / fs;
          out.samples[static_cast<std::size_t>(i)] =
              amp * std::sin(phase + 2.0 * kPi * (f0 * t + 0.5 * slope * t * t));
        }
        break;
      }
      case SynthKind::Step: {
        const int levels = params.min_levels +
                           static_cast<int>(rng.index(
                               static_cast<std::uint64_t>(params.max_levels - params.min_levels + 1)));
        // Random segment boundaries, each segment at least one sample.
        std::vector<std::int64_t> cuts{0, length};
        for (int c = 0; c < levels - 1; ++c) {
          cuts.push_back(1 + static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(length - 1))));
        }
        std::sort(cuts.begin(), cuts.end());
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
          if (cuts[c + 1] == cuts[c]) continue;
          const double level = rng.uniform(params.level_lo, params.level_hi);
          for (std::int64_t i = cuts[c]; i < cuts[c + 1]; ++i) {
            out.samples[static_cast<std::size_t>(i)] = level;
          }
        }
        break;
      }
      case SynthKind::UniformNoise: {
        double a = rng.uniform(params.noise_lo, params.noise_hi);
        double b = rng.uniform(params.noise_lo, params.noise_hi);
        if (a > b) std::swap(a, b);
        if (b - a < 1e-3) b = a + 1e-3;
        for (auto& v : out.samples) v = rng.uniform(a, b);
        break;
      }
    }
    // Degenerate draws (e.g. a step signal whose segments collapsed onto one
    // level) are resampled so downstream moment computation stays defined.
    const auto [mn, mx] = std::minmax_element(out.samples.begin(), out.samples.end());
    if (*mx - *mn > 1e-9) return out;
  }
  throw NumericError("synth_signal: could not produce a non-constant signal");
}

double skewness(const std::vector<double>& samples) {
  const auto m = central_moments(samples);
  if (m.m2 <= 0.0) throw NumericError("skewness: zero variance");
  return m.m3 / std::pow(m.m2, 1.5);
}

double skewness(const Signal& s) { return skewness(s.samples); }

double kurtosis(const std::vector<double>& samples) {
  const auto m = central_moments(samples);
  if (m.m2 <= 0.0) throw NumericError("kurtosis: zero variance");
  return m.m4 / (m.m2 * m.m2) - 3.0;
}

double kurtosis(const Signal& s) { return kurtosis(s.samples); }

Signal resample(const Signal& s, double target_hz) {
  if (s.sample_rate_hz <= 0.0 || target_hz <= 0.0) {
    throw Error("resample: sample rates must be positive");
  }
  if (s.samples.empty()) throw Error("resample: empty signal");
  if (std::abs(target_hz - s.sample_rate_hz) < 1e-12) return s;

  const double ratio = target_hz / s.sample_rate_hz;
  std::int64_t up = 0, down = 0;
  if (!rationalize(ratio, 1000, up, down) || up <= 0) {
    throw Error("resample: ratio " + format_double(ratio) +
                " is not a small rational; supported ratios are p/q with q <= 1000");
  }

  // Kaiser-windowed sinc low-pass at 0.9x the lower Nyquist, designed at the
  // upsampled rate.
  const double fs_up = s.sample_rate_hz * static_cast<double>(up);
  const double cutoff_hz = 0.9 * 0.5 * std::min(s.sample_rate_hz, target_hz);
  const double fc = cutoff_hz / fs_up;  // cycles per upsampled sample
  const auto half = static_cast<std::int64_t>(10 * std::max(up, down));
  const std::int64_t taps = 2 * half + 1;
  const double beta = 8.6;
  std::vector<double> h(static_cast<std::size_t>(taps));
  const double i0b = bessel_i0(beta);
  for (std::int64_t k = 0; k < taps; ++k) {
    const double t = static_cast<double>(k - half);
    const double x = 2.0 * kPi * fc * t;
    const double sinc = (std::abs(x) < 1e-12) ? 1.0 : std::sin(x) / x;
    const double r = t / static_cast<double>(half);
    const double win = bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[static_cast<std::size_t>(k)] = 2.0 * fc * sinc * win * static_cast<double>(up);
  }

  const auto in_len = static_cast<std::int64_t>(s.samples.size());
  const auto out_len = static_cast<std::int64_t>(
      std::llround(static_cast<double>(in_len) * ratio));
  Signal out;
  out.sample_rate_hz = target_hz;
  out.samples.assign(static_cast<std::size_t>(out_len), 0.0);
  // y[j] = sum_k h[k] * x_up[j*down + half - k], where x_up is the zero-stuffed
  // input; only every `up`-th tap hits a real sample.
  for (std::int64_t j = 0; j < out_len; ++j) {
    const std::int64_t center = j * down + half;
    double acc = 0.0;
    // k must satisfy (center - k) % up == 0.
    std::int64_t k0 = center % up;
    for (std::int64_t k = k0; k < taps; k += up) {
      const std::int64_t iu = center - k;
      const std::int64_t i = iu / up;
      if (i < 0 || i >= in_len) continue;
      acc += h[static_cast<std::size_t>(k)] * s.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

Signal minmax_normalize(const Signal& s) {
  const auto [mn, mx] = std::minmax_element(s.samples.begin(), s.samples.end());
  if (!(*mx > *mn)) throw NumericError("minmax_normalize: constant signal");
  Signal out;
  out.sample_rate_hz = s.sample_rate_hz;
  out.samples.resize(s.samples.size());
  const double inv = 1.0 / (*mx - *mn);
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    out.samples[i] = (s.samples[i] - *mn) * inv;
  }
  return out;
}

std::vector<float> minmax_normalize(const std::vector<float>& v) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  if (!(*mx > *mn)) throw NumericError("minmax_normalize: constant signal");
  std::vector<float> out(v.size());
  const float inv = 1.0f / (*mx - *mn);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *mn) * inv;
  return out;
}

std::vector<Signal> window_signal(const Signal& s, std::int64_t window_len, int count) {
  const auto len = static_cast<std::int64_t>(s.samples.size());
  if (len <= (count - 1) * window_len || len > count * window_len) {
    throw Error("window_signal: length " + std::to_string(len) + " incompatible with " +
                std::to_string(count) + " windows of " + std::to_string(window_len));
  }
  std::vector<Signal> out(static_cast<std::size_t>(count));
  for (int w = 0; w < count; ++w) {
    auto& win = out[static_cast<std::size_t>(w)];
    win.sample_rate_hz = s.sample_rate_hz;
    win.samples.assign(static_cast<std::size_t>(window_len), 0.0);
    const std::int64_t start = static_cast<std::int64_t>(w) * window_len;
    const std::int64_t stop = std::min(start + window_len, len);
    for (std::int64_t i = start; i < stop; ++i) {
      win.samples[static_cast<std::size_t>(i - start)] = s.samples[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

std::vector<Signal> window_epoch(const Signal& s) {
  if (s.samples.size() != 3000) {
    throw Error("window_epoch: expected exactly 3000 samples, got " +
                std::to_string(s.samples.size()));
  }
  return window_signal(s, 512, 6);
}

}  // namespace sleepnet::dsp
