#include "sleepnet/sst.hpp"

#include <algorithm>
#include <cmath>

namespace sleepnet::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

std::int64_t next_pow2(std::int64_t n) {
  std::int64_t p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const auto n = static_cast<std::int64_t>(a.size());
  if (!is_pow2(n)) throw Error("fft: length must be a power of two, got " + std::to_string(n));
  // Bit-reversal permutation.
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
  }
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::int64_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::int64_t k = 0; k < len / 2; ++k) {
        const auto u = a[static_cast<std::size_t>(i + k)];
        const auto v = a[static_cast<std::size_t>(i + k + len / 2)] * w;
        a[static_cast<std::size_t>(i + k)] = u + v;
        a[static_cast<std::size_t>(i + k + len / 2)] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= inv;
  }
}

CwtResult cwt_morlet(const Signal& window, const SstConfig& cfg) {
  const auto n = static_cast<std::int64_t>(window.samples.size());
  if (n < 4) throw Error("cwt: window too short");
  if (window.sample_rate_hz <= 0.0) throw Error("cwt: sample rate not set");
  const double fs = window.sample_rate_hz;
  const double f_hi = cfg.freq_hi_frac * fs;
  if (cfg.freq_lo_hz <= 0.0 || f_hi <= cfg.freq_lo_hz) {
    throw Error("cwt: bad frequency range");
  }

  // Reflect padding to at least twice the window kills the circular-edge
  // artifacts of FFT-based convolution.
  const std::int64_t padded = next_pow2(2 * n);
  const std::int64_t left = (padded - n) / 2;
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(padded));
  for (std::int64_t i = 0; i < padded; ++i) {
    std::int64_t src = i - left;
    // Reflect into [0, n-1].
    while (src < 0 || src >= n) {
      if (src < 0) src = -src;
      if (src >= n) src = 2 * (n - 1) - src;
      if (n == 1) src = 0;
    }
    spec[static_cast<std::size_t>(i)] = window.samples[static_cast<std::size_t>(src)];
  }
  fft(spec, false);

  CwtResult out;
  out.scales = cfg.freq_bins;
  out.time_len = n;
  out.center_freq_hz.resize(static_cast<std::size_t>(cfg.freq_bins));
  const double log_lo = std::log(cfg.freq_lo_hz);
  const double log_hi = std::log(f_hi);
  for (int b = 0; b < cfg.freq_bins; ++b) {
    const double t = cfg.freq_bins == 1 ? 0.0
                                        : static_cast<double>(b) / static_cast<double>(cfg.freq_bins - 1);
    out.center_freq_hz[static_cast<std::size_t>(b)] = std::exp(log_lo + t * (log_hi - log_lo));
  }

  out.w.resize(static_cast<std::size_t>(cfg.freq_bins) * static_cast<std::size_t>(n));
  out.dw.resize(out.w.size());

  const double mu = cfg.morlet_mu;
  const double norm = std::pow(kPi, -0.25);
  std::vector<std::complex<double>> row(static_cast<std::size_t>(padded));
  std::vector<std::complex<double>> drow(static_cast<std::size_t>(padded));
  for (int b = 0; b < cfg.freq_bins; ++b) {
    const double fc = out.center_freq_hz[static_cast<std::size_t>(b)];
    const double scale = mu * fs / (kTwoPi * fc);  // samples; peak of psi_hat at fc
    for (std::int64_t k = 0; k < padded; ++k) {
      // Analytic wavelet: support only on positive frequencies.
      if (k == 0 || k > padded / 2) {
        row[static_cast<std::size_t>(k)] = 0.0;
        drow[static_cast<std::size_t>(k)] = 0.0;
        continue;
      }
      const double xi = kTwoPi * static_cast<double>(k) / static_cast<double>(padded);  // rad/sample
      const double arg = scale * xi - mu;
      const double psi = norm * std::exp(-0.5 * arg * arg);
      const auto filt = spec[static_cast<std::size_t>(k)] * psi;
      row[static_cast<std::size_t>(k)] = filt;
      // d/dt in physical time: multiply by i*xi*fs (rad/sec).
      drow[static_cast<std::size_t>(k)] = filt * std::complex<double>(0.0, xi * fs);
    }
    fft(row, true);
    fft(drow, true);
    for (std::int64_t t = 0; t < n; ++t) {
      out.w[static_cast<std::size_t>(b * n + t)] = row[static_cast<std::size_t>(left + t)];
      out.dw[static_cast<std::size_t>(b * n + t)] = drow[static_cast<std::size_t>(left + t)];
    }
  }
  return out;
}

Tfr sst(const Signal& window, const SstConfig& cfg) {
  const auto n = static_cast<std::int64_t>(window.samples.size());
  CwtResult cwt = cwt_morlet(window, cfg);

  Tfr tfr;
  tfr.freq_bins = cfg.freq_bins;
  tfr.time_len = n;
  tfr.freq_axis_hz = cwt.center_freq_hz;
  tfr.magnitudes.assign(static_cast<std::size_t>(cfg.freq_bins) * static_cast<std::size_t>(n), 0.0f);

  std::vector<double> energy(tfr.magnitudes.size(), 0.0);
  const double gamma = cfg.magnitude_threshold;
  const double log_lo = std::log(tfr.freq_axis_hz.front());
  const double log_hi = std::log(tfr.freq_axis_hz.back());
  const double inv_step =
      cfg.freq_bins == 1 ? 0.0 : static_cast<double>(cfg.freq_bins - 1) / (log_hi - log_lo);

  for (std::int64_t s = 0; s < cwt.scales; ++s) {
    for (std::int64_t t = 0; t < n; ++t) {
      const auto w = cwt.w[static_cast<std::size_t>(s * n + t)];
      const double mag2 = std::norm(w);
      const double mag = std::sqrt(mag2);
      if (mag <= gamma) continue;
      const auto dw = cwt.dw[static_cast<std::size_t>(s * n + t)];
      // omega = Im(dW / W) / (2*pi), in Hz.
      const double omega = (dw.imag() * w.real() - dw.real() * w.imag()) / (mag2 * kTwoPi);
      if (!(omega > 0.0)) continue;
      std::int64_t bin = static_cast<std::int64_t>(
          std::llround((std::log(omega) - log_lo) * inv_step));
      bin = std::min<std::int64_t>(std::max<std::int64_t>(bin, 0), cfg.freq_bins - 1);
      energy[static_cast<std::size_t>(bin * n + t)] += mag2;
    }
  }
  for (std::size_t i = 0; i < energy.size(); ++i) {
    tfr.magnitudes[i] = static_cast<float>(std::sqrt(energy[i]));
  }
  return tfr;
}

double tfr_energy(const Tfr& tfr) {
  double e = 0.0;
  for (float m : tfr.magnitudes) e += static_cast<double>(m) * static_cast<double>(m);
  return e;
}

}  // namespace sleepnet::dsp
