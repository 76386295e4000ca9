#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet::dsp {

struct Signal {
  std::vector<double> samples;
  double sample_rate_hz = 0.0;
};

enum class SynthKind { Chirp, Step, UniformNoise };

SynthKind synth_kind_from_string(const std::string& s);

// Parameter ranges for synthetic training signals. The defaults span
// skewness roughly [-2,2] and excess kurtosis roughly [-2,6].
struct SynthParams {
  double sample_rate_hz = 100.0;
  // Chirp: f0,f1 drawn in (freq_lo, freq_hi_frac * fs) Hz.
  double freq_lo = 0.5;
  double freq_hi_frac = 0.45;
  // Step: 2..6 levels drawn in [level_lo, level_hi].
  int min_levels = 2;
  int max_levels = 6;
  double level_lo = -2.0;
  double level_hi = 2.0;
  // Noise: iid U(a,b), a<b drawn in [noise_lo, noise_hi].
  double noise_lo = -3.0;
  double noise_hi = 3.0;
};

// Deterministic per (kind, length, seed, params).
Signal synth_signal(SynthKind kind, std::int64_t length, std::uint64_t seed,
                    const SynthParams& params = {});

// Biased Fisher-Pearson skewness m3 / m2^{3/2}. Throws on zero variance.
double skewness(const Signal& s);
double skewness(const std::vector<double>& samples);

// Excess kurtosis m4 / m2^2 - 3 (biased). Throws on zero variance.
double kurtosis(const Signal& s);
double kurtosis(const std::vector<double>& samples);

// Polyphase rational resampler (Kaiser-windowed low-pass FIR with cutoff at
// 0.9x the lower Nyquist). Output length = round(len * target / source).
Signal resample(const Signal& s, double target_hz);

// Affine map onto [0,1]. Throws on constant input.
Signal minmax_normalize(const Signal& s);
std::vector<float> minmax_normalize(const std::vector<float>& v);

// Splits `s` into `count` windows of `window_len`, zero-padding the tail.
// Requires (count-1)*window_len < len(s) <= count*window_len.
std::vector<Signal> window_signal(const Signal& s, std::int64_t window_len, int count);

// The 30-second epoch contract: 3000 samples -> 6 windows of 512 (the last
// window carries 72 trailing zeros).
std::vector<Signal> window_epoch(const Signal& s);

}  // namespace sleepnet::dsp
