#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "sleepnet/dsp.hpp"

namespace sleepnet::dsp {

// Magnitude time-frequency representation: freq_bins x time, row-major with
// frequency as the major axis. Frequencies ascend.
struct Tfr {
  std::int64_t freq_bins = 0;
  std::int64_t time_len = 0;
  std::vector<float> magnitudes;  // freq_bins * time_len, >= 0
  std::vector<double> freq_axis_hz;

  float at(std::int64_t f, std::int64_t t) const {
    return magnitudes[static_cast<std::size_t>(f * time_len + t)];
  }
};

struct SstConfig {
  int freq_bins = 256;
  double freq_lo_hz = 0.2;
  double freq_hi_frac = 0.45;  // upper edge as a fraction of the sample rate
  double morlet_mu = 6.0;
  double magnitude_threshold = 1e-8;
};

// In-place iterative radix-2 FFT (inverse divides by n). n must be a power
// of two.
void fft(std::vector<std::complex<double>>& a, bool inverse);

// Continuous wavelet transform with an analytic Morlet wavelet over
// log-spaced scales matching the SST frequency grid. Returns W and dW/dt
// (rows = scales, ascending center frequency), computed on a reflect-padded
// copy of the signal and cropped back to the original length.
struct CwtResult {
  std::int64_t scales = 0;
  std::int64_t time_len = 0;
  std::vector<std::complex<double>> w;   // scales x time
  std::vector<std::complex<double>> dw;  // time derivative, same layout
  std::vector<double> center_freq_hz;    // ascending
};
CwtResult cwt_morlet(const Signal& window, const SstConfig& cfg);

// Synchrosqueezing: coefficients with |W| above the threshold are reassigned
// along frequency to the log-spaced bin nearest their instantaneous-frequency
// estimate Im(dW/W)/(2*pi). Energy (|W|^2) is accumulated per bin so the
// squeezed matrix conserves total CWT energy; magnitudes are the square roots
// of the accumulated energy.
Tfr sst(const Signal& window, const SstConfig& cfg = {});

// Total energy helpers used by the localization and conservation checks.
double tfr_energy(const Tfr& tfr);

}  // namespace sleepnet::dsp
