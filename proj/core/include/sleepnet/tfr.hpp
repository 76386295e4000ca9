#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "sleepnet/dataset.hpp"
#include "sleepnet/sst.hpp"

namespace sleepnet::data {

// Geometry of the per-epoch TFR stack fed to the N1 encoder.
struct TfrParams {
  std::int64_t window_len = 512;
  int windows = 6;
  int freq_bins = 256;
  double sample_rate_hz = 100.0;

  std::int64_t stack_size() const {
    return static_cast<std::int64_t>(windows) * freq_bins * window_len;
  }
  dsp::SstConfig sst_config() const {
    dsp::SstConfig cfg;
    cfg.freq_bins = freq_bins;
    return cfg;
  }
  std::vector<double> freq_axis_hz() const;
};

// window -> SST -> per-window min-max to [0,1] (all-zero windows stay zero).
// Output layout: [window][freq][time], row-major.
std::vector<float> compute_tfr_stack(const std::vector<float>& signal, const TfrParams& p);

// Deterministic parallel batch computation: records are partitioned by index,
// so the result is independent of thread scheduling.
std::vector<float> compute_tfr_batch(const Dataset& ds, const TfrParams& p, int threads);

// ---------------------------------------------------------------------------
// Disk store: raw float32 little-endian blob plus a plain-text sidecar
// manifest carrying the shape and the frequency axis.
// ---------------------------------------------------------------------------

struct TfrStoreMeta {
  std::int64_t n_records = 0;
  TfrParams params;
  std::vector<double> freq_axis_hz;
};

std::filesystem::path write_tfr_store(const std::filesystem::path& dir, const std::string& name,
                                      const TfrStoreMeta& meta, const std::vector<float>& blob);

// Random-access reads over a stored blob; one record's stack per call.
class TfrReader {
 public:
  explicit TfrReader(const std::filesystem::path& manifest_path);
  const TfrStoreMeta& meta() const { return meta_; }
  void read(std::int64_t record, float* out) const;

 private:
  TfrStoreMeta meta_;
  std::filesystem::path blob_path_;
};

// ---------------------------------------------------------------------------
// Uniform access for training: either an in-memory batch (computed on the
// fly) or a file-backed store.
// ---------------------------------------------------------------------------

class TfrSource {
 public:
  virtual ~TfrSource() = default;
  virtual std::int64_t count() const = 0;
  virtual const TfrParams& params() const = 0;
  // Pointer valid until the next stack() call on the same source.
  virtual const float* stack(std::int64_t record) = 0;
};

std::unique_ptr<TfrSource> make_memory_tfr_source(const Dataset& ds, const TfrParams& p,
                                                  int threads);
std::unique_ptr<TfrSource> make_file_tfr_source(const std::filesystem::path& manifest_path);

}  // namespace sleepnet::data
